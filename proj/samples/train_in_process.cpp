// Library use without the CLI: generate data, train the miniature model on
// the bone stream, report accuracy and the parameter breakdown.

#include <cstdio>

#include "slr/runtime.hpp"
#include "slr/slr.hpp"

int main() {
  slr::configure_allocator();

  slr::SyntheticSpec spec;
  spec.num_classes = 5;
  spec.samples_per_class = 10;
  const auto data = slr::generate_synthetic(spec);

  slr::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr_decay_epochs = slr::default_lr_milestones(cfg.epochs);
  cfg.batch_size = 16;
  cfg.stream = slr::StreamKind::Bone;

  auto ck = slr::train(data.split(slr::Split::Train), data.split(slr::Split::Val), slr::ModelConfig::miniature(5), cfg,
                       [](const slr::EpochRecord& r) {
                         if (r.split == "train" && (r.epoch + 1) % 10 == 0)
                           std::printf("epoch %zu loss %.4f top-1 %.3f\n", r.epoch + 1, r.loss, r.top1);
                       });

  const auto test = slr::evaluate(ck, data.split(slr::Split::Test));
  std::printf("test P-I %.3f P-C %.3f\n", test.per_instance_accuracy, test.per_class_accuracy);
  for (const auto& [name, n] : ck.model.param_breakdown()) std::printf("%-14s %zu\n", name.c_str(), n);
}
