#pragma once

// Memorization setup shared by the training tests and the acceptance run:
// 5 classes x 4 samples, full batch, deterministic inputs (no noise, no flip,
// crop covering the whole clip) and gradient-norm clipping. Without clipping
// single data seeds spike near the end of the first lr stage.

#include "slr/dataio.hpp"
#include "slr/training.hpp"

namespace recipe {

inline slr::SyntheticDataset overfit_data(std::uint64_t seed = 1) {
  slr::SyntheticSpec spec;
  spec.num_classes = 5;
  spec.samples_per_class = 4;
  spec.seed = seed;
  return slr::generate_synthetic(spec);
}

inline slr::TrainConfig overfit_config() {
  slr::TrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.1;
  cfg.lr_decay_epochs = {100, 150};
  cfg.batch_size = 20;
  cfg.clip_grad_norm = 1.0;
  cfg.noise_max = 0.0;
  cfg.flip_prob = 0.0;
  cfg.crop_length = cfg.canonical_length;
  return cfg;
}

}  // namespace recipe
