#pragma once

#include "slr/autodiff.hpp"
#include "slr/checkpoint.hpp"
#include "slr/dataio.hpp"
#include "slr/error.hpp"
#include "slr/gradcheck.hpp"
#include "slr/kernels.hpp"
#include "slr/model.hpp"
#include "slr/model_check.hpp"
#include "slr/runtime.hpp"
#include "slr/skeleton.hpp"
#include "slr/streams.hpp"
#include "slr/tensor.hpp"
#include "slr/training.hpp"
