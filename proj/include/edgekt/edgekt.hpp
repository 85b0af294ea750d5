#pragma once

// Umbrella header for the full toolkit.

#include "edgekt/archspec.hpp"
#include "edgekt/autograd.hpp"
#include "edgekt/checkpoint.hpp"
#include "edgekt/config.hpp"
#include "edgekt/data.hpp"
#include "edgekt/errors.hpp"
#include "edgekt/fdcheck.hpp"
#include "edgekt/harness.hpp"
#include "edgekt/kt.hpp"
#include "edgekt/model.hpp"
#include "edgekt/ops.hpp"
#include "edgekt/optim.hpp"
#include "edgekt/prune.hpp"
#include "edgekt/rng.hpp"
#include "edgekt/tensor.hpp"
#include "edgekt/train.hpp"
