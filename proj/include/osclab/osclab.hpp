#pragma once

// Umbrella header for the oscillation laboratory: quantizers, a small dense
// network with straight-through training, oscillation analytics, toy-model
// simulators, datasets, and the experiment harness.

#include "osclab/datasets.hpp"
#include "osclab/errors.hpp"
#include "osclab/harness.hpp"
#include "osclab/io.hpp"
#include "osclab/matrix.hpp"
#include "osclab/network.hpp"
#include "osclab/oscillation.hpp"
#include "osclab/quant_train.hpp"
#include "osclab/quantizer.hpp"
#include "osclab/rng.hpp"
#include "osclab/toy_models.hpp"
