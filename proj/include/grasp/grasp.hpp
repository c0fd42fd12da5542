#pragma once

// Core library: tensors, wavelets, losses, projection, models, the defense
// engine and metrics. Needs nothing beyond the standard library.
// File I/O, the bridge transport and the harness live in their own headers.

#include "grasp/engine.hpp"
#include "grasp/error.hpp"
#include "grasp/filters.hpp"
#include "grasp/image.hpp"
#include "grasp/losses.hpp"
#include "grasp/metrics.hpp"
#include "grasp/models.hpp"
#include "grasp/projection.hpp"
#include "grasp/random.hpp"
#include "grasp/synthetic.hpp"
#include "grasp/wavelet.hpp"
