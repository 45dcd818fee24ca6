#pragma once

// Umbrella header for the scalelab library.

#include "scalelab/architecture.hpp"
#include "scalelab/data.hpp"
#include "scalelab/errors.hpp"
#include "scalelab/image_io.hpp"
#include "scalelab/layers.hpp"
#include "scalelab/metrics.hpp"
#include "scalelab/model.hpp"
#include "scalelab/optimizer.hpp"
#include "scalelab/runtime.hpp"
#include "scalelab/svg.hpp"
#include "scalelab/tensor.hpp"
