#pragma once

// Umbrella header: the whole library in one include.

#include "confmask/calibrate.hpp"
#include "confmask/cfm_io.hpp"
#include "confmask/color.hpp"
#include "confmask/experiments.hpp"
#include "confmask/fidelity.hpp"
#include "confmask/kernel.hpp"
#include "confmask/metrics.hpp"
#include "confmask/png_io.hpp"
#include "confmask/raster.hpp"
#include "confmask/record.hpp"
#include "confmask/score.hpp"
#include "confmask/synth.hpp"
#include "confmask/viz.hpp"
