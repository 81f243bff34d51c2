#pragma once

// Continuity-based sharp regression discontinuity toolkit: local polynomial
// point estimation, data-driven bandwidth selection, robust bias-corrected
// inference, optimal-bin plots, and a falsification battery.

#include "rdtk/bandwidth.hpp"
#include "rdtk/data.hpp"
#include "rdtk/density.hpp"
#include "rdtk/error.hpp"
#include "rdtk/falsification.hpp"
#include "rdtk/inference.hpp"
#include "rdtk/json_io.hpp"
#include "rdtk/kernels.hpp"
#include "rdtk/local_poly.hpp"
#include "rdtk/mathutil.hpp"
#include "rdtk/rdplot.hpp"
#include "rdtk/simlab.hpp"
#include "rdtk/variance.hpp"
#include "rdtk/version.hpp"
