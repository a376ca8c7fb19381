#pragma once

// Everything needed to set up and solve a problem. The experiment drivers
// (config, io, experiments) live in the mfg_app library and are included
// separately.

#include "mfg/analysis.hpp"
#include "mfg/discrete_ops.hpp"
#include "mfg/functions.hpp"
#include "mfg/grid.hpp"
#include "mfg/linsolve.hpp"
#include "mfg/marchers.hpp"
#include "mfg/multiscale.hpp"
#include "mfg/newton.hpp"
#include "mfg/problem.hpp"
#include "mfg/sweep.hpp"
