#pragma once

#include "core.hpp"
#include "grid_measure.hpp"
#include "secdiff.hpp"
#include "stable_law.hpp"
#include "interp.hpp"
#include "profile_solver.hpp"
#include "regularized_evolution.hpp"
#include "relax.hpp"
#include "selfsimilar_solution.hpp"
#include "diagnostics.hpp"
#include "config.hpp"
#include "io.hpp"
