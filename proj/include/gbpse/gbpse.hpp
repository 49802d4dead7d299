#pragma once

#include "gbpse/bp.hpp"
#include "gbpse/coarse_grain.hpp"
#include "gbpse/error.hpp"
#include "gbpse/exact.hpp"
#include "gbpse/experiments.hpp"
#include "gbpse/factor_graph.hpp"
#include "gbpse/gaussian.hpp"
#include "gbpse/grid.hpp"
#include "gbpse/parallel.hpp"
#include "gbpse/scenarios.hpp"
