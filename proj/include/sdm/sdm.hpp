#pragma once

#include "sdm/core.hpp"
#include "sdm/csv.hpp"
#include "sdm/grid.hpp"
#include "sdm/models.hpp"
#include "sdm/optimize.hpp"
#include "sdm/divergence.hpp"
#include "sdm/bridge.hpp"
#include "sdm/survey.hpp"
#include "sdm/simulate.hpp"
#include "sdm/parallel.hpp"
#include "sdm/integrated.hpp"
#include "sdm/metrics.hpp"
