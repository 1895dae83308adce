#pragma once

#include "ics/errors.hpp"
#include "ics/types.hpp"
#include "ics/model.hpp"
#include "ics/lindisc.hpp"
#include "ics/blocks.hpp"
#include "ics/quantile.hpp"
#include "ics/conic/program.hpp"
#include "ics/conic/projection.hpp"
#include "ics/conic/solver.hpp"
#include "ics/problem.hpp"
#include "ics/montecarlo.hpp"
#include "ics/ics.hpp"
#include "ics/io/config.hpp"
#include "ics/io/report.hpp"
#include "ics/io/runner.hpp"
