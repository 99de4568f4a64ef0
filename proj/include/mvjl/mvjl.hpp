#pragma once

#include "mvjl/functional.hpp"
#include "mvjl/generator.hpp"
#include "mvjl/lderiv.hpp"
#include "mvjl/linalg.hpp"
#include "mvjl/measure.hpp"
#include "mvjl/model.hpp"
#include "mvjl/parallel.hpp"
#include "mvjl/report.hpp"
#include "mvjl/rng.hpp"
#include "mvjl/runner.hpp"
#include "mvjl/simulate.hpp"
#include "mvjl/verify.hpp"
