#pragma once

#include "meanflow/error.hpp"
#include "meanflow/grid.hpp"
#include "meanflow/interpolate.hpp"
#include "meanflow/snapshot.hpp"
#include "meanflow/functionals.hpp"
#include "meanflow/krylov.hpp"
#include "meanflow/stationary.hpp"
#include "meanflow/flow.hpp"
#include "meanflow/concentration.hpp"
#include "meanflow/generators.hpp"
#include "meanflow/config.hpp"
#include "meanflow/experiment.hpp"
