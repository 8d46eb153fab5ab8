#pragma once

#include "flatmin/error.hpp"
#include "flatmin/experiment.hpp"
#include "flatmin/flow.hpp"
#include "flatmin/geometry.hpp"
#include "flatmin/io.hpp"
#include "flatmin/landscapes.hpp"
#include "flatmin/montecarlo.hpp"
#include "flatmin/objective.hpp"
#include "flatmin/optimizers.hpp"
#include "flatmin/oracle.hpp"
#include "flatmin/rng.hpp"
#include "flatmin/schedule.hpp"
#include "flatmin/types.hpp"
