#pragma once

#include "criteria.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "harness.hpp"
#include "kalman.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "smc.hpp"
#include "theta.hpp"
