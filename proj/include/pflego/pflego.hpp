#pragma once

// Umbrella include for the whole library.

#include "pflego/cli.hpp"
#include "pflego/config.hpp"
#include "pflego/data.hpp"
#include "pflego/errors.hpp"
#include "pflego/fl.hpp"
#include "pflego/gradient_check.hpp"
#include "pflego/idx.hpp"
#include "pflego/matrix.hpp"
#include "pflego/model.hpp"
#include "pflego/nn.hpp"
#include "pflego/optim.hpp"
#include "pflego/orchestrator.hpp"
#include "pflego/param_vector.hpp"
#include "pflego/report.hpp"
#include "pflego/rng.hpp"
