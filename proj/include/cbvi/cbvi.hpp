#pragma once

#include "cbvi/cavi_logit.hpp"
#include "cbvi/cavi_probit.hpp"
#include "cbvi/design.hpp"
#include "cbvi/errors.hpp"
#include "cbvi/fit_types.hpp"
#include "cbvi/model.hpp"
#include "cbvi/parallel.hpp"
#include "cbvi/predict.hpp"
#include "cbvi/rng.hpp"
#include "cbvi/simgen.hpp"
#include "cbvi/special.hpp"
