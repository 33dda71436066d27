#pragma once

#include "data_model.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "fitted_dist.hpp"
#include "links.hpp"
#include "model_spec.hpp"
#include "psr.hpp"
#include "rank_association.hpp"
