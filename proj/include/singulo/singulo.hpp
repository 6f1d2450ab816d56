#pragma once

#include "singulo/types.hpp"
#include "singulo/signal.hpp"
#include "singulo/linalg.hpp"
#include "singulo/lq_model.hpp"
#include "singulo/desingularization.hpp"
#include "singulo/integrate.hpp"
#include "singulo/reduced_lq.hpp"
#include "singulo/generalized.hpp"
#include "singulo/distribution.hpp"
#include "singulo/estimator.hpp"
#include "singulo/nonlinear.hpp"
#include "singulo/expr.hpp"
#include "singulo/io.hpp"
#include "singulo/pipeline.hpp"
