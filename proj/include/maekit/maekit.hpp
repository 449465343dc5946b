#pragma once

#include "maekit/checkpoint.hpp"
#include "maekit/data.hpp"
#include "maekit/errors.hpp"
#include "maekit/gradcheck.hpp"
#include "maekit/gradcheck_suite.hpp"
#include "maekit/heads.hpp"
#include "maekit/metrics.hpp"
#include "maekit/model.hpp"
#include "maekit/ops.hpp"
#include "maekit/optim.hpp"
#include "maekit/patchwork.hpp"
#include "maekit/pretrain.hpp"
#include "maekit/rng.hpp"
#include "maekit/tensor.hpp"
