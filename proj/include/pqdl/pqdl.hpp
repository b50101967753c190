#pragma once

#include "pqdl/calib.hpp"
#include "pqdl/codec.hpp"
#include "pqdl/data.hpp"
#include "pqdl/error.hpp"
#include "pqdl/hash.hpp"
#include "pqdl/jobs.hpp"
#include "pqdl/matrix.hpp"
#include "pqdl/nn.hpp"
#include "pqdl/optim.hpp"
#include "pqdl/prequential.hpp"
#include "pqdl/rng.hpp"
#include "pqdl/serialize.hpp"
#include "pqdl/stats.hpp"
#include "pqdl/train.hpp"
#include "pqdl/experiment.hpp"
