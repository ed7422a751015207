#pragma once

#include "checkpoint.hpp"
#include "cli.hpp"
#include "config.hpp"
#include "correction.hpp"
#include "data.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "evaluate.hpp"
#include "fft.hpp"
#include "gradcheck.hpp"
#include "matrix.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "selftest.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "train.hpp"
