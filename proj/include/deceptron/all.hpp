#pragma once

#include "deceptron/errors.hpp"
#include "deceptron/rng.hpp"
#include "deceptron/linalg.hpp"
#include "deceptron/diffnet.hpp"
#include "deceptron/deceptron.hpp"
#include "deceptron/problems.hpp"
#include "deceptron/training.hpp"
#include "deceptron/trace.hpp"
#include "deceptron/dipg.hpp"
#include "deceptron/baselines.hpp"
#include "deceptron/theorycheck.hpp"
#include "deceptron/bench.hpp"
