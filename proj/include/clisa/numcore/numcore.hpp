#pragma once

#include "clisa/numcore/ctns.hpp"
#include "clisa/numcore/error.hpp"
#include "clisa/numcore/flops.hpp"
#include "clisa/numcore/ops.hpp"
#include "clisa/numcore/parallel.hpp"
#include "clisa/numcore/rng.hpp"
#include "clisa/numcore/tape.hpp"
#include "clisa/numcore/tensor.hpp"
