#pragma once

#include "lmn/combiner_train.hpp"
#include "lmn/eval.hpp"
#include "lmn/gradcheck.hpp"

// Umbrella header: the full library.
