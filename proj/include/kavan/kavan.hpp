#pragma once

#include "kavan/attention.hpp"
#include "kavan/data.hpp"
#include "kavan/error.hpp"
#include "kavan/harness.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/io.hpp"
#include "kavan/losses.hpp"
#include "kavan/model.hpp"
#include "kavan/optim.hpp"
#include "kavan/random.hpp"
#include "kavan/recurrent.hpp"
#include "kavan/tensor.hpp"
