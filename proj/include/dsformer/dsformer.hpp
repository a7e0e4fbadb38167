#pragma once

#include "dsformer/attention.hpp"
#include "dsformer/autograd.hpp"
#include "dsformer/checkpoint.hpp"
#include "dsformer/data.hpp"
#include "dsformer/errors.hpp"
#include "dsformer/model.hpp"
#include "dsformer/optim.hpp"
#include "dsformer/registry.hpp"
#include "dsformer/rng.hpp"
#include "dsformer/sampling.hpp"
#include "dsformer/tensor.hpp"
#include "dsformer/training.hpp"
