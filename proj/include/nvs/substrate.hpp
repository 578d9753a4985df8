#pragma once

#include "nvs/substrate/archive.hpp"
#include "nvs/substrate/attention.hpp"
#include "nvs/substrate/autograd.hpp"
#include "nvs/substrate/conv.hpp"
#include "nvs/substrate/grad_check.hpp"
#include "nvs/substrate/nn.hpp"
#include "nvs/substrate/ops.hpp"
#include "nvs/substrate/optim.hpp"
#include "nvs/substrate/rng.hpp"
#include "nvs/substrate/tensor.hpp"
