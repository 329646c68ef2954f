#ifndef PNET_PNET_HPP
#define PNET_PNET_HPP

#include "pnet/checkpoint.hpp"
#include "pnet/dataset.hpp"
#include "pnet/errors.hpp"
#include "pnet/evaluation.hpp"
#include "pnet/gradcheck.hpp"
#include "pnet/layers.hpp"
#include "pnet/network.hpp"
#include "pnet/optimizer.hpp"
#include "pnet/rng.hpp"
#include "pnet/runconfig.hpp"
#include "pnet/tensor.hpp"
#include "pnet/training.hpp"

#endif
