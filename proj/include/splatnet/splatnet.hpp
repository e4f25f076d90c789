#pragma once

#include "splatnet/bcl.hpp"
#include "splatnet/checkpoint.hpp"
#include "splatnet/cloud.hpp"
#include "splatnet/config.hpp"
#include "splatnet/dataset.hpp"
#include "splatnet/error.hpp"
#include "splatnet/io.hpp"
#include "splatnet/lattice.hpp"
#include "splatnet/matrix.hpp"
#include "splatnet/metrics.hpp"
#include "splatnet/network.hpp"
#include "splatnet/optimizer.hpp"
#include "splatnet/parallel.hpp"
#include "splatnet/synthetic.hpp"
#include "splatnet/train.hpp"
