#pragma once

#include "convmcd/autograd.hpp"
#include "convmcd/config.hpp"
#include "convmcd/error.hpp"
#include "convmcd/fmap.hpp"
#include "convmcd/gradcheck.hpp"
#include "convmcd/loss.hpp"
#include "convmcd/metrics.hpp"
#include "convmcd/model.hpp"
#include "convmcd/raster.hpp"
#include "convmcd/targets.hpp"
#include "convmcd/train.hpp"
