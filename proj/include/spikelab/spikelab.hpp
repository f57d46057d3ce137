#pragma once

#include "spikelab/errors.hpp"
#include "spikelab/core.hpp"
#include "spikelab/innersolve.hpp"
#include "spikelab/steady.hpp"
#include "spikelab/pdesim.hpp"
#include "spikelab/stability.hpp"
#include "spikelab/slowdyn.hpp"
#include "spikelab/scenario.hpp"
