#pragma once

#include "spikefuse/config.hpp"
#include "spikefuse/core.hpp"
#include "spikefuse/data_io.hpp"
#include "spikefuse/encoder.hpp"
#include "spikefuse/error.hpp"
#include "spikefuse/network.hpp"
#include "spikefuse/neuron.hpp"
#include "spikefuse/rng.hpp"
#include "spikefuse/synth.hpp"
#include "spikefuse/threading.hpp"
#include "spikefuse/training.hpp"
