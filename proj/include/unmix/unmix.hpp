#pragma once

#include "unmix/error.hpp"
#include "unmix/init.hpp"
#include "unmix/io.hpp"
#include "unmix/metrics.hpp"
#include "unmix/model.hpp"
#include "unmix/optimizer.hpp"
#include "unmix/rng.hpp"
#include "unmix/synth.hpp"
#include "unmix/types.hpp"
