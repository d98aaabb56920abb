#pragma once

// Umbrella header.

#include "noteacher/autodiff.hpp"
#include "noteacher/commands.hpp"
#include "noteacher/config.hpp"
#include "noteacher/data.hpp"
#include "noteacher/error.hpp"
#include "noteacher/graphical_model.hpp"
#include "noteacher/io.hpp"
#include "noteacher/losses.hpp"
#include "noteacher/metrics.hpp"
#include "noteacher/models.hpp"
#include "noteacher/optimizer.hpp"
#include "noteacher/report.hpp"
#include "noteacher/rng.hpp"
#include "noteacher/sampling.hpp"
#include "noteacher/trainer.hpp"
