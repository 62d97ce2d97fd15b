#pragma once

// Umbrella header.

#include "nbv/config.hpp"
#include "nbv/core.hpp"
#include "nbv/evaluation.hpp"
#include "nbv/geometry.hpp"
#include "nbv/image.hpp"
#include "nbv/planner.hpp"
#include "nbv/plot.hpp"
#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"
#include "nbv/training.hpp"
#include "nbv/uncertainty.hpp"
