#pragma once

#include "ocumesh/errors.hpp"
#include "ocumesh/features.hpp"
#include "ocumesh/gaze.hpp"
#include "ocumesh/geometry.hpp"
#include "ocumesh/labeling.hpp"
#include "ocumesh/losses.hpp"
#include "ocumesh/mesh.hpp"
#include "ocumesh/parallel.hpp"
#include "ocumesh/rng.hpp"
#include "ocumesh/synthworld.hpp"
#include "ocumesh/template.hpp"
#include "ocumesh/trainer.hpp"
