#pragma once

#include "ugm/classifiers.hpp"
#include "ugm/crf.hpp"
#include "ugm/cube.hpp"
#include "ugm/dataset.hpp"
#include "ugm/energy.hpp"
#include "ugm/error.hpp"
#include "ugm/evaluation.hpp"
#include "ugm/features.hpp"
#include "ugm/inference.hpp"
#include "ugm/io.hpp"
#include "ugm/maxflow.hpp"
#include "ugm/optimize.hpp"
#include "ugm/pipeline.hpp"
#include "ugm/random.hpp"
#include "ugm/render.hpp"
#include "ugm/superpixels.hpp"
