#pragma once

#include "predft/model/checkpoint.hpp"
#include "predft/model/config.hpp"
#include "predft/model/examples.hpp"
#include "predft/model/generate.hpp"
#include "predft/model/layers.hpp"
#include "predft/model/network.hpp"
#include "predft/model/params.hpp"
#include "predft/model/pipeline.hpp"
#include "predft/model/training.hpp"
