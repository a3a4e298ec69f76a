#pragma once

#include "predft/data/atlas.hpp"
#include "predft/data/dataset.hpp"
#include "predft/data/preprocess.hpp"
#include "predft/data/recording.hpp"
#include "predft/data/splits.hpp"
#include "predft/data/synth.hpp"
#include "predft/data/vocab.hpp"
