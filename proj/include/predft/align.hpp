#pragma once

#include "predft/align/activations.hpp"
#include "predft/align/ridge.hpp"
#include "predft/align/sweep.hpp"
