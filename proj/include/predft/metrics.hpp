#pragma once

#include "predft/metrics/errors.hpp"
#include "predft/metrics/report.hpp"
#include "predft/metrics/text.hpp"
