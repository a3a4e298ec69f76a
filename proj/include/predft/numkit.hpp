#pragma once

#include "predft/numkit/grad_check.hpp"
#include "predft/numkit/linalg.hpp"
#include "predft/numkit/ops.hpp"
#include "predft/numkit/tape.hpp"
#include "predft/numkit/tensor.hpp"
#include "predft/numkit/tensor_io.hpp"
