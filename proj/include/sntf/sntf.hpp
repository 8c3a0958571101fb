#pragma once

#include "analysis.hpp"
#include "editing.hpp"
#include "error.hpp"
#include "factorization.hpp"
#include "linalg.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "npy.hpp"
#include "refinement.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
