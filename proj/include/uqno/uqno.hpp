#pragma once

#include "conformal.hpp"
#include "coverage.hpp"
#include "darcy.hpp"
#include "dataset_io.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "quantile_model.hpp"
#include "random.hpp"
#include "spectral_model.hpp"
#include "synthetic.hpp"
#include "text_format.hpp"
