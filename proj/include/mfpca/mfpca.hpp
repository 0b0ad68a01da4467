#pragma once

// Umbrella header for the multilevel functional principal component
// analysis library.

#include "mfpca/bandpower.hpp"
#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/io.hpp"
#include "mfpca/logistic.hpp"
#include "mfpca/moments.hpp"
#include "mfpca/parallel.hpp"
#include "mfpca/pspline.hpp"
#include "mfpca/rng.hpp"
#include "mfpca/scores.hpp"
#include "mfpca/simulation.hpp"
#include "mfpca/smoothing.hpp"
#include "mfpca/svg.hpp"
