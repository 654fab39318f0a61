#pragma once

// Multi-study factor regression: shared and study-specific latent factors
// with covariate adjustment, fitted by expectation/conditional maximization.

#include "msfr/crossval.hpp"
#include "msfr/ecm.hpp"
#include "msfr/errors.hpp"
#include "msfr/fit.hpp"
#include "msfr/init.hpp"
#include "msfr/io.hpp"
#include "msfr/linalg.hpp"
#include "msfr/model.hpp"
#include "msfr/rng.hpp"
#include "msfr/scores.hpp"
#include "msfr/simulate.hpp"

namespace msfr {
inline constexpr const char* kVersion = "0.1.0";
}
