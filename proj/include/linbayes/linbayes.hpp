#pragma once

#include "linbayes/core.hpp"
#include "linbayes/mesh.hpp"
#include "linbayes/assembly.hpp"
#include "linbayes/mspace.hpp"
#include "linbayes/prior.hpp"
#include "linbayes/forward_model.hpp"
#include "linbayes/linear_observations.hpp"
#include "linbayes/observation.hpp"
#include "linbayes/wave1d.hpp"
#include "linbayes/map_solver.hpp"
#include "linbayes/lanczos.hpp"
#include "linbayes/lowrank_posterior.hpp"
