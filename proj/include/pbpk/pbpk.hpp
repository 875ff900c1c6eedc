#pragma once

#include "pbpk/types.hpp"
#include "pbpk/kinetic.hpp"
#include "pbpk/ode.hpp"
#include "pbpk/fitter.hpp"
#include "pbpk/patlak.hpp"
#include "pbpk/volume.hpp"
#include "pbpk/phantom.hpp"
#include "pbpk/metrics.hpp"
#include "pbpk/io.hpp"
