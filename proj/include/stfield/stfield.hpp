#pragma once

#include "stfield/types.hpp"
#include "stfield/kernel.hpp"
#include "stfield/quadrature.hpp"
#include "stfield/geometry.hpp"
#include "stfield/covariance.hpp"
#include "stfield/dft.hpp"
#include "stfield/windowed.hpp"
#include "stfield/linalg.hpp"
#include "stfield/estimator.hpp"
#include "stfield/selection.hpp"
#include "stfield/baselines.hpp"
#include "stfield/signal.hpp"
#include "stfield/simulator.hpp"
#include "stfield/io.hpp"
#include "stfield/metrics.hpp"
#include "stfield/csv.hpp"
#include "stfield/cv.hpp"
#include "stfield/experiment.hpp"
