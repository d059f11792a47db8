#pragma once

#include "mosfuse/confidence.hpp"
#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"
#include "mosfuse/early_stopping.hpp"
#include "mosfuse/features.hpp"
#include "mosfuse/fusion.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/kmeans.hpp"
#include "mosfuse/metrics.hpp"
#include "mosfuse/predictor.hpp"
#include "mosfuse/rng.hpp"
#include "mosfuse/synth.hpp"
#include "mosfuse/unitlm.hpp"
#include "mosfuse/wav.hpp"
