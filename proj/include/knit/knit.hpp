#pragma once

#include "knit/bench.hpp"
#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/inference.hpp"
#include "knit/io.hpp"
#include "knit/parallel.hpp"
#include "knit/pipeline.hpp"
#include "knit/rng.hpp"
#include "knit/simgen.hpp"
#include "knit/spectra.hpp"
#include "knit/stats.hpp"
#include "knit/variance.hpp"
