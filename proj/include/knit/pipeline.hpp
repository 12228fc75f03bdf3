#pragma once

// Glue shared by the CLI stages and the end-to-end run, so that chaining the
// stages through files and running them in one process take the same path.

#include <cstddef>
#include <optional>

#include "json.hpp"
#include "knit/cooccur.hpp"
#include "knit/inference.hpp"
#include "knit/simgen.hpp"
#include "knit/spectra.hpp"

namespace knit {

/// Scaled embeddings when kappa_exponent is set, else the centered construction.
inline EmbeddingMatrix embedding_for(const SimConfig& cfg) {
  return cfg.kappa_exponent ? scaled_embeddings(cfg) : build_embeddings(cfg);
}

inline Cohort simulate(const SimConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  return simulate_cohort(cfg, embedding_for(cfg), threads);
}

}  // namespace knit
