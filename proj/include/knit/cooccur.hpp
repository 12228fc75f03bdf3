#pragma once

// Windowed co-occurrence counts. For one sequence of length T and window q,
// C_{w,w'} counts ordered index pairs (t, s) with 0 < |t - s| <= q,
// min(t, s) <= T - q, w_t = w and w_s = w'. Every patient contributes exactly
// 2q(T - q) ordered pairs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "knit/error.hpp"
#include "knit/parallel.hpp"
#include "knit/simgen.hpp"

namespace knit {

using Count = std::int64_t;

struct CountEntry {
  Code w = 0;
  Code w_prime = 0;
  Count count = 0;

  bool operator==(const CountEntry&) const = default;
};

inline bool entry_order(const CountEntry& a, const CountEntry& b) {
  return a.w != b.w ? a.w < b.w : a.w_prime < b.w_prime;
}

namespace detail {

inline Count checked_add(Count a, Count b) {
  Count out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw NumericalError("co-occurrence count overflow");
  return out;
}

}  // namespace detail

/// Symmetric sparse count matrix stored as sorted (w, w', count) triplets
/// with strictly positive counts. Both (w, w') and (w', w) are stored.
class SparseCounts {
 public:
  SparseCounts() = default;

  /// Takes triplets in any order; duplicates are summed and zero counts dropped.
  SparseCounts(std::size_t d, std::vector<CountEntry> entries) : d_(d), entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      detail::require(e.w < d_ && e.w_prime < d_, "count entry outside the vocabulary");
      detail::require(e.count >= 0, "negative co-occurrence count");
    }
    std::sort(entries_.begin(), entries_.end(), entry_order);
    std::vector<CountEntry> merged;
    merged.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (!merged.empty() && merged.back().w == e.w && merged.back().w_prime == e.w_prime)
        merged.back().count = detail::checked_add(merged.back().count, e.count);
      else
        merged.push_back(e);
    }
    std::erase_if(merged, [](const CountEntry& e) { return e.count == 0; });
    entries_ = std::move(merged);
  }

  std::size_t d() const { return d_; }
  std::size_t nnz() const { return entries_.size(); }
  const std::vector<CountEntry>& entries() const { return entries_; }

  Count at(std::size_t w, std::size_t w_prime) const {
    const CountEntry key{static_cast<Code>(w), static_cast<Code>(w_prime), 0};
    auto it = std::lower_bound(entries_.begin(), entries_.end(), key, entry_order);
    if (it != entries_.end() && it->w == key.w && it->w_prime == key.w_prime) return it->count;
    return 0;
  }

  /// Entries of row w, as a contiguous sub-range.
  std::span<const CountEntry> row(std::size_t w) const {
    const CountEntry lo{static_cast<Code>(w), 0, 0};
    auto first = std::lower_bound(entries_.begin(), entries_.end(), lo, entry_order);
    auto last = first;
    while (last != entries_.end() && last->w == w) ++last;
    return {first, last};
  }

  std::vector<Count> row_sums() const {
    std::vector<Count> sums(d_, 0);
    for (const auto& e : entries_) sums[e.w] = detail::checked_add(sums[e.w], e.count);
    return sums;
  }

  bool is_symmetric() const {
    for (const auto& e : entries_)
      if (at(e.w_prime, e.w) != e.count) return false;
    return true;
  }

  Matrix dense() const {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_));
    for (const auto& e : entries_) m(e.w, e.w_prime) = static_cast<double>(e.count);
    return m;
  }

  bool operator==(const SparseCounts&) const = default;

 private:
  std::size_t d_ = 0;
  std::vector<CountEntry> entries_;
};

struct PatientCooccurrence {
  SparseCounts counts;
  std::size_t length = 0;
  std::size_t q = 0;

  std::size_t d() const { return counts.d(); }
  Count total() const {
    Count t = 0;
    for (const auto& e : counts.entries()) t = detail::checked_add(t, e.count);
    return t;
  }
  bool operator==(const PatientCooccurrence&) const = default;
};

/// Cohort-level counts plus everything the summary-only inference needs.
struct CooccurrenceSummary {
  SparseCounts counts;
  std::vector<Count> marginals;
  Count total = 0;
  std::size_t n = 0;
  std::size_t q = 0;
  std::vector<std::size_t> lengths;

  std::size_t d() const { return counts.d(); }

  double mean_length() const {
    detail::require(!lengths.empty(), "summary has no sequence lengths");
    const double sum = std::accumulate(lengths.begin(), lengths.end(), 0.0,
                                       [](double acc, std::size_t t) { return acc + static_cast<double>(t); });
    return sum / static_cast<double>(lengths.size());
  }

  bool uniform_lengths() const {
    return std::adjacent_find(lengths.begin(), lengths.end(), std::not_equal_to<>()) == lengths.end();
  }

  /// Recomputes marginals and total from the counts and checks the mass
  /// identity C-bar = sum_i 2q(T_i - q).
  void finalize() {
    marginals = counts.row_sums();
    total = 0;
    for (Count c : marginals) total = detail::checked_add(total, c);
    detail::require(lengths.size() == n, "summary length list does not match n");
    Count expected = 0;
    for (std::size_t t : lengths) {
      detail::require(t > 2 * q, "sequence length must exceed 2q");
      expected = detail::checked_add(expected, static_cast<Count>(2 * q * (t - q)));
    }
    if (expected != total)
      throw FormatError("co-occurrence mass " + std::to_string(total) + " differs from sum 2q(T_i - q) = " +
                        std::to_string(expected));
  }

  bool operator==(const CooccurrenceSummary&) const = default;
};

/// Single pass over the sequence with a window of q successors.
inline PatientCooccurrence accumulate_patient(const CodeSequence& seq, std::size_t d, std::size_t q) {
  detail::require(q >= 1, "window size q must be at least 1");
  const std::size_t T = seq.size();
  detail::require(T > 2 * q, "sequence length must exceed 2q");
  for (Code c : seq.codes) detail::require(c < d, "code outside the vocabulary");
  std::vector<std::uint64_t> keys;
  keys.reserve(2 * q * (T - q));
  const auto key = [d](Code a, Code b) { return static_cast<std::uint64_t>(a) * d + b; };
  // earlier index t must satisfy t <= T - q (1-based), i.e. t < T - q 0-based
  for (std::size_t t = 0; t < T - q; ++t) {
    const Code a = seq.codes[t];
    for (std::size_t u = 1; u <= q; ++u) {
      const Code b = seq.codes[t + u];
      keys.push_back(key(a, b));
      keys.push_back(key(b, a));
    }
  }
  std::sort(keys.begin(), keys.end());
  std::vector<CountEntry> entries;
  for (std::size_t i = 0; i < keys.size();) {
    std::size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    entries.push_back({static_cast<Code>(keys[i] / d), static_cast<Code>(keys[i] % d), static_cast<Count>(j - i)});
    i = j;
  }
  return {SparseCounts(d, std::move(entries)), T, q};
}

inline CooccurrenceSummary to_summary(const PatientCooccurrence& patient) {
  CooccurrenceSummary s{patient.counts, {}, 0, 1, patient.q, {patient.length}};
  s.finalize();
  return s;
}

namespace detail {

template <typename Item, typename CountsOf>
SparseCounts sum_counts(std::span<const Item> items, std::size_t d, CountsOf&& counts_of) {
  constexpr std::size_t kDenseLimit = std::size_t{1} << 22;
  std::vector<CountEntry> out;
  if (d * d <= kDenseLimit) {
    std::vector<Count> dense(d * d, 0);
    for (const auto& item : items)
      for (const auto& e : counts_of(item).entries()) {
        auto& slot = dense[static_cast<std::size_t>(e.w) * d + e.w_prime];
        slot = checked_add(slot, e.count);
      }
    for (std::size_t k = 0; k < dense.size(); ++k)
      if (dense[k] != 0) out.push_back({static_cast<Code>(k / d), static_cast<Code>(k % d), dense[k]});
  } else {
    std::unordered_map<std::uint64_t, Count> acc;
    for (const auto& item : items)
      for (const auto& e : counts_of(item).entries()) {
        auto& slot = acc[static_cast<std::uint64_t>(e.w) * d + e.w_prime];
        slot = checked_add(slot, e.count);
      }
    out.reserve(acc.size());
    for (const auto& [k, c] : acc) out.push_back({static_cast<Code>(k / d), static_cast<Code>(k % d), c});
  }
  return SparseCounts(d, std::move(out));
}

}  // namespace detail

/// Entrywise sum of patient matrices; n counts the patients.
inline CooccurrenceSummary merge(std::span<const PatientCooccurrence> patients) {
  detail::require(!patients.empty(), "merge needs at least one patient");
  const std::size_t d = patients.front().d();
  const std::size_t q = patients.front().q;
  CooccurrenceSummary s;
  s.q = q;
  s.n = patients.size();
  for (const auto& p : patients) {
    detail::require(p.d() == d, "cannot merge patients with different vocabulary sizes");
    detail::require(p.q == q, "cannot merge patients with different window sizes");
    s.lengths.push_back(p.length);
  }
  s.counts = detail::sum_counts(patients, d, [](const PatientCooccurrence& p) -> const SparseCounts& { return p.counts; });
  s.finalize();
  return s;
}

/// Merge of already-merged summaries; lengths are concatenated in order.
inline CooccurrenceSummary merge(std::span<const CooccurrenceSummary> parts) {
  detail::require(!parts.empty(), "merge needs at least one summary");
  const std::size_t d = parts.front().d();
  const std::size_t q = parts.front().q;
  CooccurrenceSummary s;
  s.q = q;
  for (const auto& part : parts) {
    detail::require(part.d() == d, "cannot merge summaries with different vocabulary sizes");
    detail::require(part.q == q, "cannot merge summaries with different window sizes");
    s.n += part.n;
    s.lengths.insert(s.lengths.end(), part.lengths.begin(), part.lengths.end());
  }
  s.counts = detail::sum_counts(parts, d, [](const CooccurrenceSummary& p) -> const SparseCounts& { return p.counts; });
  s.finalize();
  return s;
}

/// Per-patient matrices for a whole cohort.
inline std::vector<PatientCooccurrence> accumulate_cohort(const Cohort& cohort, std::size_t q, std::size_t threads = 1) {
  std::vector<PatientCooccurrence> out(cohort.n());
  parallel_for(cohort.n(), threads,
               [&](std::size_t i) { out[i] = accumulate_patient(cohort.sequences[i], cohort.d, q); });
  return out;
}

inline CooccurrenceSummary summarize_cohort(const Cohort& cohort, std::size_t q, std::size_t threads = 1) {
  const auto patients = accumulate_cohort(cohort, q, threads);
  return merge(std::span<const PatientCooccurrence>(patients));
}

}  // namespace knit
