#pragma once

// File formats. All binary files are little-endian and start with an 8-byte
// magic followed by a 32-bit version.
//
//   cohort.bin   magic, version, d, n, q, then per patient a varint length
//                followed by varint codes
//   summary.knc  magic, version, d, n, q, FNV-1a digest of the lengths, nnz,
//                lengths (u64), sorted triplets (u32 w, u32 w', i64 count)
//   pmi file     magic, version, JSON metadata block, named dense arrays
//                (u32 name length, name, u64 rows, u64 cols, f64 row-major)

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knit/cooccur.hpp"
#include "knit/error.hpp"
#include "knit/inference.hpp"
#include "knit/simgen.hpp"
#include "knit/spectra.hpp"

namespace knit::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Json = nlohmann::json;
using Magic = std::array<char, 8>;

inline constexpr Magic kCohortMagic{'K', 'N', 'I', 'T', 'C', 'O', 'H', '\0'};
inline constexpr Magic kSummaryMagic{'K', 'N', 'I', 'T', 'K', 'N', 'C', '\0'};
inline constexpr Magic kPmiMagic{'K', 'N', 'I', 'T', 'P', 'M', 'I', '\0'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

using knit::detail::require;

inline std::uint64_t fnv1a(const std::vector<std::size_t>& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t v : values) {
    auto x = static_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (x >> (8 * b)) & 0xFFU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }

  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* data, std::size_t size) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size)); }
  void magic(const Magic& m) { bytes(m.data(), m.size()); }
  void varint(std::uint64_t v) {
    while (v >= 0x80) {
      out_.put(static_cast<char>((v & 0x7F) | 0x80));
      v >>= 7;
    }
    out_.put(static_cast<char>(v));
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write to " + path_.string() + " failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string() + " for reading");
  }

  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) truncated();
    return v;
  }
  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in_.gcount() != static_cast<std::streamsize>(size)) truncated();
  }
  void expect_header(const Magic& m, const char* what) {
    Magic got{};
    in_.read(got.data(), got.size());
    if (in_.gcount() != static_cast<std::streamsize>(got.size()) || got != m)
      throw FormatError(path_.string() + " is not a " + what + " file (bad magic)");
    const auto version = pod<std::uint32_t>();
    if (version != kFormatVersion)
      throw FormatError(path_.string() + ": unsupported " + what + " version " + std::to_string(version));
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const int c = in_.get();
      if (c == EOF) truncated();
      v |= static_cast<std::uint64_t>(c & 0x7F) << shift;
      if ((c & 0x80) == 0) return v;
    }
    throw FormatError(path_.string() + ": malformed varint");
  }
  void expect_end() {
    if (in_.peek() != EOF) throw FormatError(path_.string() + ": trailing bytes after payload");
  }
  [[noreturn]] void truncated() const { throw FormatError(path_.string() + ": truncated file"); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

inline Json parse_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    if constexpr (std::is_floating_point_v<T>) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return static_cast<T>(v);
    } else if constexpr (std::is_signed_v<T>) {
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return static_cast<T>(v);
    } else {
      if (!text.empty() && text.front() == '-') throw std::invalid_argument(text);
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return static_cast<T>(v);
    }
  } catch (const std::logic_error&) {
    throw FormatError(where + ": cannot parse '" + text + "' as a number");
  }
}

inline std::filesystem::path sidecar(const std::filesystem::path& path) { return std::filesystem::path(path.string() + ".json"); }

}  // namespace detail

// ---------------------------------------------------------------------------
// cohort.bin
// ---------------------------------------------------------------------------

inline void write_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  detail::Writer w(path);
  w.magic(kCohortMagic);
  w.pod(kFormatVersion);
  w.pod<std::uint64_t>(cohort.d);
  w.pod<std::uint64_t>(cohort.n());
  w.pod<std::uint64_t>(cohort.q);
  for (const auto& seq : cohort.sequences) {
    w.varint(seq.size());
    for (Code c : seq.codes) w.varint(c);
  }
  w.close();
}

inline Cohort read_cohort(const std::filesystem::path& path) {
  detail::Reader r(path);
  r.expect_header(kCohortMagic, "cohort");
  Cohort c;
  c.d = r.pod<std::uint64_t>();
  const auto n = r.pod<std::uint64_t>();
  c.q = r.pod<std::uint64_t>();
  if (c.d < 1 || c.d > std::numeric_limits<Code>::max()) throw FormatError(path.string() + ": invalid vocabulary size");
  c.sequences.resize(n);
  for (auto& seq : c.sequences) {
    const auto len = r.varint();
    seq.codes.resize(len);
    for (auto& code : seq.codes) {
      const auto v = r.varint();
      if (v >= c.d) throw FormatError(path.string() + ": code " + std::to_string(v) + " outside the vocabulary");
      code = static_cast<Code>(v);
    }
  }
  r.expect_end();
  return c;
}

// ---------------------------------------------------------------------------
// summary.knc and the CSV variant
// ---------------------------------------------------------------------------

inline void write_summary(const std::filesystem::path& path, const CooccurrenceSummary& s) {
  detail::Writer w(path);
  w.magic(kSummaryMagic);
  w.pod(kFormatVersion);
  w.pod<std::uint64_t>(s.d());
  w.pod<std::uint64_t>(s.n);
  w.pod<std::uint64_t>(s.q);
  w.pod<std::uint64_t>(detail::fnv1a(s.lengths));
  w.pod<std::uint64_t>(s.counts.nnz());
  for (std::size_t t : s.lengths) w.pod<std::uint64_t>(t);
  for (const auto& e : s.counts.entries()) {
    w.pod<std::uint32_t>(e.w);
    w.pod<std::uint32_t>(e.w_prime);
    w.pod<std::int64_t>(e.count);
  }
  w.close();
}

inline CooccurrenceSummary read_summary_binary(const std::filesystem::path& path) {
  detail::Reader r(path);
  r.expect_header(kSummaryMagic, "co-occurrence summary");
  const auto d = r.pod<std::uint64_t>();
  CooccurrenceSummary s;
  s.n = r.pod<std::uint64_t>();
  s.q = r.pod<std::uint64_t>();
  const auto digest = r.pod<std::uint64_t>();
  const auto nnz = r.pod<std::uint64_t>();
  if (d < 1 || d > std::numeric_limits<Code>::max()) throw FormatError(path.string() + ": invalid vocabulary size");
  s.lengths.resize(s.n);
  for (auto& t : s.lengths) t = r.pod<std::uint64_t>();
  if (detail::fnv1a(s.lengths) != digest) throw FormatError(path.string() + ": length digest mismatch");
  std::vector<CountEntry> entries(nnz);
  for (auto& e : entries) {
    e.w = r.pod<std::uint32_t>();
    e.w_prime = r.pod<std::uint32_t>();
    e.count = r.pod<std::int64_t>();
    if (e.w >= d || e.w_prime >= d || e.count <= 0) throw FormatError(path.string() + ": invalid count triplet");
  }
  r.expect_end();
  s.counts = SparseCounts(d, std::move(entries));
  if (s.counts.nnz() != nnz) throw FormatError(path.string() + ": duplicate count triplets");
  s.finalize();
  return s;
}

/// `w,w_prime,count` rows plus a sidecar `<path>.json` with d, n, q and lengths.
inline void write_summary_csv(const std::filesystem::path& path, const CooccurrenceSummary& s) {
  std::ostringstream out;
  out << "w,w_prime,count\n";
  for (const auto& e : s.counts.entries()) out << e.w << ',' << e.w_prime << ',' << e.count << '\n';
  detail::write_text(path, out.str());
  Json meta{{"d", s.d()}, {"n", s.n}, {"q", s.q}, {"lengths", s.lengths}};
  detail::write_text(detail::sidecar(path), meta.dump(2) + "\n");
}

inline CooccurrenceSummary read_summary_csv(const std::filesystem::path& path) {
  const Json meta = detail::parse_json(detail::sidecar(path));
  CooccurrenceSummary s;
  std::size_t d = 0;
  try {
    d = meta.at("d").get<std::size_t>();
    s.n = meta.at("n").get<std::size_t>();
    s.q = meta.at("q").get<std::size_t>();
    s.lengths = meta.at("lengths").get<std::vector<std::size_t>>();
  } catch (const Json::exception& e) {
    throw FormatError(detail::sidecar(path).string() + ": " + e.what());
  }
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "w,w_prime,count") throw FormatError(path.string() + ": missing CSV header");
  std::vector<CountEntry> entries;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3) throw FormatError(where + ": expected 3 fields");
    CountEntry e{detail::parse_number<Code>(f[0], where), detail::parse_number<Code>(f[1], where),
                 detail::parse_number<Count>(f[2], where)};
    if (e.w >= d || e.w_prime >= d || e.count < 0) throw FormatError(where + ": invalid count triplet");
    entries.push_back(e);
  }
  s.counts = SparseCounts(d, std::move(entries));
  s.finalize();
  return s;
}

/// Dispatches on the file magic: binary .knc, otherwise CSV with sidecar.
inline CooccurrenceSummary read_summary(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path.string() + " for reading");
  Magic head{};
  probe.read(head.data(), head.size());
  if (probe.gcount() == static_cast<std::streamsize>(head.size()) && head == kSummaryMagic) return read_summary_binary(path);
  if (std::filesystem::exists(detail::sidecar(path))) return read_summary_csv(path);
  throw FormatError(path.string() + " is not a co-occurrence summary file (bad magic)");
}

inline void write_patient(const std::filesystem::path& path, const PatientCooccurrence& p) {
  write_summary(path, to_summary(p));
}

inline PatientCooccurrence read_patient(const std::filesystem::path& path) {
  const auto s = read_summary(path);
  if (s.n != 1) throw FormatError(path.string() + ": patient file must hold exactly one patient");
  return {s.counts, s.lengths.front(), s.q};
}

// ---------------------------------------------------------------------------
// PMI container
// ---------------------------------------------------------------------------

struct PmiFile {
  Json meta;
  std::map<std::string, Matrix> arrays;
};

inline void write_pmi_file(const std::filesystem::path& path, const PmiFile& f) {
  detail::Writer w(path);
  w.magic(kPmiMagic);
  w.pod(kFormatVersion);
  const std::string meta = f.meta.dump();
  w.pod<std::uint64_t>(meta.size());
  w.bytes(meta.data(), meta.size());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(f.arrays.size()));
  for (const auto& [name, m] : f.arrays) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    w.bytes(rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()));
  }
  w.close();
}

inline PmiFile read_pmi_file(const std::filesystem::path& path) {
  detail::Reader r(path);
  r.expect_header(kPmiMagic, "PMI");
  PmiFile f;
  const auto meta_size = r.pod<std::uint64_t>();
  if (meta_size > (std::uint64_t{1} << 30)) throw FormatError(path.string() + ": implausible metadata size");
  std::string meta(meta_size, '\0');
  r.bytes(meta.data(), meta.size());
  try {
    f.meta = Json::parse(meta);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.pod<std::uint32_t>();
    if (len > 4096) throw FormatError(path.string() + ": implausible array name");
    std::string name(len, '\0');
    r.bytes(name.data(), name.size());
    const auto rows = r.pod<std::uint64_t>();
    const auto cols = r.pod<std::uint64_t>();
    if (rows > (1u << 20) || cols > (1u << 20)) throw FormatError(path.string() + ": implausible array shape");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.bytes(rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()));
    f.arrays[name] = rm;
  }
  r.expect_end();
  return f;
}

/// Stores PMI-tilde, U-hat, Lambda-hat and U |Lambda|^{1/2} with metadata.
inline void write_pmi(const std::filesystem::path& path, const PmiEstimate& est, Json meta) {
  PmiFile f;
  meta["kind"] = to_string(est.kind);
  if (est.rank) meta["p"] = *est.rank;
  meta["d"] = est.d();
  if (!est.warnings.empty()) meta["warnings"] = est.warnings;
  f.meta = std::move(meta);
  f.arrays[est.kind == PmiKind::LowRank ? "pmi_tilde" : "pmi_hat"] = est.matrix;
  if (est.kind == PmiKind::LowRank) {
    f.arrays["U_hat"] = est.eigenvectors;
    f.arrays["Lambda_hat"] = est.eigenvalues;
    f.arrays["embedding"] = est.embedding();
  }
  write_pmi_file(path, f);
}

inline PmiEstimate read_pmi(const std::filesystem::path& path, Json* meta_out = nullptr) {
  PmiFile f = read_pmi_file(path);
  PmiEstimate est;
  const auto need = [&](const char* name) -> Matrix& {
    auto it = f.arrays.find(name);
    if (it == f.arrays.end()) throw FormatError(path.string() + ": missing array " + name);
    return it->second;
  };
  if (f.arrays.count("pmi_tilde")) {
    est.kind = PmiKind::LowRank;
    est.matrix = need("pmi_tilde");
    est.eigenvectors = need("U_hat");
    const Matrix& lam = need("Lambda_hat");
    est.eigenvalues = Eigen::Map<const Vector>(lam.data(), lam.size());
    est.rank = static_cast<std::size_t>(est.eigenvalues.size());
    if (est.eigenvectors.rows() != est.matrix.rows() || est.eigenvectors.cols() != est.eigenvalues.size())
      throw FormatError(path.string() + ": inconsistent eigenpair shapes");
  } else {
    est.kind = PmiKind::Empirical;
    est.matrix = need("pmi_hat");
  }
  if (est.matrix.rows() != est.matrix.cols()) throw FormatError(path.string() + ": PMI matrix is not square");
  if (f.meta.contains("warnings")) est.warnings = f.meta["warnings"].get<std::vector<std::string>>();
  if (meta_out) *meta_out = std::move(f.meta);
  return est;
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

inline std::string to_string(Sidedness s) { return s == Sidedness::TwoSided ? "two-sided" : "paper-literal"; }
inline std::string to_string(Correction c) { return c == Correction::ByFdr ? "by-fdr" : "bonferroni"; }

inline void write_edges(const std::filesystem::path& path, const EdgeTestResult& r, const Json& config) {
  std::ostringstream out;
  out << "w,w_prime,pmi_tilde,variance,z,p_value,selected\n";
  for (const auto& t : r.pairs)
    out << t.w << ',' << t.w_prime << ',' << detail::format_double(t.statistic) << ','
        << detail::format_double(t.variance) << ',' << detail::format_double(t.z) << ','
        << detail::format_double(t.p_value) << ',' << (t.selected ? 1 : 0) << '\n';
  detail::write_text(path, out.str());
  Json excl = Json::array();
  for (const auto& e : r.excluded) excl.push_back({{"w", e.w}, {"w_prime", e.w_prime}, {"reason", e.reason}});
  Json meta{{"alpha", r.alpha},
            {"correction", to_string(r.correction)},
            {"sidedness", to_string(r.sidedness)},
            {"J", r.J},
            {"j_max", r.j_max},
            {"threshold", r.threshold},
            {"selected", r.selected_count()},
            {"clamped_variances", r.clamped},
            {"exclusions", excl},
            {"config", config}};
  detail::write_text(detail::sidecar(path), meta.dump(2) + "\n");
}

inline EdgeTestResult read_edges(const std::filesystem::path& path) {
  EdgeTestResult r;
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "w,w_prime,pmi_tilde,variance,z,p_value,selected")
    throw FormatError(path.string() + ": missing edges header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 7) throw FormatError(where + ": expected 7 fields");
    PairTest t;
    t.w = detail::parse_number<std::size_t>(f[0], where);
    t.w_prime = detail::parse_number<std::size_t>(f[1], where);
    t.statistic = detail::parse_number<double>(f[2], where);
    t.variance = detail::parse_number<double>(f[3], where);
    t.z = detail::parse_number<double>(f[4], where);
    t.p_value = detail::parse_number<double>(f[5], where);
    t.selected = detail::parse_number<int>(f[6], where) != 0;
    r.pairs.push_back(t);
  }
  const auto side = detail::sidecar(path);
  if (std::filesystem::exists(side)) {
    const Json meta = detail::parse_json(side);
    try {
      r.alpha = meta.at("alpha").get<double>();
      r.correction = meta.at("correction").get<std::string>() == "bonferroni" ? Correction::Bonferroni : Correction::ByFdr;
      r.sidedness = meta.at("sidedness").get<std::string>() == "paper-literal" ? Sidedness::PaperLiteral : Sidedness::TwoSided;
      r.J = meta.at("J").get<std::size_t>();
      r.j_max = meta.at("j_max").get<std::size_t>();
      r.threshold = meta.at("threshold").get<double>();
      r.clamped = meta.at("clamped_variances").get<std::size_t>();
      for (const auto& e : meta.at("exclusions"))
        r.excluded.push_back({e.at("w").get<std::size_t>(), e.at("w_prime").get<std::size_t>(), e.at("reason").get<std::string>()});
    } catch (const Json::exception& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
  }
  return r;
}

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

/// `w,w_prime` rows; the header line is optional.
inline PairList read_pairs(const std::filesystem::path& path, std::size_t d) {
  std::istringstream in(detail::read_text(path));
  std::string line;
  PairList out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line == "w,w_prime")) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 2) throw FormatError(where + ": expected 2 fields");
    const auto w = detail::parse_number<std::size_t>(f[0], where);
    const auto v = detail::parse_number<std::size_t>(f[1], where);
    if (w >= d || v >= d) throw InputError(where + ": code outside the vocabulary");
    out.emplace_back(w, v);
  }
  return out;
}

inline void write_pairs(const std::filesystem::path& path, const PairList& pairs) {
  std::ostringstream out;
  out << "w,w_prime\n";
  for (auto [w, v] : pairs) out << w << ',' << v << '\n';
  detail::write_text(path, out.str());
}

struct VarianceRow {
  std::size_t w = 0;
  std::size_t w_prime = 0;
  double pmi_tilde = 0.0;
  double variance = 0.0;
};

inline void write_variances(const std::filesystem::path& path, const std::vector<VarianceRow>& rows, const std::string& method) {
  std::ostringstream out;
  out << "w,w_prime,pmi_tilde,variance,method\n";
  for (const auto& r : rows)
    out << r.w << ',' << r.w_prime << ',' << detail::format_double(r.pmi_tilde) << ',' << detail::format_double(r.variance)
        << ',' << method << '\n';
  detail::write_text(path, out.str());
}

inline std::vector<VarianceRow> read_variances(const std::filesystem::path& path) {
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "w,w_prime,pmi_tilde,variance,method")
    throw FormatError(path.string() + ": missing variance header");
  std::vector<VarianceRow> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields");
    out.push_back({detail::parse_number<std::size_t>(f[0], where), detail::parse_number<std::size_t>(f[1], where),
                   detail::parse_number<double>(f[2], where), detail::parse_number<double>(f[3], where)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation config
// ---------------------------------------------------------------------------

inline Json to_json(const SimConfig& c) {
  Json j{{"d", c.d}, {"p", c.p}, {"n", c.n}, {"T", c.T}, {"q", c.q}, {"seed", c.seed},
         {"mc_samples", c.mc_samples}, {"process", to_string(c.process)}, {"arma_burn_in", c.arma_burn_in}};
  if (!c.lengths.empty()) j["lengths"] = c.lengths;
  if (c.kappa_exponent) j["kappa_exponent"] = *c.kappa_exponent;
  if (c.alpha) j["alpha"] = *c.alpha;
  if (c.sphere_step) j["sphere_step"] = *c.sphere_step;
  return j;
}

inline SimConfig sim_config_from_json(const Json& j) {
  static const std::vector<std::string> known{"d", "p", "n", "T", "lengths", "q", "kappa_exponent", "seed",
                                              "mc_samples", "process", "alpha", "sphere_step", "arma_burn_in"};
  SimConfig c;
  try {
    detail::require(j.is_object(), "simulation config must be a JSON object");
    for (const auto& [key, _] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end()) throw InputError("unknown config key '" + key + "'");
    if (j.contains("d")) c.d = j["d"].get<std::size_t>();
    if (j.contains("p")) c.p = j["p"].get<std::size_t>();
    if (j.contains("n")) c.n = j["n"].get<std::size_t>();
    if (j.contains("T")) c.T = j["T"].get<std::size_t>();
    if (j.contains("lengths")) c.lengths = j["lengths"].get<std::vector<std::size_t>>();
    if (j.contains("q")) c.q = j["q"].get<std::size_t>();
    if (j.contains("kappa_exponent")) c.kappa_exponent = j["kappa_exponent"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("mc_samples")) c.mc_samples = j["mc_samples"].get<std::size_t>();
    if (j.contains("process")) c.process = parse_process(j["process"].get<std::string>());
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("sphere_step")) c.sphere_step = j["sphere_step"].get<double>();
    if (j.contains("arma_burn_in")) c.arma_burn_in = j["arma_burn_in"].get<std::size_t>();
  } catch (const Json::exception& e) {
    throw InputError(std::string("simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

inline SimConfig read_sim_config(const std::filesystem::path& path) {
  try {
    return sim_config_from_json(detail::parse_json(path));
  } catch (const FormatError& e) {
    throw InputError(e.what());
  }
}

}  // namespace knit::io
