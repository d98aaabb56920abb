#pragma once

// Datasets, synthetic generators, feature-space augmentation and CSV I/O.
//
// A sample's features are a (slices x dim) matrix. Flat samples have one
// slice; scan-bags have a variable number of slices that share one label.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "noteacher/autodiff.hpp"
#include "noteacher/error.hpp"
#include "noteacher/models.hpp"
#include "noteacher/rng.hpp"

namespace nt {

enum class LabelMode { multilabel, unilabel };
enum class Structure { flat, scan_bag };

struct Sample {
  std::int64_t id = 0;
  Tensor x;
  std::vector<double> y;
  bool labeled = true;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t K = 0;
  std::size_t dim = 0;
  LabelMode mode = LabelMode::multilabel;
  Structure structure = Structure::flat;

  [[nodiscard]] std::size_t size() const { return samples.size(); }

  void validate() const {
    for (const auto& s : samples) {
      if (s.y.size() != K) throw DataError("sample " + std::to_string(s.id) + ": target length != K");
      if (s.x.cols() != dim || s.x.rows() == 0) {
        throw DataError("sample " + std::to_string(s.id) + ": feature shape " + to_string(s.x.shape));
      }
      if (structure == Structure::flat && s.x.rows() != 1) {
        throw DataError("sample " + std::to_string(s.id) + ": flat dataset holds a multi-slice sample");
      }
      if (!s.labeled) continue;
      double sum = 0.0;
      for (double v : s.y) {
        if (v != 0.0 && v != 1.0) throw DataError("sample " + std::to_string(s.id) + ": non-binary target");
        sum += v;
      }
      if (mode == LabelMode::unilabel && sum != 1.0) {
        throw DataError("sample " + std::to_string(s.id) + ": uni-label target is not one-hot");
      }
    }
  }

  [[nodiscard]] Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{{}, K, dim, mode, structure};
    d.samples.reserve(idx.size());
    for (std::size_t i : idx) d.samples.push_back(samples.at(i));
    return d;
  }

  /// Copy with labels hidden: targets zeroed, labeled flag cleared.
  [[nodiscard]] Dataset stripped() const {
    Dataset d = *this;
    for (auto& s : d.samples) {
      std::fill(s.y.begin(), s.y.end(), 0.0);
      s.labeled = false;
    }
    return d;
  }

  [[nodiscard]] Tensor targets() const {
    Tensor t(samples.size(), K);
    for (std::size_t i = 0; i < samples.size(); ++i)
      for (std::size_t k = 0; k < K; ++k) t(i, k) = samples[i].y[k];
    return t;
  }

  /// Class index of every (uni-label) sample.
  [[nodiscard]] std::vector<std::size_t> class_indices() const {
    std::vector<std::size_t> c;
    for (const auto& s : samples)
      c.push_back(static_cast<std::size_t>(std::max_element(s.y.begin(), s.y.end()) - s.y.begin()));
    return c;
  }
};

/// Stack samples into one BagBatch (flat samples become one-slice bags).
inline BagBatch stack(std::span<const Sample* const> samples, std::size_t dim) {
  std::size_t rows = 0;
  for (const Sample* s : samples) rows += s->x.rows();
  BagBatch b;
  b.slices = Tensor(rows, dim);
  std::size_t o = 0;
  for (const Sample* s : samples) {
    std::copy(s->x.data.begin(), s->x.data.end(), b.slices.data.begin() + o * dim);
    o += s->x.rows();
    b.offsets.push_back(o);
  }
  return b;
}

inline BagBatch stack(const Dataset& d) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : d.samples) ptrs.push_back(&s);
  return stack(ptrs, d.dim);
}

// ---------------------------------------------------------------------------
// Synthetic generation

struct ClassGeometry {
  std::size_t dim = 10;
  /// 0: well separated clusters, 1: identical class conditionals.
  double overlap = 0.5;
  /// Center distance at overlap 0, in units of noise_std.
  double separation_scale = 6.0;
  double noise_std = 1.0;
  /// Multi-label: P(y_k = 1), default 0.3 for every label.
  std::vector<double> prevalence;
  /// Multi-label: probability that label k > 0 copies label 0.
  double label_correlation = 0.0;
  /// Uni-label: class priors (uniform when empty).
  std::vector<double> class_weights;
  /// Uni-label: exact per-class sample counts; overrides n and class_weights.
  std::vector<std::size_t> class_counts;
  /// Scan-bag: slice-count range and fraction of slices carrying the signal.
  std::size_t min_slices = 4;
  std::size_t max_slices = 12;
  double signal_fraction = 0.25;

  void validate(std::size_t K) const {
    if (dim < 1) throw ConfigError("geometry.dim must be >= 1");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("geometry.overlap must lie in [0, 1]");
    if (!(noise_std > 0.0)) throw ConfigError("geometry.noise_std must be positive");
    if (!(separation_scale >= 0.0)) throw ConfigError("geometry.separation_scale must be nonnegative");
    if (!prevalence.empty() && prevalence.size() != K) throw ConfigError("geometry.prevalence must have K entries");
    for (double p : prevalence)
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("geometry.prevalence entries must lie in (0, 1)");
    if (!(label_correlation >= 0.0 && label_correlation <= 1.0)) {
      throw ConfigError("geometry.label_correlation must lie in [0, 1]");
    }
    if (!class_weights.empty() && class_weights.size() != K) {
      throw ConfigError("geometry.class_weights must have K entries");
    }
    for (double w : class_weights)
      if (!(w >= 0.0)) throw ConfigError("geometry.class_weights must be nonnegative");
    if (!class_counts.empty() && class_counts.size() != K) {
      throw ConfigError("geometry.class_counts must have K entries");
    }
    if (min_slices < 1 || max_slices < min_slices) throw ConfigError("geometry: need 1 <= min_slices <= max_slices");
    if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
      throw ConfigError("geometry.signal_fraction must lie in (0, 1]");
    }
  }
};

namespace data_detail {

/// K unit directions in R^dim, orthonormal when K <= dim.
inline std::vector<std::vector<double>> class_directions(std::size_t K, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> dirs;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> v(dim);
    for (int attempt = 0; attempt < 16; ++attempt) {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& x : v) x = normal(rng);
      if (k < dim) {
        for (const auto& u : dirs) {
          double dot = 0.0;
          for (std::size_t j = 0; j < dim; ++j) dot += v[j] * u[j];
          for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * u[j];
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (double& x : v) x /= norm;
        break;
      }
    }
    dirs.push_back(v);
  }
  return dirs;
}

}  // namespace data_detail

/// Deterministic synthetic dataset.
///
/// Multi-label: label k shifts features by +-separation/2 along its own
/// direction. Uni-label: K Gaussian clusters with pairwise center distance
/// `separation`. Scan-bags: noise slices, of which a fraction carry the shift.
inline Dataset gen_synthetic(std::uint64_t seed, std::size_t n, std::size_t K, LabelMode mode,
                             Structure structure, const ClassGeometry& geo) {
  if (K < 1) throw ConfigError("K must be >= 1");
  geo.validate(K);
  const bool exact_counts = mode == LabelMode::unilabel && !geo.class_counts.empty();
  if (exact_counts) {
    n = 0;
    for (auto c : geo.class_counts) n += c;
  }
  if (n < K) throw ConfigError("n must be >= K");
  Rng rng(seed);
  const auto dirs = data_detail::class_directions(K, geo.dim, rng);
  const double sep = geo.separation_scale * (1.0 - geo.overlap) * geo.noise_std;

  std::vector<std::size_t> classes;
  if (exact_counts) {
    for (std::size_t k = 0; k < K; ++k) classes.insert(classes.end(), geo.class_counts[k], k);
    std::shuffle(classes.begin(), classes.end(), rng);
  }

  Dataset d{{}, K, geo.dim, mode, structure};
  d.samples.reserve(n);
  std::normal_distribution<double> noise(0.0, geo.noise_std);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = static_cast<std::int64_t>(i);
    s.y.assign(K, 0.0);
    std::vector<double> shift(geo.dim, 0.0);
    std::vector<double> neg_shift(geo.dim, 0.0);  // flat multi-label: negatives sit at -sep/2
    if (mode == LabelMode::multilabel) {
      for (std::size_t k = 0; k < K; ++k) {
        const double prev = geo.prevalence.empty() ? 0.3 : geo.prevalence[k];
        const bool copy = k > 0 && unit(rng) < geo.label_correlation;
        s.y[k] = copy ? s.y[0] : (unit(rng) < prev ? 1.0 : 0.0);
      }
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < geo.dim; ++j) {
          if (s.y[k] == 1.0) shift[j] += sep * dirs[k][j];
          neg_shift[j] += (s.y[k] - 0.5) * sep * dirs[k][j];
        }
    } else {
      std::size_t c = 0;
      if (exact_counts) {
        c = classes[i];
      } else if (geo.class_weights.empty()) {
        c = std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
      } else {
        c = std::discrete_distribution<std::size_t>(geo.class_weights.begin(), geo.class_weights.end())(rng);
      }
      s.y[c] = 1.0;
      for (std::size_t j = 0; j < geo.dim; ++j) shift[j] = sep / std::sqrt(2.0) * dirs[c][j];
      neg_shift = shift;
    }
    if (structure == Structure::flat) {
      s.x = Tensor(1, geo.dim);
      for (std::size_t j = 0; j < geo.dim; ++j) s.x.data[j] = noise(rng) + neg_shift[j];
    } else {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(geo.min_slices, geo.max_slices)(rng);
      const std::size_t nsig = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(geo.signal_fraction * double(len))));
      std::vector<std::size_t> order(len);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<bool> signal(len, false);
      for (std::size_t r = 0; r < nsig; ++r) signal[order[r]] = true;
      s.x = Tensor(len, geo.dim);
      for (std::size_t r = 0; r < len; ++r)
        for (std::size_t j = 0; j < geo.dim; ++j) s.x(r, j) = noise(rng) + (signal[r] ? shift[j] : 0.0);
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Cumulative augmentation levels: each level includes the previous ones.
enum class AugLevel { none, noise, noise_affine, noise_affine_intensity };

struct AugPolicy {
  AugLevel level = AugLevel::noise;
  double noise_std = 0.1;
  double scale_range = 0.1;      // per-feature scale in [1 - r, 1 + r]
  double shift_std = 0.1;        // per-feature shift
  double intensity_range = 0.2;  // exponent in [1/(1 + r), 1 + r]
};

/// One draw of augmentation parameters; applied identically to every slice.
struct AugTransform {
  AugLevel level = AugLevel::none;
  std::vector<double> noise;
  std::vector<double> scale;
  std::vector<double> shift;
  double exponent = 1.0;
};

template <typename URBG>
AugTransform draw_transform(const AugPolicy& policy, std::size_t dim, URBG& rng) {
  AugTransform t;
  t.level = policy.level;
  if (policy.level == AugLevel::none) return t;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  t.noise.resize(dim);
  for (double& v : t.noise) v = policy.noise_std * normal(rng);
  if (policy.level == AugLevel::noise) return t;
  t.scale.resize(dim);
  t.shift.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    t.scale[j] = 1.0 + policy.scale_range * (2.0 * unit(rng) - 1.0);
    t.shift[j] = policy.shift_std * normal(rng);
  }
  if (policy.level == AugLevel::noise_affine) return t;
  const double hi = std::log1p(policy.intensity_range);
  t.exponent = std::exp(hi * (2.0 * unit(rng) - 1.0));
  return t;
}

/// Affine remap, then a monotone power remap sign(v)|v|^e, then additive noise.
inline Sample apply_transform(const Sample& s, const AugTransform& t) {
  if (t.level == AugLevel::none) return s;
  Sample out = s;
  const std::size_t dim = s.x.cols();
  if (t.noise.size() != dim) throw ShapeError("augment: transform drawn for a different feature dim");
  for (std::size_t r = 0; r < s.x.rows(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      double v = s.x(r, j);
      if (!t.scale.empty()) v = t.scale[j] * v + t.shift[j];
      if (t.exponent != 1.0) v = std::copysign(std::pow(std::abs(v), t.exponent), v);
      out.x(r, j) = v + t.noise[j];
    }
  }
  return out;
}

/// One transform per sample (per scan for bags), never per slice.
template <typename URBG>
Sample augment(const Sample& s, const AugPolicy& policy, URBG& rng) {
  if (policy.level == AugLevel::none) return s;
  return apply_transform(s, draw_transform(policy, s.x.cols(), rng));
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  /// Label columns by name; when empty, every column starting with label_prefix.
  std::vector<std::string> label_columns;
  std::string label_prefix = "label_";
  /// Optional sample-id column.
  std::string id_column = "id";
  /// Optional column grouping rows into scan-bags.
  std::string bag_column = "bag";
  LabelMode mode = LabelMode::multilabel;
};

namespace csv_detail {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && ws(s[b])) ++b;
  return s.substr(b);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace csv_detail

inline Dataset read_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: missing header row");
  auto header = csv_detail::split(line);
  for (auto& h : header) h = csv_detail::trim(h);
  std::optional<std::size_t> id_col, bag_col;
  std::vector<std::size_t> label_cols, feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    const bool named_label = std::find(schema.label_columns.begin(), schema.label_columns.end(), h) !=
                             schema.label_columns.end();
    const bool prefixed = schema.label_columns.empty() && !schema.label_prefix.empty() &&
                          h.rfind(schema.label_prefix, 0) == 0;
    if (!schema.id_column.empty() && h == schema.id_column) {
      id_col = c;
    } else if (!schema.bag_column.empty() && h == schema.bag_column) {
      bag_col = c;
    } else if (named_label || prefixed) {
      label_cols.push_back(c);
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_cols.empty()) throw DataError("csv: no label columns in header");
  if (feature_cols.empty()) throw DataError("csv: no feature columns in header");
  for (const auto& name : schema.label_columns)
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw DataError("csv: label column '" + name + "' not in header");
    }

  Dataset d{{}, label_cols.size(), feature_cols.size(), schema.mode,
            bag_col ? Structure::scan_bag : Structure::flat};
  std::map<std::string, std::size_t> bag_index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv_detail::trim(line).empty()) continue;
    const auto cells = csv_detail::split(line);
    const std::string where = "csv line " + std::to_string(lineno) + ": ";
    if (cells.size() != header.size()) {
      throw DataError(where + "expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    std::vector<double> feats;
    for (std::size_t c : feature_cols) {
      const auto v = csv_detail::parse_double(csv_detail::trim(cells[c]));
      if (!v || !std::isfinite(*v)) throw DataError(where + "bad feature value '" + cells[c] + "'");
      feats.push_back(*v);
    }
    std::vector<double> y;
    std::size_t empty = 0;
    for (std::size_t c : label_cols) {
      const auto cell = csv_detail::trim(cells[c]);
      if (cell.empty()) {
        ++empty;
        y.push_back(0.0);
        continue;
      }
      const auto v = csv_detail::parse_double(cell);
      if (!v || (*v != 0.0 && *v != 1.0)) throw DataError(where + "label must be 0, 1 or empty");
      y.push_back(*v);
    }
    if (empty != 0 && empty != label_cols.size()) {
      throw DataError(where + "row mixes labeled and empty label cells");
    }
    const bool labeled = empty == 0;

    std::optional<std::int64_t> id;
    if (id_col) {
      const auto v = csv_detail::parse_double(csv_detail::trim(cells[*id_col]));
      if (!v || *v != std::floor(*v)) throw DataError(where + "bad id '" + cells[*id_col] + "'");
      id = static_cast<std::int64_t>(*v);
    }

    const std::size_t width = feats.size();
    Tensor row(1, width, std::move(feats));
    if (bag_col) {
      const std::string key = csv_detail::trim(cells[*bag_col]);
      auto it = bag_index.find(key);
      if (it == bag_index.end()) {
        bag_index.emplace(key, d.samples.size());
        Sample s{id.value_or(static_cast<std::int64_t>(d.samples.size())), row, y, labeled};
        d.samples.push_back(std::move(s));
      } else {
        Sample& s = d.samples[it->second];
        if (s.y != y || s.labeled != labeled) throw DataError(where + "labels differ within bag '" + key + "'");
        Tensor grown(s.x.rows() + 1, s.x.cols());
        std::copy(s.x.data.begin(), s.x.data.end(), grown.data.begin());
        std::copy(row.data.begin(), row.data.end(), grown.data.begin() + s.x.size());
        s.x = std::move(grown);
      }
    } else {
      d.samples.push_back(Sample{id.value_or(static_cast<std::int64_t>(d.samples.size())), row, y, labeled});
    }
  }
  d.validate();
  return d;
}

inline Dataset ingest_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open '" + path + "'");
  return read_csv(in, schema);
}

/// Writes id, optional bag, feature columns x0.., label columns label_0..
/// Values use the shortest round-trip decimal form.
inline void write_csv(std::ostream& out, const Dataset& d) {
  const bool bags = d.structure == Structure::scan_bag;
  out << "id";
  if (bags) out << ",bag";
  for (std::size_t j = 0; j < d.dim; ++j) out << ",x" << j;
  for (std::size_t k = 0; k < d.K; ++k) out << ",label_" << k;
  out << '\n';
  for (const auto& s : d.samples) {
    for (std::size_t r = 0; r < s.x.rows(); ++r) {
      out << s.id;
      if (bags) out << ',' << s.id;
      for (std::size_t j = 0; j < d.dim; ++j) out << ',' << csv_detail::format_double(s.x(r, j));
      for (std::size_t k = 0; k < d.K; ++k) {
        out << ',';
        if (s.labeled) out << (s.y[k] == 1.0 ? '1' : '0');
      }
      out << '\n';
    }
  }
}

}  // namespace nt
