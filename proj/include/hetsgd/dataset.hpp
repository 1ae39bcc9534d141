#pragma once

// Dense in-memory datasets, LIBSVM text I/O, shuffling and batch references.

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetsgd/errors.hpp"
#include "hetsgd/linalg.hpp"
#include "hetsgd/nn_model.hpp"

namespace hetsgd {

struct Dataset {
  Matrix features;  // N x d
  std::vector<Label> labels;
  std::size_t classCount = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  void validate() const {
    if (labels.empty()) throw InputError("dataset '" + name + "' is empty");
    if (features.rows() != labels.size()) throw InputError("feature rows != label count");
    for (Label y : labels)
      if (y >= classCount) throw InputError("label out of range in dataset '" + name + "'");
    for (double v : features.values())
      if (!std::isfinite(v)) throw InputError("non-finite feature in dataset '" + name + "'");
  }
};

/// A contiguous row range of a dataset. Never owns or copies feature data.
struct BatchRef {
  const Dataset* dataset = nullptr;
  std::size_t startRow = 0;
  std::size_t length = 0;

  MatrixView features() const { return dataset->features.view().rowRange(startRow, length); }
  std::span<const Label> labels() const { return std::span<const Label>(dataset->labels).subspan(startRow, length); }

  BatchRef sub(std::size_t offset, std::size_t count) const {
    detail::require(offset + count <= length, "sub-batch exceeds batch");
    return {dataset, startRow + offset, count};
  }
};

inline BatchRef makeBatch(const Dataset& ds, std::size_t start, std::size_t length) {
  if (length == 0 || start + length > ds.size()) throw PreconditionError("batch range outside dataset");
  return {&ds, start, length};
}

enum class LabelMapping {
  ZeroOne,       // labels are already 0-based class indices
  PlusMinusOne,  // -1 -> 0, +1 -> 1
  OneBased,      // 1..k -> 0..k-1 (e.g. covtype.binary uses 1/2)
};

namespace detail {

inline std::string readAllText(const std::string& path) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  std::string text;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw InputError("cannot open '" + path + "'");
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof buf)) > 0) text.append(buf, static_cast<std::size_t>(n));
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw InputError("gzip read error in '" + path + "'");
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return text;
}

inline bool parseDouble(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool parseIndex(std::string_view s, std::size_t& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Loads a LIBSVM file (1-based sparse indices) into a dense matrix. Files
/// ending in ".gz" are decompressed. Multi-label lines keep the first label.
inline Dataset loadLibsvm(const std::string& path, std::size_t featureDim, LabelMapping mapping) {
  if (featureDim == 0) throw InputError("featureDim must be >= 1");
  const std::string text = detail::readAllText(path);

  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t lineNo = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::vector<std::string_view> tokens;
    for (std::size_t i = 0; i < line.size();) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) tokens.push_back(line.substr(i, j - i));
      i = j;
    }
    if (tokens.empty()) continue;

    std::string_view labelTok = tokens[0].substr(0, tokens[0].find(','));
    double rawLabel = 0.0;
    if (!detail::parseDouble(labelTok, rawLabel) || !std::isfinite(rawLabel))
      throw ParseError("malformed label '" + std::string(tokens[0]) + "'", lineNo);

    Label label = 0;
    switch (mapping) {
      case LabelMapping::PlusMinusOne:
        label = rawLabel > 0 ? 1 : 0;
        break;
      case LabelMapping::ZeroOne:
      case LabelMapping::OneBased: {
        const double shifted = mapping == LabelMapping::OneBased ? rawLabel - 1.0 : rawLabel;
        if (shifted < 0 || shifted != std::floor(shifted))
          throw ParseError("label '" + std::string(labelTok) + "' is not a valid class index", lineNo);
        label = static_cast<Label>(shifted);
        break;
      }
    }

    const std::size_t base = values.size();
    values.resize(base + featureDim, 0.0);
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) throw ParseError("expected idx:val, got '" + std::string(tokens[t]) + "'", lineNo);
      std::size_t idx = 0;
      double v = 0.0;
      if (!detail::parseIndex(tokens[t].substr(0, colon), idx) || idx == 0)
        throw ParseError("bad feature index in '" + std::string(tokens[t]) + "'", lineNo);
      if (!detail::parseDouble(tokens[t].substr(colon + 1), v) || !std::isfinite(v))
        throw ParseError("bad feature value in '" + std::string(tokens[t]) + "'", lineNo);
      if (idx > featureDim)
        throw InputError("feature index " + std::to_string(idx) + " exceeds dimension " + std::to_string(featureDim) +
                         " (line " + std::to_string(lineNo) + ")");
      values[base + idx - 1] = v;
    }
    labels.push_back(label);
  }

  Dataset ds;
  ds.name = path;
  ds.classCount = labels.empty() ? 0 : *std::ranges::max_element(labels) + 1;
  if (mapping == LabelMapping::PlusMinusOne) ds.classCount = 2;
  ds.features = Matrix(labels.size(), featureDim, std::move(values));
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

/// Writes the dataset back in LIBSVM form (zeros omitted, full precision).
inline void writeLibsvm(const Dataset& ds, const std::string& path, LabelMapping mapping = LabelMapping::ZeroOne) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot write '" + path + "'");
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const Label y = ds.labels[r];
    switch (mapping) {
      case LabelMapping::ZeroOne: std::fprintf(f, "%u", y); break;
      case LabelMapping::PlusMinusOne: std::fprintf(f, "%s", y ? "+1" : "-1"); break;
      case LabelMapping::OneBased: std::fprintf(f, "%u", y + 1); break;
    }
    for (std::size_t c = 0; c < ds.dim(); ++c) {
      const double v = ds.features(r, c);
      if (v != 0.0) std::fprintf(f, " %zu:%.17g", c + 1, v);
    }
    std::fputc('\n', f);
  }
  std::fclose(f);
}

/// Seed for epoch `epoch` of a run seeded with `runSeed`.
inline std::uint64_t epochSeed(std::uint64_t runSeed, std::size_t epoch) {
  return detail::splitmix64(runSeed ^ detail::splitmix64(epoch + 1));
}

inline std::vector<std::size_t> shuffleEpoch(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Materializes rows in `order` so batches of the result stay contiguous.
inline Dataset reorder(const Dataset& ds, std::span<const std::size_t> order) {
  Dataset out;
  out.name = ds.name;
  out.classCount = ds.classCount;
  out.features = Matrix(order.size(), ds.dim());
  out.labels.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = ds.features.view().row(order[i]);
    std::ranges::copy(src, out.features.raw() + i * ds.dim());
    out.labels[i] = ds.labels[order[i]];
  }
  return out;
}

/// Stratified sample of n rows (largest-remainder allocation per class),
/// returned in original row order.
inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InputError("subsample size must be >= 1");
  if (n > ds.size()) throw InputError("subsample size exceeds dataset size");

  std::vector<std::vector<std::size_t>> byClass(ds.classCount);
  for (std::size_t i = 0; i < ds.size(); ++i) byClass[ds.labels[i]].push_back(i);

  const double total = static_cast<double>(ds.size());
  std::vector<std::size_t> take(ds.classCount);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ds.classCount; ++c) {
    const double exact = static_cast<double>(n) * static_cast<double>(byClass[c].size()) / total;
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::ranges::stable_sort(remainders, [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++take[remainders[i % remainders.size()].second];

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t c = 0; c < ds.classCount; ++c) {
    auto& rows = byClass[c];
    std::shuffle(rows.begin(), rows.end(), rng);
    chosen.insert(chosen.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(take[c], rows.size())));
  }
  std::ranges::sort(chosen);
  Dataset out = reorder(ds, chosen);
  out.name = ds.name + "[" + std::to_string(n) + "]";
  return out;
}

/// Isotropic unit-variance Gaussian clusters, one per class, rows
/// interleaved by class. With classes <= dim the class means are pairwise
/// `separation` apart.
inline Dataset syntheticBlobs(std::size_t n, std::size_t dim, std::size_t classes, double separation,
                              std::uint64_t seed) {
  if (classes < 2) throw InputError("syntheticBlobs needs at least 2 classes");
  if (n == 0 || dim == 0) throw InputError("syntheticBlobs needs n >= 1 and dim >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  const double radius = separation / std::sqrt(2.0);
  Matrix means(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    if (classes <= dim) {
      means(c, c) = radius;
    } else {
      double norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        means(c, j) = unit(rng);
        norm += means(c, j) * means(c, j);
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < dim; ++j) means(c, j) *= radius / norm;
    }
  }

  Dataset ds;
  ds.name = "blobs";
  ds.classCount = classes;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Label>(i % classes);
    ds.labels[i] = c;
    for (std::size_t j = 0; j < dim; ++j) ds.features(i, j) = means(c, j) + unit(rng);
  }
  return ds;
}

/// Rescales every feature column to [0, 1]; constant columns become 0.
inline void minMaxScale(Dataset& ds) {
  for (std::size_t c = 0; c < ds.dim(); ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      lo = std::min(lo, ds.features(r, c));
      hi = std::max(hi, ds.features(r, c));
    }
    const double span = hi - lo;
    for (std::size_t r = 0; r < ds.size(); ++r)
      ds.features(r, c) = span > 0 ? (ds.features(r, c) - lo) / span : 0.0;
  }
}

}  // namespace hetsgd
