#include "dina/features.hpp"

#include <algorithm>
#include <cmath>

#include "dina/errors.hpp"
#include "dina/rng.hpp"

namespace dina {

void validate(const FeatureSpace& space) {
  if (space.dim < 1024 || (space.dim & (space.dim - 1)) != 0) {
    throw ConfigError("FeatureSpace: dim must be a power of two >= 1024");
  }
  if (space.ngram_orders.empty()) {
    throw ConfigError("FeatureSpace: ngram_orders must be non-empty");
  }
  for (int n : space.ngram_orders) {
    if (n < 1) throw ConfigError("FeatureSpace: ngram orders must be positive");
  }
}

FeatureVector featurize(const std::vector<std::string>& tokens, const FeatureSpace& space) {
  validate(space);
  FeatureVector fv;
  fv.dim = space.dim;
  if (tokens.empty()) return fv;

  // Seed participates in the hash so distinct spaces disagree on bucket layout.
  std::uint64_t seeded = 14695981039346656037ull;
  {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) {
      bytes[i] = static_cast<unsigned char>((space.hash_seed >> (8 * i)) & 0xFF);
    }
    seeded = fnv1a64(bytes, 8, seeded);
  }

  const int len = static_cast<int>(tokens.size());
  std::vector<int> buckets;
  for (int order : space.ngram_orders) {
    if (order > len) continue;
    for (int i = 0; i + order <= len; ++i) {
      std::uint64_t h = seeded;
      for (int j = 0; j < order; ++j) {
        const std::string& t = tokens[static_cast<std::size_t>(i + j)];
        h = fnv1a64(t.data(), t.size(), h);
        h = fnv1a64("\x1f", 1, h);  // token separator, keeps ab|c distinct from a|bc
      }
      buckets.push_back(static_cast<int>(h & static_cast<std::uint64_t>(space.dim - 1)));
    }
  }
  std::sort(buckets.begin(), buckets.end());

  const double scale = 1.0 / std::sqrt(static_cast<double>(len));
  for (std::size_t i = 0; i < buckets.size();) {
    std::size_t j = i;
    while (j < buckets.size() && buckets[j] == buckets[i]) ++j;
    fv.idx.push_back(buckets[i]);
    fv.val.push_back(static_cast<double>(j - i) * scale);
    i = j;
  }
  return fv;
}

FeatureVector axpy_merge(double a, const FeatureVector& x, double b, const FeatureVector& y) {
  if (x.dim != y.dim) throw DataError("axpy_merge: dimension mismatch");
  FeatureVector out;
  out.dim = x.dim;
  out.idx.reserve(x.idx.size() + y.idx.size());
  out.val.reserve(x.idx.size() + y.idx.size());
  std::size_t i = 0, j = 0;
  while (i < x.idx.size() || j < y.idx.size()) {
    if (j >= y.idx.size() || (i < x.idx.size() && x.idx[i] < y.idx[j])) {
      out.idx.push_back(x.idx[i]);
      out.val.push_back(a * x.val[i]);
      ++i;
    } else if (i >= x.idx.size() || y.idx[j] < x.idx[i]) {
      out.idx.push_back(y.idx[j]);
      out.val.push_back(b * y.val[j]);
      ++j;
    } else {
      out.idx.push_back(x.idx[i]);
      out.val.push_back(a * x.val[i] + b * y.val[j]);
      ++i;
      ++j;
    }
  }
  return out;
}

}  // namespace dina
