#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dina {

struct FeatureSpace {
  int dim = 1 << 16;                      // power of two, >= 1024
  std::uint64_t hash_seed = 0x5157;
  std::vector<int> ngram_orders = {1, 2, 3};
};

// Sparse vector with strictly increasing indices. dim is carried so dimension
// mismatches are caught at use sites instead of corrupting dot products.
struct FeatureVector {
  std::vector<int> idx;
  std::vector<double> val;
  int dim = 0;

  double squared_norm() const {
    double s = 0.0;
    for (double v : val) s += v * v;
    return s;
  }
};

// Hashed character n-gram counts scaled by 1 / sqrt(token count). Empty token
// sequences map to the zero vector.
FeatureVector featurize(const std::vector<std::string>& tokens, const FeatureSpace& space);

// a * x + b * y with index sets merged; used by MixUp.
FeatureVector axpy_merge(double a, const FeatureVector& x, double b, const FeatureVector& y);

void validate(const FeatureSpace& space);

}  // namespace dina
