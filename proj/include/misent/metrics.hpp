#pragma once

#include <cstddef>
#include <vector>

namespace misent {

// u.v / (|u||v|), clamped to [-1, 1] against rounding. Throws ZeroVector
// when either norm is zero.
double cosine(const std::vector<double>& u, const std::vector<double>& v);
double cosine(const float* u, const float* v, std::size_t n);

// Product-moment correlation. Requires |a| = |b| >= 2 and non-constant
// inputs (ConstantInput otherwise).
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// Fractional (average) ranks; ties share the mean of their rank positions.
std::vector<double> fractional_ranks(const std::vector<double>& values);

// Pearson correlation of the fractional ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct CorrelationReport {
  double spearman_rho = 0.0;
  double pearson_r = 0.0;
  std::size_t n_pairs = 0;
};

}  // namespace misent
