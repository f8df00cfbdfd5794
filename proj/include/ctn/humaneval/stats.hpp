#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ctn::humaneval {

struct Stratum {
  std::string name;
  std::size_t population = 0;
};

struct StratifiedSample {
  std::vector<std::size_t> quotas;
  /// Sampled member indices per stratum, ascending.
  std::vector<std::vector<std::size_t>> members;
};

/// Largest-remainder quotas of n·pop_i/Σpop (ties go to the larger stratum,
/// then the earlier one), then uniform sampling without replacement per stratum.
std::vector<std::size_t> proportional_quotas(const std::vector<Stratum>& strata, std::size_t n);
StratifiedSample stratified_sample(const std::vector<Stratum>& strata, std::size_t n, std::uint64_t seed);

/// Two-sided standard-normal quantile for a confidence level.
double z_value(double confidence);
/// z·sqrt(0.25/n)·sqrt((N−n)/(N−1)).
double margin_of_error(std::size_t n, std::size_t N, double confidence);

struct IccResult {
  double icc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double confidence = 0.95;
  /// Set when there is no error or rater variance (perfect agreement) and the limit value 1 is returned.
  bool limit = false;
  double ms_rows = 0.0;
  double ms_cols = 0.0;
  double ms_error = 0.0;
};

/// ICC(2,1): two-way random effects, single rater, absolute agreement, with
/// the F-distribution confidence interval. ratings[subject][rater].
IccResult icc_absolute(const std::vector<std::vector<double>>& ratings, double confidence = 0.95);

}  // namespace ctn::humaneval
