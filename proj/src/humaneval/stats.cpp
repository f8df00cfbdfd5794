#include "ctn/humaneval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include "ctn/error.hpp"

namespace ctn::humaneval {

std::vector<std::size_t> proportional_quotas(const std::vector<Stratum>& strata, std::size_t n) {
  if (strata.empty()) throw Error(ErrorCode::empty_input, "no strata");
  std::size_t total = 0;
  for (const auto& s : strata) total += s.population;
  if (n > total) throw Error(ErrorCode::quota_exceeded, "sample size exceeds total population");
  std::vector<std::size_t> quotas(strata.size(), 0);
  if (n == 0) return quotas;

  std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder numerator, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const auto prod = static_cast<unsigned __int128>(n) * strata[i].population;
    quotas[i] = static_cast<std::size_t>(prod / total);
    rem.emplace_back(static_cast<std::size_t>(prod % total), i);
    assigned += quotas[i];
  }
  std::stable_sort(rem.begin(), rem.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return strata[a.second].population > strata[b.second].population;
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++quotas[rem[k].second];
  for (std::size_t i = 0; i < strata.size(); ++i)
    if (quotas[i] > strata[i].population)
      throw Error(ErrorCode::quota_exceeded, "stratum " + strata[i].name + " is smaller than its quota");
  return quotas;
}

StratifiedSample stratified_sample(const std::vector<Stratum>& strata, std::size_t n, std::uint64_t seed) {
  StratifiedSample out;
  out.quotas = proportional_quotas(strata, n);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const std::size_t pop = strata[i].population;
    const std::size_t q = out.quotas[i];
    // Partial Fisher-Yates over a sparse index map keeps memory at O(q).
    std::unordered_map<std::size_t, std::size_t> moved;
    auto value_at = [&](std::size_t idx) {
      const auto it = moved.find(idx);
      return it == moved.end() ? idx : it->second;
    };
    std::vector<std::size_t> picked;
    for (std::size_t j = 0; j < q; ++j) {
      std::uniform_int_distribution<std::size_t> dist(j, pop - 1);
      const std::size_t r = dist(rng);
      const std::size_t vr = value_at(r), vj = value_at(j);
      picked.push_back(vr);
      moved[r] = vj;
      moved[j] = vr;
    }
    std::sort(picked.begin(), picked.end());
    out.members.push_back(std::move(picked));
  }
  return out;
}

double z_value(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::invariant_violation, "confidence must be in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - (1.0 - confidence) / 2.0);
}

double margin_of_error(std::size_t n, std::size_t N, double confidence) {
  if (n == 0) throw Error(ErrorCode::invariant_violation, "n must be > 0");
  if (n > N) throw Error(ErrorCode::invariant_violation, "n exceeds population N");
  const double z = z_value(confidence);
  if (n == N) return 0.0;
  const double fpc = std::sqrt(static_cast<double>(N - n) / static_cast<double>(N - 1));
  return z * std::sqrt(0.25 / static_cast<double>(n)) * fpc;
}

IccResult icc_absolute(const std::vector<std::vector<double>>& ratings, double confidence) {
  const std::size_t n = ratings.size();
  if (n < 2) throw Error(ErrorCode::incomplete_matrix, "ICC needs at least 2 subjects");
  const std::size_t k = ratings.front().size();
  if (k < 2) throw Error(ErrorCode::incomplete_matrix, "ICC needs at least 2 raters");
  for (const auto& row : ratings) {
    if (row.size() != k) throw Error(ErrorCode::incomplete_matrix, "rating matrix is ragged");
    for (double v : row)
      if (!std::isfinite(v)) throw Error(ErrorCode::incomplete_matrix, "rating matrix has missing cells");
  }
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::invariant_violation, "confidence must be in (0, 1)");

  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  double grand = 0.0;
  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += ratings[i][j] / dk;
      col_mean[j] += ratings[i][j] / dn;
      grand += ratings[i][j];
    }
  grand /= dn * dk;
  double ss_rows = 0.0, ss_cols = 0.0, ss_total = 0.0;
  for (double m : row_mean) ss_rows += dk * (m - grand) * (m - grand);
  for (double m : col_mean) ss_cols += dn * (m - grand) * (m - grand);
  for (const auto& row : ratings)
    for (double v : row) ss_total += (v - grand) * (v - grand);
  const double ss_err = std::max(0.0, ss_total - ss_rows - ss_cols);

  IccResult r;
  r.confidence = confidence;
  r.ms_rows = ss_rows / (dn - 1.0);
  r.ms_cols = ss_cols / (dk - 1.0);
  r.ms_error = ss_err / ((dn - 1.0) * (dk - 1.0));
  const double scale = std::max(1.0, ss_total);
  if (r.ms_error <= 1e-12 * scale && r.ms_cols <= 1e-12 * scale) {
    r.icc = r.ci_low = r.ci_high = 1.0;
    r.limit = true;
    return r;
  }
  const double msr = r.ms_rows, msc = r.ms_cols, mse = r.ms_error;
  r.icc = (msr - mse) / (msr + (dk - 1.0) * mse + dk * (msc - mse) / dn);

  const double alpha = 1.0 - confidence;
  const double a = dk * r.icc / (dn * (1.0 - r.icc));
  const double b = 1.0 + dk * r.icc * (dn - 1.0) / (dn * (1.0 - r.icc));
  const double num = (a * msc + b * mse) * (a * msc + b * mse);
  const double den = (a * msc) * (a * msc) / (dk - 1.0) + (b * mse) * (b * mse) / ((dn - 1.0) * (dk - 1.0));
  const double v = num / den;
  if (!(std::isfinite(v) && v > 0.0)) {
    r.ci_low = r.ci_high = std::nan("");
    return r;
  }
  const double f_lo = boost::math::quantile(boost::math::fisher_f(dn - 1.0, v), 1.0 - alpha / 2.0);
  const double f_hi = boost::math::quantile(boost::math::fisher_f(v, dn - 1.0), 1.0 - alpha / 2.0);
  const double c = dk * msc + (dk * dn - dk - dn) * mse;
  r.ci_low = dn * (msr - f_lo * mse) / (f_lo * c + dn * msr);
  r.ci_high = dn * (f_hi * msr - mse) / (c + dn * f_hi * msr);
  return r;
}

}  // namespace ctn::humaneval
