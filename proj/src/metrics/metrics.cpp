#include "ctn/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "ctn/error.hpp"
#include "ctn/text/tokenizer.hpp"

namespace ctn::metrics {

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

using Ngrams = std::map<std::string, double>;

std::vector<Ngrams> count_ngrams(const std::string& text) {
  const auto toks = text::tokenize(text);
  std::vector<Ngrams> out(4);
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      std::string key = toks[i];
      for (std::size_t k = 1; k < n; ++k) key += ' ' + toks[i + k];
      out[n - 1][key] += 1.0;
    }
  }
  return out;
}

std::size_t token_length(const std::string& text) { return text::tokenize(text).size(); }

}  // namespace

RougeResult rouge_l(const std::string& candidate, const std::vector<std::string>& references, double beta) {
  if (references.empty()) throw Error(ErrorCode::empty_input, "rouge_l needs at least one reference");
  RougeResult r;
  const auto cand = text::tokenize(candidate);
  if (cand.empty()) {
    r.empty_candidate = true;
    return r;
  }
  for (const auto& ref_text : references) {
    const auto ref = text::tokenize(ref_text);
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(cand.size());
    const double rec = lcs / static_cast<double>(ref.size());
    const double f = (1.0 + beta * beta) * p * rec / (rec + beta * beta * p);
    r.score = std::max(r.score, f);
  }
  return r;
}

CiderResult cider(const std::vector<EvalPair>& pairs, const CiderOptions& opts) {
  if (pairs.size() < 2) throw Error(ErrorCode::insufficient_corpus, "CIDEr needs a corpus of at least 2 pairs");
  for (const auto& p : pairs)
    if (p.references.empty()) throw Error(ErrorCode::empty_input, p.video_id + ": no references");

  std::vector<std::vector<Ngrams>> cand_counts;
  std::vector<std::vector<std::vector<Ngrams>>> ref_counts;
  std::map<std::string, double> df;
  for (const auto& p : pairs) {
    cand_counts.push_back(count_ngrams(p.candidate));
    std::vector<std::vector<Ngrams>> refs;
    std::set<std::string> seen;
    for (const auto& r : p.references) {
      refs.push_back(count_ngrams(r));
      for (const auto& grams : refs.back())
        for (const auto& [g, _] : grams) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
    ref_counts.push_back(std::move(refs));
  }
  const double log_n = std::log(static_cast<double>(pairs.size()));

  auto tfidf = [&](const Ngrams& counts, std::map<std::string, double>& vec) {
    double norm = 0.0;
    for (const auto& [g, tf] : counts) {
      const auto it = df.find(g);
      const double idf = log_n - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double w = tf * idf;
      vec[g] = w;
      norm += w * w;
    }
    return std::sqrt(norm);
  };

  CiderResult out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t cand_len = token_length(pairs[i].candidate);
    double total = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      std::map<std::string, double> cv;
      const double cn = tfidf(cand_counts[i][n], cv);
      double acc = 0.0;
      for (std::size_t r = 0; r < ref_counts[i].size(); ++r) {
        std::map<std::string, double> rv;
        const double rn = tfidf(ref_counts[i][r][n], rv);
        double dot = 0.0;
        for (const auto& [g, w] : cv) {
          const auto it = rv.find(g);
          if (it == rv.end()) continue;
          dot += opts.cider_d ? std::min(w, it->second) * it->second : w * it->second;
        }
        double sim = (cn > 0.0 && rn > 0.0) ? dot / (cn * rn) : 0.0;
        if (opts.cider_d) {
          const double delta = static_cast<double>(cand_len) - static_cast<double>(token_length(pairs[i].references[r]));
          sim *= std::exp(-(delta * delta) / (2.0 * opts.sigma * opts.sigma));
        }
        acc += sim;
      }
      total += acc / static_cast<double>(ref_counts[i].size());
    }
    out.per_pair.push_back(10.0 * total / 4.0);
  }
  double sum = 0.0;
  for (double s : out.per_pair) sum += s;
  out.mean = sum / static_cast<double>(out.per_pair.size());
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  const bool with_spice = spice_status == "ok";
  os << "video_id,ROUGE_L,CIDEr" << (with_spice ? ",SPICE" : "") << ",temporal,causal\n";
  for (const auto& r : rows) {
    os << r.video_id << ',' << r.rouge_l << ',' << r.cider;
    if (with_spice) {
      os << ',';
      if (r.spice) os << *r.spice;
    }
    os << ',';
    if (r.temporal) os << *r.temporal;
    os << ',';
    if (r.causal) os << *r.causal;
    os << '\n';
  }
  return os.str();
}

nlohmann::json EvalReport::summary() const {
  auto mean_of = [&](auto get) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (auto v = get(r)) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return 100.0 * sum / static_cast<double>(n);
  };
  nlohmann::json j;
  j["count"] = rows.size();
  j["ROUGE_L"] = mean_of([](const ReportRow& r) { return std::optional<double>(r.rouge_l); }).value_or(0.0);
  j["CIDEr"] = mean_of([](const ReportRow& r) { return std::optional<double>(r.cider); }).value_or(0.0);
  if (spice_status == "ok")
    j["SPICE"] = mean_of([](const ReportRow& r) { return r.spice; }).value_or(0.0);
  else
    j["SPICE"] = spice_status;
  if (auto t = mean_of([](const ReportRow& r) { return r.temporal ? std::optional<double>(*r.temporal) : std::nullopt; }))
    j["temporal"] = *t;
  if (auto c = mean_of([](const ReportRow& r) { return r.causal ? std::optional<double>(*r.causal) : std::nullopt; }))
    j["causal"] = *c;
  return j;
}

EvalReport evaluate(const std::vector<EvalPair>& pairs, const CiderOptions& opts) {
  EvalReport report;
  const auto c = cider(pairs, opts);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ReportRow row;
    row.video_id = pairs[i].video_id;
    row.rouge_l = rouge_l(pairs[i].candidate, pairs[i].references).score;
    row.cider = c.per_pair[i];
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace ctn::metrics
