#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctn::metrics {

struct EvalPair {
  std::string video_id;
  std::string candidate;
  std::vector<std::string> references;
};

inline constexpr double kRougeBeta = 1.2;

struct RougeResult {
  double score = 0.0;
  /// Set for an empty candidate (scored 0).
  bool empty_candidate = false;
};

/// LCS F-measure over shared-tokenizer tokens, max over references.
RougeResult rouge_l(const std::string& candidate, const std::vector<std::string>& references,
                    double beta = kRougeBeta);

struct CiderOptions {
  /// CIDEr-D: clipped n-gram counts and a Gaussian length penalty.
  bool cider_d = false;
  double sigma = 6.0;
};

struct CiderResult {
  std::vector<double> per_pair;  // includes the x10 factor
  double mean = 0.0;

  /// Table convention: mean x 100.
  double reported() const { return mean * 100.0; }
};

/// TF-IDF n-gram (n = 1..4) cosine averaged over n and references, x10.
/// Document frequencies come from the references of all pairs; needs >= 2 pairs.
CiderResult cider(const std::vector<EvalPair>& pairs, const CiderOptions& opts = {});

struct ReportRow {
  std::string video_id;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::optional<double> spice;
  std::optional<int> temporal;
  std::optional<int> causal;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  /// "ok", "skipped" or "not_run".
  std::string spice_status = "not_run";

  std::string to_csv() const;
  /// Corpus means (x100) shaped like a results-table row.
  nlohmann::json summary() const;
};

/// ROUGE-L and CIDEr for every pair.
EvalReport evaluate(const std::vector<EvalPair>& pairs, const CiderOptions& opts = {});

}  // namespace ctn::metrics
