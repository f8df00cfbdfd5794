#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctn/data/dataset.hpp"
#include "ctn/llm/gateway.hpp"

namespace ctn::metrics {

struct JudgeResult {
  int temporal_order = 0;
  int causal_chain = 0;
  std::string rationale;
  bool temporal_unparsed = false;
  bool causal_unparsed = false;
};

/// "Score: 0|1" anywhere (first match), or the whole reply being "0"/"1".
std::optional<int> parse_judge_score(const std::string& reply);

struct JudgePrompts {
  std::string temporal;
  std::string causal;

  /// judge_temporal.txt and judge_causal.txt with <ground_truth> and <generated> placeholders.
  static JudgePrompts load(const std::filesystem::path& dir);
  std::string render_temporal(const std::string& ground_truth, const std::string& generated) const;
  std::string render_causal(const std::string& ground_truth, const std::string& generated) const;
};

/// Two judge calls at temperature 0; unparseable replies score 0 and are flagged.
JudgeResult judge_pair(const data::CtnCaption& gt, const std::string& generated, llm::Gateway& gateway,
                       const JudgePrompts& prompts, const std::string& backend_id = "");

struct JudgeSummary {
  double temporal = 0.0;  // mean x 100
  double causal = 0.0;
  std::size_t count = 0;
  std::size_t unparsed = 0;

  /// "81.2 / 84.5"
  std::string format() const;
};

JudgeSummary aggregate(const std::vector<JudgeResult>& results);

}  // namespace ctn::metrics
