#include "ctn/metrics/judge.hpp"

#include <cstdio>
#include <regex>

#include "ctn/error.hpp"
#include "ctn/text/tokenizer.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::metrics {

std::optional<int> parse_judge_score(const std::string& reply) {
  static const std::regex score_re(R"(score\s*[:=]\s*\**\s*([01])\b)", std::regex::icase);
  std::smatch m;
  if (std::regex_search(reply, m, score_re)) return m[1].str() == "1" ? 1 : 0;
  const std::string t = text::trim(reply);
  if (t == "0" || t == "1") return t == "1" ? 1 : 0;
  return std::nullopt;
}

namespace {

std::string fill(std::string body, const std::string& key, const std::string& value) {
  const auto pos = body.find(key);
  if (pos == std::string::npos) throw Error(ErrorCode::invariant_violation, "judge prompt lacks " + key);
  body.replace(pos, key.size(), value);
  return body;
}

}  // namespace

JudgePrompts JudgePrompts::load(const std::filesystem::path& dir) {
  JudgePrompts p;
  for (auto [file, slot] : {std::pair{"judge_temporal.txt", &p.temporal}, std::pair{"judge_causal.txt", &p.causal}}) {
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::missing_asset, "judge prompt " + path.string());
    *slot = util::read_text(path);
  }
  return p;
}

std::string JudgePrompts::render_temporal(const std::string& gt, const std::string& gen) const {
  return fill(fill(temporal, "<ground_truth>", gt), "<generated>", gen);
}

std::string JudgePrompts::render_causal(const std::string& gt, const std::string& gen) const {
  return fill(fill(causal, "<ground_truth>", gt), "<generated>", gen);
}

JudgeResult judge_pair(const data::CtnCaption& gt, const std::string& generated, llm::Gateway& gateway,
                       const JudgePrompts& prompts, const std::string& backend_id) {
  const std::string reference = data::combine_caption(gt);
  auto ask = [&](const std::string& prompt) {
    llm::GenerationRequest req;
    req.prompt = prompt;
    req.temperature = llm::kJudgeTemperature;
    req.max_tokens = 64;
    req.backend_id = backend_id;
    return gateway.generate(req).text;
  };
  JudgeResult r;
  const std::string t_reply = ask(prompts.render_temporal(reference, generated));
  const std::string c_reply = ask(prompts.render_causal(reference, generated));
  const auto t = parse_judge_score(t_reply);
  const auto c = parse_judge_score(c_reply);
  r.temporal_order = t.value_or(0);
  r.causal_chain = c.value_or(0);
  r.temporal_unparsed = !t;
  r.causal_unparsed = !c;
  r.rationale = "temporal: " + text::trim(t_reply) + "\ncausal: " + text::trim(c_reply);
  return r;
}

std::string JudgeSummary::format() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f / %.1f", temporal, causal);
  return buf;
}

JudgeSummary aggregate(const std::vector<JudgeResult>& results) {
  JudgeSummary s;
  s.count = results.size();
  if (results.empty()) return s;
  for (const auto& r : results) {
    s.temporal += r.temporal_order;
    s.causal += r.causal_chain;
    s.unparsed += (r.temporal_unparsed ? 1 : 0) + (r.causal_unparsed ? 1 : 0);
  }
  s.temporal = 100.0 * s.temporal / static_cast<double>(results.size());
  s.causal = 100.0 * s.causal / static_cast<double>(results.size());
  return s;
}

}  // namespace ctn::metrics
