#include "ctn/metrics/spice.hpp"

#include <sys/wait.h>

#include <cstdlib>

#include <json.hpp>

#include "ctn/error.hpp"
#include "ctn/util/jsonl.hpp"

namespace ctn::metrics {

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

SpiceReport spice_adapter(const std::vector<EvalPair>& pairs, const std::filesystem::path& tool_path,
                          const std::filesystem::path& work_dir) {
  SpiceReport report;
  if (tool_path.empty() || !std::filesystem::exists(tool_path)) return report;

  std::filesystem::create_directories(work_dir);
  const auto input = work_dir / "spice_input.json";
  const auto output = work_dir / "spice_output.json";
  const auto errlog = work_dir / "spice_stderr.txt";
  std::filesystem::remove(output);

  nlohmann::json in = nlohmann::json::array();
  for (const auto& p : pairs) in.push_back({{"image_id", p.video_id}, {"test", p.candidate}, {"refs", p.references}});
  util::write_json(input, in);

  const std::string cmd = shell_quote(tool_path.string()) + " " + shell_quote(input.string()) + " -out " +
                          shell_quote(output.string()) + " >/dev/null 2>" + shell_quote(errlog.string());
  const int rc = std::system(cmd.c_str());
  const int exit_code = rc == -1 ? -1 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + WTERMSIG(rc));
  if (exit_code != 0) {
    std::string err = std::filesystem::exists(errlog) ? util::read_text(errlog) : "";
    if (err.size() > 2000) err.resize(2000);
    throw Error(ErrorCode::tool_failure, "SPICE tool exited with " + std::to_string(exit_code) + ": " + err);
  }
  if (!std::filesystem::exists(output)) throw Error(ErrorCode::tool_failure, "SPICE tool wrote no output");

  const std::string raw = util::read_text(output);
  const std::string excerpt = raw.substr(0, 200);
  const auto j = nlohmann::json::parse(raw, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw Error(ErrorCode::parse_error, "SPICE output is not a JSON array: " + excerpt);
  double sum = 0.0;
  for (const auto& item : j) {
    try {
      const auto id = item.at("image_id").is_string() ? item.at("image_id").get<std::string>()
                                                      : item.at("image_id").dump();
      const double f = item.at("scores").at("All").at("f").get<double>();
      report.per_pair[id] = f;
      sum += f;
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::parse_error, "malformed SPICE entry: " + item.dump().substr(0, 200));
    }
  }
  report.status = "ok";
  report.mean = report.per_pair.empty() ? 0.0 : sum / static_cast<double>(report.per_pair.size());
  return report;
}

void attach_spice(EvalReport& report, const SpiceReport& spice) {
  report.spice_status = spice.status;
  if (spice.status != "ok") return;
  for (auto& row : report.rows) {
    auto it = spice.per_pair.find(row.video_id);
    if (it != spice.per_pair.end()) row.spice = it->second;
  }
}

}  // namespace ctn::metrics
