#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctn/humaneval/stats.hpp"
#include "ctn/util/jsonl.hpp"

namespace httplib {
class Server;
}

namespace ctn::humaneval {

inline constexpr int kMinScore = 0;
inline constexpr int kMaxScore = 5;

struct RatingRecord {
  std::string rater_id;
  std::string video_id;
  int causal_accuracy = 0;
  int temporal_coherence = 0;
  int relevance = 0;
  std::string timestamp;  // UTC, ISO 8601

  nlohmann::json to_json() const;
  /// Throws parse_error for missing/ill-typed fields and invariant_violation for out-of-range scores.
  static RatingRecord from_json(const nlohmann::json& j);
};

std::string utc_now_iso8601();

struct EvalItem {
  std::string video_id;
  std::string cause;
  std::string effect;
  std::string media_path;
};

/// Every item assigned to every rater (full crossing).
struct EvalBatch {
  std::vector<std::string> raters;
  std::vector<EvalItem> items;

  const EvalItem* find(const std::string& video_id) const;
  bool has_rater(const std::string& rater_id) const;
  std::size_t assignment_count() const { return raters.size() * items.size(); }

  nlohmann::json to_json() const;
  static EvalBatch from_json(const nlohmann::json& j);
};

/// Append-only JSON-lines log with a derived latest-per-(rater, video) snapshot.
/// Resubmissions overwrite the snapshot entry; the log keeps every submission.
class RatingStore {
 public:
  explicit RatingStore(const std::filesystem::path& dir);

  /// Returns true when an earlier rating for the same (rater, video) was replaced.
  bool submit(const RatingRecord& r);
  std::vector<RatingRecord> snapshot() const;
  std::optional<RatingRecord> find(const std::string& rater_id, const std::string& video_id) const;
  std::size_t log_size() const;

 private:
  void write_snapshot_locked() const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::pair<std::string, std::string>, RatingRecord> latest_;
  std::size_t log_lines_ = 0;
  std::unique_ptr<util::JsonlWriter> log_;
};

/// Per-criterion summary; ICC over the largest fully crossed block of
/// active raters (>= 2) and videos they all rated (>= 2).
nlohmann::json compute_stats(const EvalBatch& batch, const std::vector<RatingRecord>& ratings);

class EvalService {
 public:
  EvalService(EvalBatch batch, std::shared_ptr<RatingStore> store);
  ~EvalService();

  /// Binds and serves on a background thread; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  EvalBatch batch_;
  std::shared_ptr<RatingStore> store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace ctn::humaneval
