#include "ctn/humaneval/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include <httplib.h>

#include "ctn/error.hpp"

namespace ctn::humaneval {

namespace {

constexpr const char* kCriteria[] = {"causal_accuracy", "temporal_coherence", "relevance"};

int score_of(const RatingRecord& r, std::size_t criterion) {
  switch (criterion) {
    case 0: return r.causal_accuracy;
    case 1: return r.temporal_coherence;
    default: return r.relevance;
  }
}

}  // namespace

nlohmann::json RatingRecord::to_json() const {
  return {{"rater_id", rater_id},
          {"video_id", video_id},
          {"causal_accuracy", causal_accuracy},
          {"temporal_coherence", temporal_coherence},
          {"relevance", relevance},
          {"timestamp", timestamp}};
}

RatingRecord RatingRecord::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, "rating must be a JSON object");
  auto str = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
      throw Error(ErrorCode::parse_error, std::string("missing string field ") + key);
    return j[key].get<std::string>();
  };
  auto score = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer())
      throw Error(ErrorCode::invariant_violation, std::string(key) + " must be an integer");
    const auto v = j[key].get<long long>();
    if (v < kMinScore || v > kMaxScore)
      throw Error(ErrorCode::invariant_violation, std::string(key) + " out of range [0, 5]");
    return static_cast<int>(v);
  };
  RatingRecord r;
  r.rater_id = str("rater_id");
  r.video_id = str("video_id");
  r.causal_accuracy = score("causal_accuracy");
  r.temporal_coherence = score("temporal_coherence");
  r.relevance = score("relevance");
  r.timestamp = j.contains("timestamp") && j["timestamp"].is_string() ? j["timestamp"].get<std::string>() : "";
  return r;
}

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const EvalItem* EvalBatch::find(const std::string& video_id) const {
  for (const auto& it : items)
    if (it.video_id == video_id) return &it;
  return nullptr;
}

bool EvalBatch::has_rater(const std::string& rater_id) const {
  return std::find(raters.begin(), raters.end(), rater_id) != raters.end();
}

nlohmann::json EvalBatch::to_json() const {
  nlohmann::json items_json = nlohmann::json::array();
  for (const auto& it : items)
    items_json.push_back(
        {{"video_id", it.video_id}, {"cause", it.cause}, {"effect", it.effect}, {"media_path", it.media_path}});
  return {{"raters", raters}, {"items", items_json}};
}

EvalBatch EvalBatch::from_json(const nlohmann::json& j) {
  EvalBatch b;
  try {
    b.raters = j.at("raters").get<std::vector<std::string>>();
    for (const auto& it : j.at("items"))
      b.items.push_back({it.at("video_id").get<std::string>(), it.at("cause").get<std::string>(),
                         it.at("effect").get<std::string>(), it.value("media_path", "")});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("eval batch: ") + e.what());
  }
  if (b.raters.empty() || b.items.empty()) throw Error(ErrorCode::empty_input, "eval batch needs raters and items");
  return b;
}

RatingStore::RatingStore(const std::filesystem::path& dir) : dir_(dir) {
  std::filesystem::create_directories(dir_);
  const auto log_path = dir_ / "ratings.jsonl";
  if (std::filesystem::exists(log_path)) {
    for (const auto& j : util::read_jsonl(log_path)) {
      auto r = RatingRecord::from_json(j);
      latest_[{r.rater_id, r.video_id}] = r;
      ++log_lines_;
    }
  }
  log_ = std::make_unique<util::JsonlWriter>(log_path, true);
}

bool RatingStore::submit(const RatingRecord& r) {
  std::lock_guard lock(mu_);
  const auto key = std::make_pair(r.rater_id, r.video_id);
  const bool replaced = latest_.count(key) != 0;
  nlohmann::json line = r.to_json();
  if (replaced) line["replaces"] = latest_[key].timestamp;
  log_->write(line);
  ++log_lines_;
  latest_[key] = r;
  write_snapshot_locked();
  return replaced;
}

void RatingStore::write_snapshot_locked() const {
  nlohmann::json snap = nlohmann::json::array();
  for (const auto& [_, r] : latest_) snap.push_back(r.to_json());
  const auto tmp = dir_ / "snapshot.json.tmp";
  util::write_json(tmp, snap);
  std::filesystem::rename(tmp, dir_ / "snapshot.json");
}

std::vector<RatingRecord> RatingStore::snapshot() const {
  std::lock_guard lock(mu_);
  std::vector<RatingRecord> out;
  for (const auto& [_, r] : latest_) out.push_back(r);
  return out;
}

std::optional<RatingRecord> RatingStore::find(const std::string& rater_id, const std::string& video_id) const {
  std::lock_guard lock(mu_);
  auto it = latest_.find({rater_id, video_id});
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

std::size_t RatingStore::log_size() const {
  std::lock_guard lock(mu_);
  return log_lines_;
}

nlohmann::json compute_stats(const EvalBatch& batch, const std::vector<RatingRecord>& ratings) {
  nlohmann::json out;
  out["ratings"] = ratings.size();
  out["evaluations"] = ratings.size() * 3;
  out["assignments"] = batch.assignment_count();

  std::map<std::pair<std::string, std::string>, const RatingRecord*> cell;
  std::set<std::string> active_raters;
  for (const auto& r : ratings) {
    cell[{r.rater_id, r.video_id}] = &r;
    active_raters.insert(r.rater_id);
  }
  std::vector<std::string> raters(active_raters.begin(), active_raters.end());
  std::vector<std::string> videos;
  for (const auto& item : batch.items) {
    const bool complete = !raters.empty() && std::all_of(raters.begin(), raters.end(), [&](const std::string& rid) {
      return cell.count({rid, item.video_id}) != 0;
    });
    if (complete) videos.push_back(item.video_id);
  }
  out["icc_block"] = {{"raters", raters.size()}, {"videos", videos.size()}};

  for (std::size_t c = 0; c < 3; ++c) {
    nlohmann::json s;
    const double n = static_cast<double>(ratings.size());
    if (ratings.empty()) {
      s = {{"count", 0}, {"mean", nullptr}, {"sd", nullptr}, {"pct_ge_4", nullptr}, {"pct_perfect", nullptr}};
    } else {
      double sum = 0.0, ge4 = 0.0, perfect = 0.0;
      for (const auto& r : ratings) {
        const int v = score_of(r, c);
        sum += v;
        ge4 += v >= 4 ? 1.0 : 0.0;
        perfect += v == kMaxScore ? 1.0 : 0.0;
      }
      const double mean = sum / n;
      double var = 0.0;
      for (const auto& r : ratings) var += (score_of(r, c) - mean) * (score_of(r, c) - mean);
      const double sd = ratings.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      s = {{"count", ratings.size()},
           {"mean", mean},
           {"sd", sd},
           {"pct_ge_4", 100.0 * ge4 / n},
           {"pct_perfect", 100.0 * perfect / n}};
    }
    if (raters.size() >= 2 && videos.size() >= 2) {
      std::vector<std::vector<double>> m;
      for (const auto& vid : videos) {
        std::vector<double> row;
        for (const auto& rid : raters) row.push_back(score_of(*cell[{rid, vid}], c));
        m.push_back(std::move(row));
      }
      const auto icc = icc_absolute(m, 0.95);
      s["icc"] = icc.icc;
      s["ci"] = std::isfinite(icc.ci_low) ? nlohmann::json::array({icc.ci_low, icc.ci_high}) : nlohmann::json(nullptr);
      s["icc_limit"] = icc.limit;
    } else {
      s["icc"] = nullptr;
      s["ci"] = nullptr;
    }
    out[kCriteria[c]] = s;
  }
  return out;
}

EvalService::EvalService(EvalBatch batch, std::shared_ptr<RatingStore> store)
    : batch_(std::move(batch)), store_(std::move(store)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

EvalService::~EvalService() { stop(); }

void EvalService::install_routes() {
  auto& srv = *server_;
  auto send_json = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/api/eval/next", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    const std::string rater = req.get_param_value("rater");
    if (rater.empty() || !batch_.has_rater(rater)) {
      send_json(res, 404, {{"error", "unknown rater"}});
      return;
    }
    std::size_t done = 0;
    const EvalItem* next = nullptr;
    for (const auto& item : batch_.items) {
      if (store_->find(rater, item.video_id)) ++done;
      else if (!next) next = &item;
    }
    if (!next) {
      send_json(res, 200, {{"done", true}, {"completed", done}, {"evaluations", done * 3}});
      return;
    }
    send_json(res, 200,
              {{"done", false},
               {"video_id", next->video_id},
               {"media_url", "/media/" + next->video_id},
               {"cause", next->cause},
               {"effect", next->effect},
               {"completed", done},
               {"remaining", batch_.items.size() - done}});
  });

  srv.Post("/api/eval/rating", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      send_json(res, 400, {{"error", "body is not JSON"}});
      return;
    }
    RatingRecord r;
    try {
      r = RatingRecord::from_json(body);
    } catch (const Error& e) {
      send_json(res, e.code() == ErrorCode::invariant_violation ? 422 : 400, {{"error", e.what()}});
      return;
    }
    if (!batch_.has_rater(r.rater_id) || !batch_.find(r.video_id)) {
      send_json(res, 404, {{"error", "unknown assignment"}});
      return;
    }
    r.timestamp = utc_now_iso8601();
    const bool replaced = store_->submit(r);
    send_json(res, 201, {{"stored", r.to_json()}, {"replaced", replaced}});
  });

  srv.Get("/api/eval/stats", [this, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, compute_stats(batch_, store_->snapshot()));
  });

  srv.Get(R"(/media/([^/]+))", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    const EvalItem* item = batch_.find(req.matches[1]);
    if (!item || item->media_path.empty() || !std::filesystem::is_regular_file(item->media_path)) {
      send_json(res, 404, {{"error", "no media for this video"}});
      return;
    }
    const std::string path = item->media_path;
    const auto size = std::filesystem::file_size(path);
    const auto ext = std::filesystem::path(path).extension().string();
    const std::string type = ext == ".mp4" ? "video/mp4" : ext == ".webm" ? "video/webm" : "video/x-msvideo";
    res.set_content_provider(size, type, [path](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
      std::ifstream in(path, std::ios::binary);
      in.seekg(static_cast<std::streamoff>(offset));
      std::vector<char> buf(std::min<std::size_t>(length, 1 << 16));
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      sink.write(buf.data(), static_cast<std::size_t>(in.gcount()));
      return true;
    });
  });
}

int EvalService::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void EvalService::listen(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
}

void EvalService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ctn::humaneval
