#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ctn/humaneval/service.hpp"
#include "ctn/humaneval/stats.hpp"
#include "support.hpp"

using namespace ctn;
using namespace ctn::humaneval;
using testing::thrown_code;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Two-way ANOVA written out cell by cell.
double icc21_oracle(const Matrix& x) {
  const double n = static_cast<double>(x.size()), k = static_cast<double>(x[0].size());
  double grand = 0;
  for (const auto& r : x)
    for (double v : r) grand += v;
  grand /= n * k;
  double ss_rows = 0, ss_cols = 0, ss_total = 0;
  for (const auto& r : x) {
    const double m = std::accumulate(r.begin(), r.end(), 0.0) / k;
    ss_rows += k * (m - grand) * (m - grand);
  }
  for (std::size_t j = 0; j < x[0].size(); ++j) {
    double m = 0;
    for (const auto& r : x) m += r[j];
    m /= n;
    ss_cols += n * (m - grand) * (m - grand);
  }
  for (const auto& r : x)
    for (double v : r) ss_total += (v - grand) * (v - grand);
  const double ms_r = ss_rows / (n - 1), ms_c = ss_cols / (k - 1);
  const double ms_e = (ss_total - ss_rows - ss_cols) / ((n - 1) * (k - 1));
  return (ms_r - ms_e) / (ms_r + (k - 1) * ms_e + k * (ms_c - ms_e) / n);
}

const Matrix kShroutFleiss{{9, 2, 5, 8}, {6, 1, 3, 2}, {8, 4, 6, 8}, {7, 1, 2, 6}, {10, 5, 6, 9}, {6, 2, 4, 7}};

Matrix random_matrix(testing::Gen& g, std::size_t n, std::size_t k) {
  Matrix m(n, std::vector<double>(k));
  for (auto& r : m)
    for (auto& v : r) v = static_cast<double>(g.index(0, 5));
  return m;
}

EvalBatch small_batch() {
  EvalBatch b;
  b.raters = {"r1", "r2"};
  b.items = {{"v1", "a boy kicks a ball", "the window breaks", ""},
             {"v2", "a pot boils over", "smoke fills the room", ""}};
  return b;
}

nlohmann::json rating(const std::string& rater, const std::string& video, int c, int t, int r) {
  return {{"rater_id", rater}, {"video_id", video}, {"causal_accuracy", c}, {"temporal_coherence", t}, {"relevance", r}};
}

}  // namespace

TEST_CASE("proportional quotas for the two benchmark pools") {
  const std::vector<Stratum> pools{{"msrvtt", 10000}, {"msvd", 1970}};
  CHECK(proportional_quotas(pools, 100) == std::vector<std::size_t>{84, 16});
  CHECK(proportional_quotas({{"only", 500}}, 37) == std::vector<std::size_t>{37});
  CHECK(proportional_quotas(pools, 0) == std::vector<std::size_t>{0, 0});
  CHECK(thrown_code([] { proportional_quotas({{"a", 3}, {"b", 2}}, 6); }) == ErrorCode::quota_exceeded);
  CHECK(thrown_code([] { proportional_quotas({}, 1); }) == ErrorCode::empty_input);
}

TEST_CASE("largest-remainder quotas always sum to n and stay within one of the exact share") {
  testing::Gen g(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Stratum> s;
    std::size_t total = 0;
    for (std::size_t i = 0, m = g.index(1, 6); i < m; ++i) {
      s.push_back({"s" + std::to_string(i), g.index(1, 500)});
      total += s.back().population;
    }
    const std::size_t n = g.index(0, std::min<std::size_t>(total, 200));
    const auto q = proportional_quotas(s, n);
    CHECK(std::accumulate(q.begin(), q.end(), std::size_t{0}) == n);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double exact = static_cast<double>(n) * s[i].population / total;
      CHECK(std::abs(static_cast<double>(q[i]) - exact) < 1.0);
      CHECK(q[i] <= s[i].population);
    }
  }
}

TEST_CASE("stratified sample draws distinct in-range members deterministically") {
  const std::vector<Stratum> pools{{"msrvtt", 10000}, {"msvd", 1970}};
  const auto a = stratified_sample(pools, 100, 7);
  const auto b = stratified_sample(pools, 100, 7);
  CHECK(a.members == b.members);
  CHECK(a.quotas == std::vector<std::size_t>{84, 16});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.members[i].size() == a.quotas[i]);
    CHECK(std::is_sorted(a.members[i].begin(), a.members[i].end()));
    CHECK(std::set<std::size_t>(a.members[i].begin(), a.members[i].end()).size() == a.quotas[i]);
    CHECK(a.members[i].back() < pools[i].population);
  }
  CHECK(stratified_sample(pools, 100, 8).members != a.members);
  const auto empty = stratified_sample(pools, 0, 1);
  CHECK(empty.members[0].empty());
  CHECK(empty.members[1].empty());
}

TEST_CASE("margin of error") {
  CHECK(z_value(0.90) == doctest::Approx(1.6448536).epsilon(1e-6));
  CHECK(z_value(0.95) == doctest::Approx(1.9599640).epsilon(1e-6));
  const double moe = margin_of_error(100, 11970, 0.90);
  CHECK(std::abs(moe * 100 - 8.2) <= 0.05);
  CHECK(moe == doctest::Approx(0.0819).epsilon(1e-3));
  const double z = z_value(0.90);
  CHECK(moe == doctest::Approx(z * 0.05 * std::sqrt((11970.0 - 100) / 11969.0)).epsilon(1e-12));
  CHECK(margin_of_error(100, 1000000000, 0.90) == doctest::Approx(1.645 * 0.05).epsilon(1e-3));
  CHECK(margin_of_error(50, 50, 0.90) == 0.0);
  CHECK(thrown_code([] { margin_of_error(0, 10, 0.9); }) == ErrorCode::invariant_violation);
  CHECK(thrown_code([] { margin_of_error(11, 10, 0.9); }) == ErrorCode::invariant_violation);
}

TEST_CASE("margin of error strictly decreases with sample size") {
  for (std::size_t N : {200u, 11970u, 1000000u}) {
    double prev = margin_of_error(1, N, 0.90);
    for (std::size_t n = 2; n < std::min<std::size_t>(N, 400); ++n) {
      const double cur = margin_of_error(n, N, 0.90);
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("icc on the classic six-by-four table") {
  const auto r = icc_absolute(kShroutFleiss);
  const double want = icc21_oracle(kShroutFleiss);
  CHECK(std::abs(r.icc - want) < 1e-4);
  CHECK(r.icc == doctest::Approx(0.29).epsilon(0.01));
  CHECK_FALSE(r.limit);
  CHECK(r.ci_low < r.icc);
  CHECK(r.icc < r.ci_high);
  CHECK(r.ms_rows == doctest::Approx(11.24).epsilon(1e-3));
  CHECK(r.ms_cols == doctest::Approx(32.4889).epsilon(1e-4));
  CHECK(r.ms_error == doctest::Approx(1.0194).epsilon(1e-3));
}

TEST_CASE("icc matches the anova oracle on random matrices") {
  testing::Gen g(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_matrix(g, g.index(2, 12), g.index(2, 6));
    const auto r = icc_absolute(m);
    if (r.limit) continue;
    CHECK(std::abs(r.icc - icc21_oracle(m)) < 1e-9);
  }
}

TEST_CASE("icc invariances") {
  testing::Gen g(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_matrix(g, 8, 4);
    const auto base = icc_absolute(m);
    if (base.limit) continue;
    auto shifted = m;
    for (auto& row : shifted)
      for (auto& v : row) v += 3.5;
    CHECK(icc_absolute(shifted).icc == doctest::Approx(base.icc).epsilon(1e-9));
    std::vector<std::size_t> perm{2, 0, 3, 1};
    auto permuted = m;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < 4; ++j) permuted[i][j] = m[i][perm[j]];
    CHECK(icc_absolute(permuted).icc == doctest::Approx(base.icc).epsilon(1e-9));
  }
}

TEST_CASE("identical raters hit the limit value") {
  const Matrix same{{1, 1, 1}, {3, 3, 3}, {5, 5, 5}, {2, 2, 2}};
  const auto r = icc_absolute(same);
  CHECK(r.icc == 1.0);
  CHECK(r.limit);
  CHECK(thrown_code([] { icc_absolute({{1, 2}}); }) == ErrorCode::incomplete_matrix);
  CHECK(thrown_code([] { icc_absolute({{1, 2}, {3}}); }) == ErrorCode::incomplete_matrix);
  CHECK(thrown_code([] { icc_absolute({{1, NAN}, {3, 4}}); }) == ErrorCode::incomplete_matrix);
}

TEST_CASE("rating record validation") {
  CHECK(RatingRecord::from_json(rating("r", "v", 5, 4, 3)).temporal_coherence == 4);
  CHECK(thrown_code([] { RatingRecord::from_json(rating("r", "v", 6, 4, 3)); }) == ErrorCode::invariant_violation);
  CHECK(thrown_code([] { RatingRecord::from_json(rating("r", "v", -1, 4, 3)); }) == ErrorCode::invariant_violation);
  CHECK(thrown_code([] { RatingRecord::from_json({{"video_id", "v"}}); }) == ErrorCode::parse_error);
  CHECK(thrown_code([] { EvalBatch::from_json({{"raters", nlohmann::json::array()}, {"items", nlohmann::json::array()}}); }) ==
        ErrorCode::empty_input);
}

TEST_CASE("rating store keeps the log and replays the latest snapshot") {
  testing::TempDir dir;
  {
    RatingStore store(dir / "ratings");
    CHECK_FALSE(store.submit(RatingRecord::from_json(rating("r1", "v1", 3, 3, 3))));
    CHECK(store.submit(RatingRecord::from_json(rating("r1", "v1", 5, 5, 5))));
    CHECK_FALSE(store.submit(RatingRecord::from_json(rating("r2", "v1", 4, 4, 4))));
    CHECK(store.log_size() == 3);
    CHECK(store.snapshot().size() == 2);
  }
  RatingStore again(dir / "ratings");
  CHECK(again.log_size() == 3);
  CHECK(again.snapshot().size() == 2);
  CHECK(again.find("r1", "v1")->causal_accuracy == 5);
  CHECK_FALSE(again.find("r2", "v2"));
  CHECK(util::read_json(dir / "ratings/snapshot.json").size() == 2);
}

TEST_CASE("stats over a full crossing") {
  EvalBatch batch;
  for (int r = 0; r < 5; ++r) batch.raters.push_back("r" + std::to_string(r));
  for (int v = 0; v < 100; ++v) batch.items.push_back({"v" + std::to_string(v), "c", "e", ""});
  testing::Gen g(4);
  std::vector<RatingRecord> ratings;
  for (const auto& rid : batch.raters)
    for (const auto& it : batch.items)
      ratings.push_back(RatingRecord::from_json(
          rating(rid, it.video_id, static_cast<int>(g.index(3, 5)), static_cast<int>(g.index(3, 5)), 5)));
  const auto s = compute_stats(batch, ratings);
  CHECK(s["ratings"] == 500);
  CHECK(s["evaluations"] == 1500);
  CHECK(s["icc_block"]["raters"] == 5);
  CHECK(s["icc_block"]["videos"] == 100);
  CHECK(s["relevance"]["mean"].get<double>() == 5.0);
  CHECK(s["relevance"]["pct_perfect"].get<double>() == 100.0);
  CHECK(s["causal_accuracy"]["pct_ge_4"].get<double>() <= 100.0);
  CHECK(s["causal_accuracy"]["icc"].is_number());
  CHECK(s["causal_accuracy"]["ci"].is_array());

  const auto none = compute_stats(batch, {});
  CHECK(none["causal_accuracy"]["mean"].is_null());
  CHECK(none["causal_accuracy"]["icc"].is_null());
}

TEST_CASE("http service endpoints") {
  testing::TempDir dir;
  auto store = std::make_shared<RatingStore>(dir / "ratings");
  EvalService service(small_batch(), store);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client cli("127.0.0.1", port);

  auto next = cli.Get("/api/eval/next?rater=r1");
  REQUIRE(next);
  CHECK(next->status == 200);
  auto j = nlohmann::json::parse(next->body);
  CHECK(j["video_id"] == "v1");
  CHECK(j["cause"] == "a boy kicks a ball");
  CHECK(j["media_url"] == "/media/v1");
  CHECK(cli.Get("/api/eval/next?rater=ghost")->status == 404);

  auto post = [&](const nlohmann::json& body) { return cli.Post("/api/eval/rating", body.dump(), "application/json"); };
  CHECK(post(rating("r1", "v1", 5, 4, 5))->status == 201);
  CHECK(post(rating("r1", "v1", 9, 4, 5))->status == 422);
  CHECK(post(rating("r1", "nope", 5, 4, 5))->status == 404);
  CHECK(cli.Post("/api/eval/rating", "{oops", "application/json")->status == 400);
  CHECK(nlohmann::json::parse(cli.Get("/api/eval/next?rater=r1")->body)["video_id"] == "v2");

  auto stats = nlohmann::json::parse(cli.Get("/api/eval/stats")->body);
  CHECK(stats["ratings"] == 1);
  CHECK(stats["causal_accuracy"]["mean"].get<double>() == 5.0);
  CHECK(stats["causal_accuracy"]["icc"].is_null());

  CHECK(post(rating("r1", "v2", 3, 3, 3))->status == 201);
  CHECK(post(rating("r2", "v1", 4, 4, 4))->status == 201);
  CHECK(post(rating("r2", "v2", 2, 3, 3))->status == 201);
  stats = nlohmann::json::parse(cli.Get("/api/eval/stats")->body);
  CHECK(stats["ratings"] == 4);
  CHECK(stats["causal_accuracy"]["mean"].get<double>() == doctest::Approx(3.5));
  CHECK(stats["causal_accuracy"]["icc"].is_number());
  CHECK(nlohmann::json::parse(cli.Get("/api/eval/next?rater=r1")->body)["done"] == true);
  CHECK(cli.Get("/media/v1")->status == 404);
  service.stop();
  CHECK(store->log_size() == 4);
}
