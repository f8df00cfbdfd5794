#include "ctn/llm/captioner.hpp"

#include <algorithm>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ctn/error.hpp"
#include "ctn/llm/gateway.hpp"

namespace ctn::llm {

StubImageCaptioner::StubImageCaptioner(std::vector<std::string> script) : script_(std::move(script)) {
  if (script_.empty()) throw Error(ErrorCode::empty_input, "stub captioner needs at least one caption");
}

std::string StubImageCaptioner::caption(const data::Image&) {
  std::lock_guard lock(mu_);
  const std::string& out = script_[std::min(next_, script_.size() - 1)];
  ++next_;
  return out;
}

std::size_t StubImageCaptioner::calls() const {
  std::lock_guard lock(mu_);
  return next_;
}

std::string encode_png_base64(const data::Image& image) {
  cv::Mat rgb(image.height, image.width, CV_32FC3, const_cast<float*>(image.rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(bgr, CV_8UC3, 255.0);
  std::vector<unsigned char> png;
  if (!cv::imencode(".png", bgr, png)) throw Error(ErrorCode::io_error, "png encoding failed");

  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((png.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < png.size(); i += 3) {
    const std::uint32_t b0 = png[i];
    const std::uint32_t b1 = i + 1 < png.size() ? png[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < png.size() ? png[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < png.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < png.size() ? kAlphabet[v & 63] : '=';
  }
  return out;
}

HttpImageCaptioner::HttpImageCaptioner(HttpCaptionerConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw Error(ErrorCode::config_error, "http captioner needs base_url");
}

std::string HttpImageCaptioner::caption(const data::Image& image) {
  httplib::Client client(cfg_.base_url);
  client.set_connection_timeout(cfg_.timeout_s, 0);
  client.set_read_timeout(cfg_.timeout_s, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);
  const nlohmann::json body{{"image", encode_png_base64(image)}};
  auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
  if (!res) throw TransientFailure("captioner: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorCode::backend_unreachable, "captioner: HTTP " + std::to_string(res->status));
  const auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("caption") || !j["caption"].is_string())
    throw Error(ErrorCode::parse_error, "captioner: unexpected response " + res->body.substr(0, 200));
  return j["caption"].get<std::string>();
}

}  // namespace ctn::llm
