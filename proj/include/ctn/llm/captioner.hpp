#pragma once

#include <mutex>
#include <string>
#include <vector>

#include "ctn/data/video.hpp"

namespace ctn::llm {

/// Single-image captioning backend used when a video has no human captions.
class ImageCaptioner {
 public:
  virtual ~ImageCaptioner() = default;
  virtual std::string caption(const data::Image& image) = 0;
};

/// Returns scripted captions in order, the last one repeating.
class StubImageCaptioner final : public ImageCaptioner {
 public:
  explicit StubImageCaptioner(std::vector<std::string> script);
  std::string caption(const data::Image& image) override;
  std::size_t calls() const;

 private:
  std::vector<std::string> script_;
  std::size_t next_ = 0;
  mutable std::mutex mu_;
};

struct HttpCaptionerConfig {
  std::string base_url;
  std::string path = "/caption";
  std::string api_key_env = "CTN_CAPTIONER_API_KEY";
  int timeout_s = 60;
};

/// POSTs {"image": "<base64 PNG>"} and reads {"caption": "..."}.
class HttpImageCaptioner final : public ImageCaptioner {
 public:
  explicit HttpImageCaptioner(HttpCaptionerConfig cfg);
  std::string caption(const data::Image& image) override;

 private:
  HttpCaptionerConfig cfg_;
};

std::string encode_png_base64(const data::Image& image);

}  // namespace ctn::llm
