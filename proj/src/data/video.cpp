#include "ctn/data/video.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "ctn/error.hpp"

namespace ctn::data {

void FrameSequence::validate() const {
  if (frames.empty() || frames.size() > kMaxFrames)
    throw Error(ErrorCode::invariant_violation, video_id + ": frame count must be in [1, 20]");
  if (frames.size() != timestamps_s.size())
    throw Error(ErrorCode::invariant_violation, video_id + ": frames and timestamps differ in length");
}

namespace {

struct SynthParams {
  std::uint64_t seed = 0;
  double fps = 1.0;
  int size = 16;
  int cause = -1;
  int effect = -1;
};

SynthParams parse_synth(const std::string& path) {
  constexpr std::string_view prefix = "synth:";
  if (path.rfind(prefix, 0) != 0) throw Error(ErrorCode::decode_failure, "not a synth path: " + path);
  std::map<std::string, std::string> kv;
  std::string rest = path.substr(prefix.size());
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const std::size_t end = std::min(rest.find(';', pos), rest.size());
    const std::string item = rest.substr(pos, end - pos);
    if (!item.empty()) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::decode_failure, "bad synth parameter '" + item + "'");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    pos = end + 1;
  }
  SynthParams p;
  try {
    if (kv.count("seed")) p.seed = std::stoull(kv["seed"]);
    if (kv.count("fps")) p.fps = std::stod(kv["fps"]);
    if (kv.count("size")) p.size = std::stoi(kv["size"]);
    if (kv.count("cause")) p.cause = std::stoi(kv["cause"]);
    if (kv.count("effect")) p.effect = std::stoi(kv["effect"]);
  } catch (const std::exception&) {
    throw Error(ErrorCode::decode_failure, "bad synth parameters in " + path);
  }
  if (!(p.fps > 0.0) || p.size < 2) throw Error(ErrorCode::decode_failure, "synth fps/size out of range: " + path);
  return p;
}

// splitmix64, used to derive per-pattern constants from integers.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0); }

Image render_synth(const SynthParams& p, std::size_t index, std::size_t count) {
  const bool first_half = index < (count + 1) / 2;
  const int pattern = first_half ? p.cause : p.effect;
  const std::uint64_t key = pattern >= 0 ? mix(static_cast<std::uint64_t>(pattern) + (first_half ? 1000 : 2000)) : mix(p.seed * 2 + (first_half ? 0 : 1));
  const double fx = 0.3 + 1.5 * unit(mix(key ^ 1));
  const double fy = 0.3 + 1.5 * unit(mix(key ^ 2));
  const double phase = 6.283185307179586 * unit(mix(key ^ 3));
  const double drift = 0.25 * static_cast<double>(index);
  Image img;
  img.width = img.height = p.size;
  img.rgb.resize(static_cast<std::size_t>(p.size) * p.size * 3);
  for (int y = 0; y < p.size; ++y) {
    for (int x = 0; x < p.size; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double noise = 0.05 * unit(mix(p.seed ^ mix(index * 7919 + static_cast<std::uint64_t>((y * p.size + x) * 3 + c))));
        const double base = 0.25 + 0.5 * unit(mix(key ^ (4 + static_cast<std::uint64_t>(c))));
        const double v = base + 0.2 * std::sin(fx * x + fy * y + phase + 2.1 * c + drift);
        img.rgb[(static_cast<std::size_t>(y) * p.size + x) * 3 + c] = static_cast<float>(std::clamp(v + noise - 0.025, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

ClipInfo SyntheticDecoder::probe(const VideoRecord& v) const {
  const auto p = parse_synth(v.media_path);
  const double exact = v.duration_s * p.fps;
  const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil(exact - 1e-9)));
  return {p.fps, count};
}

std::vector<Image> SyntheticDecoder::decode(const VideoRecord& v, std::span<const std::size_t> indices) const {
  const auto p = parse_synth(v.media_path);
  const auto info = probe(v);
  std::vector<Image> out;
  for (auto idx : indices) {
    if (idx >= info.frame_count) throw Error(ErrorCode::decode_failure, v.video_id + ": frame index out of range");
    out.push_back(render_synth(p, idx, info.frame_count));
  }
  return out;
}

ClipInfo OpenCvDecoder::probe(const VideoRecord& v) const {
  cv::VideoCapture cap(v.media_path);
  if (!cap.isOpened()) throw Error(ErrorCode::decode_failure, v.video_id + ": cannot open " + v.media_path);
  const double fps = cap.get(cv::CAP_PROP_FPS);
  // Count by reading; container frame counts are unreliable for some codecs.
  std::size_t n = 0;
  while (cap.grab()) ++n;
  if (n == 0 || !(fps > 0.0)) throw Error(ErrorCode::decode_failure, v.video_id + ": no decodable frames");
  return {fps, n};
}

std::vector<Image> OpenCvDecoder::decode(const VideoRecord& v, std::span<const std::size_t> indices) const {
  cv::VideoCapture cap(v.media_path);
  if (!cap.isOpened()) throw Error(ErrorCode::decode_failure, v.video_id + ": cannot open " + v.media_path);
  std::vector<Image> out;
  std::size_t current = 0;
  cv::Mat frame;
  for (auto want : indices) {
    bool ok = false;
    while (current <= want) {
      ok = cap.read(frame);
      if (!ok) throw Error(ErrorCode::decode_failure, v.video_id + ": frame " + std::to_string(want) + " unreadable");
      ++current;
    }
    cv::Mat rgb;
    cv::cvtColor(frame, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
    Image img;
    img.width = rgb.cols;
    img.height = rgb.rows;
    img.rgb.assign(rgb.ptr<float>(), rgb.ptr<float>() + static_cast<std::size_t>(rgb.total()) * 3);
    out.push_back(std::move(img));
  }
  return out;
}

namespace {
bool is_synth(const VideoRecord& v) { return v.media_path.rfind("synth:", 0) == 0; }
}  // namespace

ClipInfo AutoDecoder::probe(const VideoRecord& v) const { return is_synth(v) ? synth_.probe(v) : cv_.probe(v); }

std::vector<Image> AutoDecoder::decode(const VideoRecord& v, std::span<const std::size_t> indices) const {
  return is_synth(v) ? synth_.decode(v, indices) : cv_.decode(v, indices);
}

FrameSequence sample_equally_spaced(const VideoRecord& v, std::size_t k, const VideoDecoder& decoder) {
  if (k == 0) throw Error(ErrorCode::invariant_violation, "k must be >= 1");
  const ClipInfo info = decoder.probe(v);
  FrameSequence out;
  out.video_id = v.video_id;
  std::vector<std::size_t> indices;
  if (k > info.frame_count) {
    out.short_clip = true;
    for (std::size_t i = 0; i < info.frame_count; ++i) {
      indices.push_back(i);
      out.timestamps_s.push_back(static_cast<double>(i) / info.fps);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      const double t = v.duration_s * (static_cast<double>(i) + 0.5) / static_cast<double>(k);
      const auto idx = std::min(info.frame_count - 1, static_cast<std::size_t>(std::floor(t * info.fps)));
      indices.push_back(idx);
      out.timestamps_s.push_back(t);
    }
  }
  out.frames = decoder.decode(v, indices);
  return out;
}

std::vector<double> frame_schedule(double duration_s) {
  if (!(duration_s > 0.0)) throw Error(ErrorCode::invariant_violation, "duration must be > 0");
  const auto per_second = static_cast<std::size_t>(std::max(1.0, std::ceil(duration_s - 1e-9)));
  std::vector<double> ts;
  if (per_second <= kMaxFrames) {
    for (std::size_t i = 0; i < per_second; ++i) ts.push_back(static_cast<double>(i));
  } else {
    for (std::size_t i = 0; i < kMaxFrames; ++i)
      ts.push_back(duration_s * static_cast<double>(i) / static_cast<double>(kMaxFrames));
  }
  return ts;
}

FrameSequence sample_frames(const VideoRecord& v, const VideoDecoder& decoder) {
  const ClipInfo info = decoder.probe(v);
  FrameSequence out;
  out.video_id = v.video_id;
  out.timestamps_s = frame_schedule(v.duration_s);
  std::vector<std::size_t> indices;
  for (double t : out.timestamps_s)
    indices.push_back(std::min(info.frame_count - 1, static_cast<std::size_t>(std::floor(t * info.fps + 1e-9))));
  out.frames = decoder.decode(v, indices);
  return out;
}

FrameSequence resize_frames(const FrameSequence& f, int size) {
  FrameSequence out = f;
  for (auto& img : out.frames) {
    if (img.width == size && img.height == size) continue;
    cv::Mat src(img.height, img.width, CV_32FC3, img.rgb.data());
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    Image r;
    r.width = r.height = size;
    r.rgb.assign(dst.ptr<float>(), dst.ptr<float>() + static_cast<std::size_t>(size) * size * 3);
    img = std::move(r);
  }
  return out;
}

void write_video(const std::string& path, std::span<const Image> frames, double fps) {
  if (frames.empty()) throw Error(ErrorCode::empty_input, "no frames to write");
  const int w = frames.front().width, h = frames.front().height;
  cv::VideoWriter writer(path, cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), fps, cv::Size(w, h));
  if (!writer.isOpened()) throw Error(ErrorCode::io_error, "cannot open video writer for " + path);
  for (const auto& img : frames) {
    cv::Mat rgb(h, w, CV_32FC3, const_cast<float*>(img.rgb.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bgr.convertTo(bgr, CV_8UC3, 255.0);
    writer.write(bgr);
  }
}

}  // namespace ctn::data
