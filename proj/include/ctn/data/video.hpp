#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctn/data/dataset.hpp"

namespace ctn::data {

/// RGB image, HWC layout, channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Maximum frames fed to a visual encoder per video.
constexpr std::size_t kMaxFrames = 20;

struct FrameSequence {
  std::string video_id;
  std::vector<Image> frames;
  std::vector<double> timestamps_s;
  /// Set when fewer frames than requested could be produced.
  bool short_clip = false;

  void validate() const;
};

struct ClipInfo {
  double fps = 0.0;
  std::size_t frame_count = 0;
};

class VideoDecoder {
 public:
  virtual ~VideoDecoder() = default;
  virtual ClipInfo probe(const VideoRecord& v) const = 0;
  /// Frames at the given ascending indices.
  virtual std::vector<Image> decode(const VideoRecord& v, std::span<const std::size_t> indices) const = 0;
};

/// Procedural clips addressed as "synth:seed=<n>;fps=<f>;size=<px>[;cause=<n>;effect=<n>]".
/// Frame content is a deterministic function of the parameters and frame index;
/// the first half of the clip renders the cause pattern, the second half the effect pattern.
class SyntheticDecoder final : public VideoDecoder {
 public:
  ClipInfo probe(const VideoRecord& v) const override;
  std::vector<Image> decode(const VideoRecord& v, std::span<const std::size_t> indices) const override;
};

/// Container files decoded through OpenCV's videoio.
class OpenCvDecoder final : public VideoDecoder {
 public:
  ClipInfo probe(const VideoRecord& v) const override;
  std::vector<Image> decode(const VideoRecord& v, std::span<const std::size_t> indices) const override;
};

/// Routes synth: paths to SyntheticDecoder and everything else to OpenCvDecoder.
class AutoDecoder final : public VideoDecoder {
 public:
  ClipInfo probe(const VideoRecord& v) const override;
  std::vector<Image> decode(const VideoRecord& v, std::span<const std::size_t> indices) const override;

 private:
  SyntheticDecoder synth_;
  OpenCvDecoder cv_;
};

/// k frames at duration_s * (i + 0.5) / k. When k exceeds the decodable frame
/// count, every frame is returned and short_clip is set.
FrameSequence sample_equally_spaced(const VideoRecord& v, std::size_t k, const VideoDecoder& decoder);

/// One frame per second from t = 0; clips longer than kMaxFrames seconds get
/// kMaxFrames frames spread evenly over the whole duration.
std::vector<double> frame_schedule(double duration_s);
FrameSequence sample_frames(const VideoRecord& v, const VideoDecoder& decoder);

/// Bilinear resize of every frame to size x size.
FrameSequence resize_frames(const FrameSequence& f, int size);

/// Writes an MJPG .avi through OpenCV; used to build real-container fixtures.
void write_video(const std::string& path, std::span<const Image> frames, double fps);

}  // namespace ctn::data
