#pragma once

#include <optional>
#include <span>
#include <vector>

namespace fstd {

/// Temporal downsampling between input timesteps and the encoder feature grid.
inline constexpr int kTemporalStride = 8;

/// Half-open interval [start, end) in input timesteps.
class Segment {
 public:
  /// Throws std::invalid_argument unless both ends are finite and end > start.
  Segment(double start, double end);
  static Segment from_center(double center, double length);

  double start() const { return start_; }
  double end() const { return end_; }
  double center() const { return 0.5 * (start_ + end_); }
  double length() const { return end_ - start_; }

  friend bool operator==(const Segment&, const Segment&) = default;

 private:
  double start_;
  double end_;
};

/// Center/length offsets of one segment relative to a reference segment.
struct RegressionTarget {
  double delta_c = 0.0;
  double delta_l = 0.0;
  friend bool operator==(const RegressionTarget&, const RegressionTarget&) = default;
};

struct ScoredSegment {
  Segment segment;
  double score;
};

double tiou(const Segment& a, const Segment& b);

RegressionTarget encode_offsets(const Segment& gt, const Segment& ref);
Segment decode_offsets(const Segment& ref, const RegressionTarget& t);

/// Intersection with [0, horizon); nullopt when nothing is left.
std::optional<Segment> clip_segment(const Segment& s, double horizon);

/// Descending score, then earlier start, then shorter length.
bool score_order(const ScoredSegment& a, const ScoredSegment& b);

/// Greedy NMS. Output sorted by score_order; no kept pair has tIoU > thresh.
std::vector<ScoredSegment> nms(std::span<const ScoredSegment> items, double thresh);

/// Same as nms() but returns the kept input indices.
std::vector<std::size_t> nms_indices(std::span<const ScoredSegment> items, double thresh);

/// One anchor per (grid position, scale), position-major, centered at (t + 0.5) * 8.
std::vector<Segment> make_anchors(int length, std::span<const double> scales);

}  // namespace fstd
