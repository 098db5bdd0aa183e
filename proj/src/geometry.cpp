#include "fstd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fstd/error.hpp"

namespace fstd {

Segment::Segment(double start, double end) : start_(start), end_(end) {
  if (!std::isfinite(start) || !std::isfinite(end) || !(end > start)) {
    throw std::invalid_argument("invalid segment [" + std::to_string(start) + ", " +
                                std::to_string(end) + ")");
  }
}

Segment Segment::from_center(double center, double length) {
  return Segment(center - 0.5 * length, center + 0.5 * length);
}

double tiou(const Segment& a, const Segment& b) {
  const double inter = std::min(a.end(), b.end()) - std::max(a.start(), b.start());
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.end(), b.end()) - std::min(a.start(), b.start());
  return std::clamp(inter / uni, 0.0, 1.0);
}

RegressionTarget encode_offsets(const Segment& gt, const Segment& ref) {
  return {(gt.center() - ref.center()) / ref.length(), std::log(gt.length() / ref.length())};
}

Segment decode_offsets(const Segment& ref, const RegressionTarget& t) {
  const double c = ref.center() + t.delta_c * ref.length();
  const double l = ref.length() * std::exp(t.delta_l);
  return Segment::from_center(c, l);
}

std::optional<Segment> clip_segment(const Segment& s, double horizon) {
  const double lo = std::max(s.start(), 0.0);
  const double hi = std::min(s.end(), horizon);
  if (!(hi > lo)) return std::nullopt;
  return Segment(lo, hi);
}

bool score_order(const ScoredSegment& a, const ScoredSegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.segment.start() != b.segment.start()) return a.segment.start() < b.segment.start();
  return a.segment.length() < b.segment.length();
}

std::vector<std::size_t> nms_indices(std::span<const ScoredSegment> items, double thresh) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score_order(items[a], items[b]); });
  std::vector<std::size_t> kept;
  std::vector<char> suppressed(items.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && tiou(items[i].segment, items[j].segment) > thresh) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<ScoredSegment> nms(std::span<const ScoredSegment> items, double thresh) {
  std::vector<ScoredSegment> out;
  for (std::size_t i : nms_indices(items, thresh)) out.push_back(items[i]);
  return out;
}

std::vector<Segment> make_anchors(int length, std::span<const double> scales) {
  if (length <= 0 || length % kTemporalStride != 0) {
    throw ConfigError("anchor grid: length " + std::to_string(length) +
                      " is not a positive multiple of " + std::to_string(kTemporalStride));
  }
  if (scales.empty()) throw ConfigError("anchor grid: empty scale list");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("anchor grid: non-positive scale");
  }
  const int positions = length / kTemporalStride;
  std::vector<Segment> anchors;
  anchors.reserve(static_cast<std::size_t>(positions) * scales.size());
  for (int t = 0; t < positions; ++t) {
    const double center = (t + 0.5) * kTemporalStride;
    for (double s : scales) anchors.push_back(Segment::from_center(center, s));
  }
  return anchors;
}

}  // namespace fstd
