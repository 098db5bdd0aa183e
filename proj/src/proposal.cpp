#include "fstd/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "fstd/error.hpp"

namespace fstd {

AnchorGrid AnchorGrid::make(int length, std::vector<double> scales) {
  AnchorGrid g;
  g.anchors = make_anchors(length, scales);
  g.length = length;
  g.scales = std::move(scales);
  return g;
}

std::size_t LabeledSet::count(Label l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

void add_proposal_params(ad::ParamStore& params, const ModelConfig& cfg, std::mt19937_64& rng) {
  const auto d = static_cast<std::size_t>(cfg.encoder.embed_dim);
  const auto k2 = 2 * cfg.anchor_scales.size();
  const auto fc = static_cast<std::size_t>(cfg.encoder.fc_dim);
  const auto pooled = static_cast<std::size_t>(cfg.roi_bins) * d;

  params.add_uniform("p1.conv.w", {d, d, 3}, d * 3, rng, ad::kReluGain);
  params.add_uniform("p1.conv.b", {d}, d * 3, rng);
  params.add_uniform("p1.cls.w", {k2, d, 1}, d, rng);
  params.add_uniform("p1.cls.b", {k2}, d, rng);
  params.add_uniform("p1.reg.w", {k2, d, 1}, d, rng);
  params.add_uniform("p1.reg.b", {k2}, d, rng);

  params.add_uniform("p2.fc1.w", {fc, pooled}, pooled, rng, ad::kReluGain);
  params.add_uniform("p2.fc1.b", {fc}, pooled, rng);
  params.add_uniform("p2.fc2.w", {fc, fc}, fc, rng, ad::kReluGain);
  params.add_uniform("p2.fc2.b", {fc}, fc, rng);
  params.add_uniform("p2.cls.w", {2, fc}, fc, rng);
  params.add_uniform("p2.cls.b", {2}, fc, rng);
  params.add_uniform("p2.reg.w", {2, fc}, fc, rng);
  params.add_uniform("p2.reg.b", {2}, fc, rng);
}

StageOutput summarize_heads(const ad::Tensor& cls, const ad::Tensor& reg) {
  StageOutput out;
  const auto c = cls.values();
  const auto r = reg.values();
  const std::size_t n = c.size() / 2;
  out.scores.reserve(n);
  out.offsets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double logits[2] = {c[2 * i], c[2 * i + 1]};
    out.scores.push_back(ad::softmax(logits)[1]);
    out.offsets.push_back({r[2 * i], r[2 * i + 1]});
  }
  return out;
}

StageHeads stage1_forward(const FeatureMap& map, const AnchorGrid& grid,
                          const ad::ParamStore& params) {
  const std::size_t expect = static_cast<std::size_t>(grid.length / kTemporalStride);
  if (map.length() != expect) {
    throw ConfigError("stage1: feature map length " + std::to_string(map.length()) +
                      " does not match anchor grid length " + std::to_string(expect));
  }
  const std::size_t k2 = 2 * grid.num_scales();
  const auto& cls_w = params.get("p1.cls.w");
  if (cls_w.dim(0) != k2) {
    throw ConfigError("stage1: p1.cls.w has " + std::to_string(cls_w.dim(0)) +
                      " output channels, anchor grid needs 2K=" + std::to_string(k2));
  }
  const ad::Tensor tpn =
      ad::relu(ad::conv1d(map.values, params.get("p1.conv.w"), params.get("p1.conv.b"), 1, 1));
  StageHeads h;
  const std::size_t flat = tpn.dim(0) * k2;
  h.cls = ad::reshape(ad::conv1d(tpn, cls_w, params.get("p1.cls.b"), 1, 0), {flat});
  h.reg = ad::reshape(ad::conv1d(tpn, params.get("p1.reg.w"), params.get("p1.reg.b"), 1, 0),
                      {flat});
  h.out = summarize_heads(h.cls, h.reg);
  return h;
}

LabeledSet assign_labels(std::span<const Segment> candidates, std::span<const GroundTruth> gts,
                         const LabelRule& rule) {
  if (rule.pos_thresh < rule.neg_thresh) {
    throw ConfigError("label rule: pos_thresh must be >= neg_thresh");
  }
  const std::size_t n = candidates.size();
  LabeledSet ls;
  ls.labels.assign(n, Label::kNegative);
  ls.matched_gt.assign(n, -1);
  ls.matched_class.assign(n, -1);
  ls.best_tiou.assign(n, 0.0);
  if (gts.empty()) return ls;

  std::vector<int> argmax(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = tiou(candidates[i], gts[g].segment);
      if (argmax[i] < 0 || v > ls.best_tiou[i]) {
        ls.best_tiou[i] = v;
        argmax[i] = static_cast<int>(g);
      }
    }
  }
  auto make_positive = [&](std::size_t i, int g) {
    ls.labels[i] = Label::kPositive;
    ls.matched_gt[i] = g;
    ls.matched_class[i] = gts[static_cast<std::size_t>(g)].cls;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (ls.best_tiou[i] >= rule.pos_thresh) {
      make_positive(i, argmax[i]);
    } else if (ls.best_tiou[i] >= rule.neg_thresh) {
      ls.labels[i] = Label::kIgnore;
    }
  }
  if (rule.force_best_match) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      double best = 0.0;
      std::size_t best_i = n;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = tiou(candidates[i], gts[g].segment);
        if (v > best) {
          best = v;
          best_i = i;
        }
      }
      if (best_i < n && ls.labels[best_i] != Label::kPositive) {
        make_positive(best_i, static_cast<int>(g));
      }
    }
  }
  return ls;
}

std::vector<std::size_t> sample_balanced(const LabeledSet& labels, int batch_size,
                                         std::uint64_t seed) {
  if (batch_size <= 0 || batch_size % 2 != 0) {
    throw ConfigError("sample_balanced: batch_size " + std::to_string(batch_size) +
                      " must be positive and even");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.labels[i] == Label::kPositive) pos.push_back(i);
    if (labels.labels[i] == Label::kNegative) neg.push_back(i);
  }
  const std::size_t n =
      std::min({static_cast<std::size_t>(batch_size / 2), pos.size(), neg.size()});
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> out(pos.begin(), pos.begin() + static_cast<long>(n));
  out.insert(out.end(), neg.begin(), neg.begin() + static_cast<long>(n));
  return out;
}

std::vector<Proposal> select_proposals(const StageOutput& out, std::span<const Segment> refs,
                                       int length, const SelectConfig& cfg) {
  if (cfg.top_n < 1) throw ConfigError("select_proposals: top_n must be >= 1");
  if (out.size() != refs.size()) {
    throw ConfigError("select_proposals: " + std::to_string(out.size()) + " outputs for " +
                      std::to_string(refs.size()) + " references");
  }
  std::vector<ScoredSegment> cands;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (out.scores[i] < cfg.score_floor) continue;
    const RegressionTarget& t = out.offsets[i];
    if (!std::isfinite(t.delta_c) || !std::isfinite(t.delta_l)) continue;
    std::optional<Segment> seg;
    try {
      seg = clip_segment(decode_offsets(refs[i], t), length);
    } catch (const std::invalid_argument&) {
      continue;  // exp() overflow or underflow
    }
    if (!seg) continue;
    cands.push_back({*seg, out.scores[i]});
    source.push_back(i);
  }
  std::vector<Proposal> result;
  for (std::size_t k : nms_indices(cands, cfg.nms_thresh)) {
    if (result.size() >= static_cast<std::size_t>(cfg.top_n)) break;
    result.push_back({cands[k].segment, cands[k].score, source[k]});
  }
  return result;
}

ad::Tensor roi_pool_temporal(const ad::Tensor& map, const Segment& seg, int bins) {
  if (bins < 1) throw ConfigError("roi_pool_temporal: bins must be >= 1");
  const std::size_t m = map.dim(0);
  const std::size_t d = map.dim(1);
  const double lo = std::clamp(seg.start() / kTemporalStride, 0.0, static_cast<double>(m));
  const double hi = std::clamp(seg.end() / kTemporalStride, 0.0, static_cast<double>(m));
  const double width = (hi - lo) / bins;
  const auto last = static_cast<long>(m) - 1;
  auto cell = [&](double x) { return std::clamp(static_cast<long>(std::floor(x)), 0L, last); };

  const auto x = map.values();
  std::vector<double> out(static_cast<std::size_t>(bins) * d);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int b = 0; b < bins; ++b) {
    const double a = lo + width * b;
    const double z = (b + 1 == bins) ? hi : lo + width * (b + 1);
    long first, stop;
    if (std::ceil(a) + 1.0 <= z) {
      first = cell(a);
      stop = std::clamp(static_cast<long>(std::ceil(z)) - 1, first, last);
    } else {
      first = stop = cell(0.5 * (a + z));
    }
    for (std::size_t c = 0; c < d; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (long t = first; t <= stop; ++t) {
        const std::size_t idx = static_cast<std::size_t>(t) * d + c;
        if (x[idx] > best) {
          best = x[idx];
          arg = idx;
        }
      }
      out[b * d + c] = best;
      (*argmax)[b * d + c] = arg;
    }
  }
  return ad::make_op({static_cast<std::size_t>(bins), d}, std::move(out), {map},
                     [argmax](std::span<const double> g, std::span<const std::span<double>> gr) {
                       for (std::size_t i = 0; i < g.size(); ++i) gr[0][(*argmax)[i]] += g[i];
                     });
}

ad::Tensor embed_segment(const FeatureMap& map, const Segment& seg, const ad::ParamStore& params,
                         int bins) {
  const ad::Tensor pooled = roi_pool_temporal(map.values, seg, bins);
  const ad::Tensor h = ad::relu(ad::dense(pooled, params.get("p2.fc1.w"), params.get("p2.fc1.b")));
  return ad::relu(ad::dense(h, params.get("p2.fc2.w"), params.get("p2.fc2.b")));
}

Stage2Result stage2_forward(const FeatureMap& map, std::span<const Segment> proposals,
                            const ad::ParamStore& params, int bins) {
  Stage2Result r;
  std::vector<ad::Tensor> cls, reg;
  for (const Segment& s : proposals) {
    ad::Tensor e = embed_segment(map, s, params, bins);
    cls.push_back(ad::dense(e, params.get("p2.cls.w"), params.get("p2.cls.b")));
    reg.push_back(ad::dense(e, params.get("p2.reg.w"), params.get("p2.reg.b")));
    r.embeddings.push_back(std::move(e));
  }
  r.heads.cls = ad::concat(cls);
  r.heads.reg = ad::concat(reg);
  r.heads.out = summarize_heads(r.heads.cls, r.heads.reg);
  return r;
}

}  // namespace fstd
