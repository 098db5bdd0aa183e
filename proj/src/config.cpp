#include "fstd/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fstd/error.hpp"

namespace fstd {

using json = nlohmann::ordered_json;

namespace {

const char* to_string(ExemplarSource s) { return s == ExemplarSource::kFresh ? "fresh" : "cropped"; }

const char* to_string(RankBy r) {
  switch (r) {
    case RankBy::kConfidence: return "confidence";
    case RankBy::kProposalScore: return "proposal_score";
    case RankBy::kSimilarity: return "similarity";
  }
  return "confidence";
}

json rule_json(const LabelRule& r) {
  return {{"pos_thresh", r.pos_thresh},
          {"neg_thresh", r.neg_thresh},
          {"force_best_match", r.force_best_match}};
}

// Reads the members of one object, rejecting any key that is never asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name(key) + ": wrong value type");
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, name(key));
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + name(item.key().c_str()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_rule(Section s, LabelRule& r) {
  s.read("pos_thresh", r.pos_thresh);
  s.read("neg_thresh", r.neg_thresh);
  s.read("force_best_match", r.force_best_match);
  s.finish();
}

}  // namespace

void Config::validate() const {
  generator.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split.test_fraction must be in (0, 1)");
  }
  model.validate();
  train.validate();
  if (pretrain_episodes < 0) throw ConfigError("train.pretrain_episodes must be >= 0");
  if (!(pretrain_learning_rate > 0.0)) throw ConfigError("train.pretrain_learning_rate must be > 0");
  eval.detect.validate();
  if (eval.iterations < 1) throw ConfigError("eval.iterations must be >= 1");
  if (eval.way < 1) throw ConfigError("eval.way must be >= 1");
  if (eval.shot < 1) throw ConfigError("eval.shot must be >= 1");
  if (sweep_thresholds.empty()) throw ConfigError("eval.sweep_thresholds must not be empty");
}

Config default_config() { return Config{}; }

std::string config_to_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  const auto& g = c.generator;
  j["generator"] = {{"num_classes", g.num_classes},
                    {"num_videos", g.num_videos},
                    {"length", g.length},
                    {"feature_dim", g.feature_dim},
                    {"noise_sigma", g.noise_sigma},
                    {"min_instances", g.min_instances},
                    {"max_instances", g.max_instances},
                    {"min_instance_len", g.min_instance_len},
                    {"max_instance_len", g.max_instance_len},
                    {"exemplars_per_class", g.exemplars_per_class},
                    {"exemplar_source", to_string(g.exemplar_source)},
                    {"orthogonal_prototypes", g.orthogonal_prototypes}};
  j["split"] = {{"test_fraction", c.test_fraction}};
  const auto& m = c.model;
  j["model"] = {{"input_dim", m.encoder.input_dim},
                {"hidden_dims", m.encoder.hidden_dims},
                {"embed_dim", m.encoder.embed_dim},
                {"fc_dim", m.encoder.fc_dim},
                {"anchor_scales", m.anchor_scales},
                {"roi_bins", m.roi_bins}};
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"lambda", t.lambda},
                {"batch_size", t.batch_size},
                {"episodes", t.episodes},
                {"pretrain_episodes", c.pretrain_episodes},
                {"pretrain_learning_rate", c.pretrain_learning_rate},
                {"way", t.way},
                {"shot", t.shot},
                {"tau", t.tau},
                {"stage1_rule", rule_json(t.stage1_rule)},
                {"stage2_rule", rule_json(t.stage2_rule)},
                {"select", {{"score_floor", t.train_select.score_floor},
                            {"nms_thresh", t.train_select.nms_thresh},
                            {"top_n", t.train_select.top_n}}},
                {"gt_as_proposals", t.gt_as_proposals},
                {"freeze", t.freeze}};
  const auto& e = c.eval;
  j["eval"] = {{"iterations", e.iterations},
               {"way", e.way},
               {"shot", e.shot},
               {"proposal_thresh", e.detect.proposal_thresh},
               {"similarity_thresh", e.detect.similarity_thresh},
               {"final_nms", e.detect.final_nms},
               {"tau", e.detect.tau},
               {"stage1_nms", e.detect.stage1_select.nms_thresh},
               {"stage1_score_floor", e.detect.stage1_select.score_floor},
               {"top_n", e.detect.stage1_select.top_n},
               {"rank_by", to_string(e.detect.rank_by)},
               {"sweep_thresholds", c.sweep_thresholds}};
  return j.dump(2) + "\n";
}

Config config_from_json(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  Config c;
  try {
    Section root(doc, "");
    root.read("seed", c.seed);
    {
      auto s = root.child("generator");
      auto& g = c.generator;
      s.read("num_classes", g.num_classes);
      s.read("num_videos", g.num_videos);
      s.read("length", g.length);
      s.read("feature_dim", g.feature_dim);
      s.read("noise_sigma", g.noise_sigma);
      s.read("min_instances", g.min_instances);
      s.read("max_instances", g.max_instances);
      s.read("min_instance_len", g.min_instance_len);
      s.read("max_instance_len", g.max_instance_len);
      s.read("exemplars_per_class", g.exemplars_per_class);
      std::string src = to_string(g.exemplar_source);
      s.read("exemplar_source", src);
      if (src == "fresh") {
        g.exemplar_source = ExemplarSource::kFresh;
      } else if (src == "cropped") {
        g.exemplar_source = ExemplarSource::kCropped;
      } else {
        throw ConfigError("generator.exemplar_source must be fresh or cropped");
      }
      s.read("orthogonal_prototypes", g.orthogonal_prototypes);
      s.finish();
    }
    {
      auto s = root.child("split");
      s.read("test_fraction", c.test_fraction);
      s.finish();
    }
    {
      auto s = root.child("model");
      auto& m = c.model;
      s.read("input_dim", m.encoder.input_dim);
      s.read("hidden_dims", m.encoder.hidden_dims);
      s.read("embed_dim", m.encoder.embed_dim);
      s.read("fc_dim", m.encoder.fc_dim);
      s.read("anchor_scales", m.anchor_scales);
      s.read("roi_bins", m.roi_bins);
      s.finish();
    }
    {
      auto s = root.child("train");
      auto& t = c.train;
      s.read("learning_rate", t.learning_rate);
      s.read("momentum", t.momentum);
      s.read("lambda", t.lambda);
      s.read("batch_size", t.batch_size);
      s.read("episodes", t.episodes);
      s.read("pretrain_episodes", c.pretrain_episodes);
      s.read("pretrain_learning_rate", c.pretrain_learning_rate);
      s.read("way", t.way);
      s.read("shot", t.shot);
      s.read("tau", t.tau);
      read_rule(s.child("stage1_rule"), t.stage1_rule);
      read_rule(s.child("stage2_rule"), t.stage2_rule);
      {
        auto sel = s.child("select");
        sel.read("score_floor", t.train_select.score_floor);
        sel.read("nms_thresh", t.train_select.nms_thresh);
        sel.read("top_n", t.train_select.top_n);
        sel.finish();
      }
      s.read("gt_as_proposals", t.gt_as_proposals);
      s.read("freeze", t.freeze);
      s.finish();
    }
    {
      auto s = root.child("eval");
      auto& e = c.eval;
      s.read("iterations", e.iterations);
      s.read("way", e.way);
      s.read("shot", e.shot);
      s.read("proposal_thresh", e.detect.proposal_thresh);
      s.read("similarity_thresh", e.detect.similarity_thresh);
      s.read("final_nms", e.detect.final_nms);
      s.read("tau", e.detect.tau);
      s.read("stage1_nms", e.detect.stage1_select.nms_thresh);
      s.read("stage1_score_floor", e.detect.stage1_select.score_floor);
      s.read("top_n", e.detect.stage1_select.top_n);
      std::string rank = to_string(e.detect.rank_by);
      s.read("rank_by", rank);
      if (rank == "confidence") {
        e.detect.rank_by = RankBy::kConfidence;
      } else if (rank == "proposal_score") {
        e.detect.rank_by = RankBy::kProposalScore;
      } else if (rank == "similarity") {
        e.detect.rank_by = RankBy::kSimilarity;
      } else {
        throw ConfigError("eval.rank_by must be confidence, proposal_score or similarity");
      }
      s.read("sweep_thresholds", c.sweep_thresholds);
      s.finish();
    }
    root.finish();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  c.eval.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str(), path.string());
}

void save_config(const Config& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config " + path.string());
  os << config_to_json(cfg);
}

}  // namespace fstd
