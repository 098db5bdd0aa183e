#include "fstd/episodes.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "fstd/error.hpp"

namespace fstd {

using nlohmann::json;

void GeneratorConfig::validate() const {
  if (num_classes < 10) throw ConfigError("generator.num_classes must be >= 10");
  if (num_videos < 1) throw ConfigError("generator.num_videos must be >= 1");
  if (length < kTemporalStride || length % kTemporalStride != 0) {
    throw ConfigError("generator.length must be a positive multiple of 8");
  }
  if (feature_dim < 1) throw ConfigError("generator.feature_dim must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("generator.noise_sigma must be >= 0");
  if (min_instances < 1 || max_instances < min_instances) {
    throw ConfigError("generator.instances range is invalid");
  }
  if (min_instance_len < 1 || max_instance_len < min_instance_len) {
    throw ConfigError("generator.instance_len range is invalid");
  }
  if (exemplars_per_class < 1) throw ConfigError("generator.exemplars_per_class must be >= 1");
  if (static_cast<long>(min_instances) * min_instance_len > length) {
    throw DataError("generator: " + std::to_string(min_instances) + " instances of length >= " +
                    std::to_string(min_instance_len) + " cannot fit in L=" +
                    std::to_string(length));
  }
  if (orthogonal_prototypes && num_classes + 1 > feature_dim) {
    throw ConfigError("generator.orthogonal_prototypes needs num_classes + 1 <= feature_dim");
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::vector<double> unit_gaussian(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = nd(rng);
      n2 += x * x;
    }
  } while (n2 < 1e-12);
  for (double& x : v) x /= std::sqrt(n2);
  return v;
}

void orthonormalize(std::vector<std::vector<double>>& vs) {
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double d = std::inner_product(vs[i].begin(), vs[i].end(), vs[j].begin(), 0.0);
      for (std::size_t k = 0; k < vs[i].size(); ++k) vs[i][k] -= d * vs[j][k];
    }
    const double n = std::sqrt(std::inner_product(vs[i].begin(), vs[i].end(), vs[i].begin(), 0.0));
    if (n < 1e-9) throw ConfigError("generator: degenerate prototypes during orthogonalization");
    for (double& x : vs[i]) x /= n;
  }
}

void emit(FeatureSequence& seq, std::size_t t, const std::vector<double>& proto, double sigma,
          std::normal_distribution<double>& nd, std::mt19937_64& rng) {
  for (std::size_t c = 0; c < seq.channels; ++c) {
    seq.at(t, c) = proto[c] + (sigma > 0.0 ? sigma * nd(rng) : 0.0);
  }
}

}  // namespace

Dataset generate_dataset(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto f = static_cast<std::size_t>(cfg.feature_dim);
  const auto len = static_cast<std::size_t>(cfg.length);

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.length = cfg.length;
  ds.feature_dim = cfg.feature_dim;
  std::vector<std::vector<double>> protos;
  for (int c = 0; c <= cfg.num_classes; ++c) protos.push_back(unit_gaussian(cfg.feature_dim, rng));
  if (cfg.orthogonal_prototypes) orthonormalize(protos);
  ds.background = protos.back();
  protos.pop_back();
  ds.prototypes = protos;

  std::uniform_int_distribution<int> count_dist(cfg.min_instances, cfg.max_instances);
  std::uniform_int_distribution<int> len_dist(cfg.min_instance_len, cfg.max_instance_len);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);

  for (int v = 0; v < cfg.num_videos; ++v) {
    const int n = count_dist(rng);
    std::vector<int> lens(static_cast<std::size_t>(n));
    long total = 0;
    for (int attempt = 0;; ++attempt) {
      total = 0;
      for (int& l : lens) total += (l = len_dist(rng));
      if (total <= cfg.length) break;
      if (attempt >= 1000) {
        throw DataError("generator: cannot pack " + std::to_string(n) + " instances into L=" +
                        std::to_string(cfg.length));
      }
    }
    // Split the free timesteps into n+1 random gaps.
    const int free = cfg.length - static_cast<int>(total);
    std::uniform_int_distribution<int> cut_dist(0, free);
    std::vector<int> cuts(static_cast<std::size_t>(n));
    for (int& c : cuts) c = cut_dist(rng);
    std::sort(cuts.begin(), cuts.end());

    UntrimmedSample s;
    s.features = FeatureSequence{len, f, std::vector<double>(len * f)};
    std::vector<int> label_of(len, -1);
    int cursor = 0, prev_cut = 0;
    for (int i = 0; i < n; ++i) {
      cursor += cuts[static_cast<std::size_t>(i)] - prev_cut;
      prev_cut = cuts[static_cast<std::size_t>(i)];
      const int cls = class_dist(rng);
      const int l = lens[static_cast<std::size_t>(i)];
      s.annotations.push_back({Segment(cursor, cursor + l), cls});
      for (int t = cursor; t < cursor + l; ++t) label_of[static_cast<std::size_t>(t)] = cls;
      cursor += l;
    }
    for (std::size_t t = 0; t < len; ++t) {
      const int cls = label_of[t];
      emit(s.features, t, cls < 0 ? ds.background : protos[static_cast<std::size_t>(cls)],
           cfg.noise_sigma, nd, rng);
    }
    ds.videos.push_back(std::move(s));
  }

  const auto clip_len = static_cast<std::size_t>(kExemplarLength);
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::vector<std::pair<std::size_t, std::size_t>> instances;  // (video, annotation)
    if (cfg.exemplar_source == ExemplarSource::kCropped) {
      for (std::size_t v = 0; v < ds.videos.size(); ++v) {
        for (std::size_t a = 0; a < ds.videos[v].annotations.size(); ++a) {
          if (ds.videos[v].annotations[a].cls == c) instances.emplace_back(v, a);
        }
      }
    }
    for (int e = 0; e < cfg.exemplars_per_class; ++e) {
      Exemplar ex{FeatureSequence{clip_len, f, std::vector<double>(clip_len * f)}, c};
      if (instances.empty()) {
        // Fresh clips; also the fallback for a class that never occurs in a video.
        for (std::size_t t = 0; t < clip_len; ++t) {
          emit(ex.features, t, protos[static_cast<std::size_t>(c)], cfg.noise_sigma, nd, rng);
        }
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, instances.size() - 1);
        const auto [v, a] = instances[pick(rng)];
        const auto& seg = ds.videos[v].annotations[a].segment;
        const double span = seg.length();
        for (std::size_t t = 0; t < clip_len; ++t) {
          const auto src = static_cast<std::size_t>(seg.start() + std::floor((t + 0.5) * span / clip_len));
          for (std::size_t ch = 0; ch < f; ++ch) ex.features.at(t, ch) = ds.videos[v].features.at(src, ch);
        }
      }
      ds.exemplars.push_back(std::move(ex));
    }
  }
  return ds;
}

// ---- splits --------------------------------------------------------------

const std::vector<int>& Split::classes(SplitSide side) const {
  return side == SplitSide::kTrain ? train_classes : test_classes;
}

const std::vector<std::size_t>& Split::videos(SplitSide side) const {
  return side == SplitSide::kTrain ? train_videos : test_videos;
}

bool Split::contains(SplitSide side, int cls) const {
  const auto& cs = classes(side);
  return std::binary_search(cs.begin(), cs.end(), cls);
}

Split split_classes(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split: test_fraction must lie in (0, 1)");
  }
  const int n = dataset.num_classes;
  const int n_test = static_cast<int>(std::llround(n * test_fraction));
  if (n_test < 5 || n - n_test < 5) {
    throw ConfigError("split: " + std::to_string(n - n_test) + " train / " +
                      std::to_string(n_test) + " test classes; 5-way episodes need >= 5 each");
  }
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  Split sp;
  sp.test_classes.assign(ids.begin(), ids.begin() + n_test);
  sp.train_classes.assign(ids.begin() + n_test, ids.end());
  std::sort(sp.test_classes.begin(), sp.test_classes.end());
  std::sort(sp.train_classes.begin(), sp.train_classes.end());

  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    int train = 0, test = 0;
    for (const auto& a : dataset.videos[v].annotations) {
      (sp.contains(SplitSide::kTest, a.cls) ? test : train)++;
    }
    (test > train ? sp.test_videos : sp.train_videos).push_back(v);
  }
  return sp;
}

std::vector<Annotation> side_annotations(const UntrimmedSample& video, const Split& split,
                                         SplitSide side) {
  std::vector<Annotation> out;
  for (const auto& a : video.annotations) {
    if (split.contains(side, a.cls)) out.push_back(a);
  }
  return out;
}

// ---- episodes ------------------------------------------------------------

Episode sample_episode(const Dataset& dataset, const Split& split, SplitSide side, int way,
                       int shot, std::uint64_t seed) {
  const auto& classes = split.classes(side);
  if (way < 1 || static_cast<std::size_t>(way) > classes.size()) {
    throw ConfigError("episode: way " + std::to_string(way) + " exceeds the " +
                      std::to_string(classes.size()) + " classes on this split");
  }
  if (shot < 1) throw ConfigError("episode: shot must be >= 1");

  std::vector<std::size_t> usable;
  for (std::size_t v : split.videos(side)) {
    if (!side_annotations(dataset.videos[v], split, side).empty()) usable.push_back(v);
  }
  if (usable.empty()) throw DataError("episode: no annotated untrimmed video on this split");

  std::mt19937_64 rng(seed);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.video_index = usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
  const UntrimmedSample& video = dataset.videos[ep.video_index];
  const auto annotations = side_annotations(video, split, side);
  std::set<int> present;
  for (const auto& a : annotations) present.insert(a.cls);

  std::vector<int> chosen;
  auto overlaps = [&](const std::vector<int>& set) {
    return std::any_of(set.begin(), set.end(), [&](int c) { return present.contains(c); });
  };
  for (int attempt = 0; attempt < kMaxClassSetAttempts; ++attempt) {
    std::vector<int> pool = classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(way));
    if (overlaps(pool)) {
      chosen = std::move(pool);
      break;
    }
  }
  if (chosen.empty()) {
    std::vector<int> pool = classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(way));
    pool.back() = *present.begin();
    chosen = std::move(pool);
  }
  // Random episode labels: label_map[label] = class.
  std::shuffle(chosen.begin(), chosen.end(), rng);
  ep.label_map = chosen;

  auto label_of = [&](int cls) {
    auto it = std::find(ep.label_map.begin(), ep.label_map.end(), cls);
    return it == ep.label_map.end() ? -1 : static_cast<int>(it - ep.label_map.begin());
  };
  ep.features = video.features;
  for (const auto& a : annotations) {
    const int label = label_of(a.cls);
    ep.proposal_ground_truth.push_back({a.segment, label});
    if (label >= 0) ep.ground_truth.push_back({a.segment, label});
  }

  ep.support.resize(static_cast<std::size_t>(way));
  for (int label = 0; label < way; ++label) {
    std::vector<std::size_t> pool;
    for (std::size_t e = 0; e < dataset.exemplars.size(); ++e) {
      if (dataset.exemplars[e].cls == ep.label_map[static_cast<std::size_t>(label)]) pool.push_back(e);
    }
    if (pool.empty()) {
      throw DataError("episode: class " + std::to_string(ep.label_map[static_cast<std::size_t>(label)]) +
                      " has no exemplars");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int s = 0; s < shot; ++s) {
      const std::size_t pick =
          static_cast<std::size_t>(s) < pool.size()
              ? pool[static_cast<std::size_t>(s)]
              : pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      ep.support[static_cast<std::size_t>(label)].push_back(dataset.exemplars[pick].features);
    }
  }
  return ep;
}

// ---- files ---------------------------------------------------------------

namespace {

constexpr int kDatasetVersion = 1;

void write_row(std::string& out, std::span<const double> row) {
  out += '[';
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{}", row[i]);
  }
  out += ']';
}

void write_features(std::string& out, const FeatureSequence& fs) {
  out += '[';
  for (std::size_t t = 0; t < fs.length; ++t) {
    if (t) out += ',';
    write_row(out, std::span<const double>(fs.values).subspan(t * fs.channels, fs.channels));
  }
  out += ']';
}

FeatureSequence read_features(const json& j, std::size_t rows, std::size_t cols,
                              const std::string& where) {
  if (!j.is_array() || j.size() != rows) {
    throw DataError(where + ": expected " + std::to_string(rows) + " feature rows");
  }
  FeatureSequence fs{rows, cols, {}};
  fs.values.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) {
      throw DataError(where + ": expected feature rows of width " + std::to_string(cols));
    }
    for (const auto& x : row) {
      if (!x.is_number()) throw DataError(where + ": non-numeric feature value");
      fs.values.push_back(x.get<double>());
    }
  }
  return fs;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write dataset file " + path.string());
  std::string line = fmt::format(R"({{"version":{},"num_classes":{},"L":{},"F":{})",
                                 kDatasetVersion, ds.num_classes, ds.length, ds.feature_dim);
  if (!ds.prototypes.empty()) {
    line += R"(,"prototypes":[)";
    for (std::size_t c = 0; c < ds.prototypes.size(); ++c) {
      if (c) line += ',';
      write_row(line, ds.prototypes[c]);
    }
    line += ']';
  }
  if (!ds.background.empty()) {
    line += R"(,"background":)";
    write_row(line, ds.background);
  }
  line += "}\n";
  os << line;
  for (const auto& v : ds.videos) {
    line = R"({"features":)";
    write_features(line, v.features);
    line += R"(,"annotations":[)";
    for (std::size_t a = 0; a < v.annotations.size(); ++a) {
      const auto& an = v.annotations[a];
      line += fmt::format(R"({}{{"start":{},"end":{},"class":{}}})", a ? "," : "",
                          an.segment.start(), an.segment.end(), an.cls);
    }
    line += "]}\n";
    os << line;
  }
  for (const auto& e : ds.exemplars) {
    line = fmt::format(R"({{"exemplar":true,"class":{},"features":)", e.cls);
    write_features(line, e.features);
    line += "}\n";
    os << line;
  }
  if (!os) throw DataError("failed writing dataset file " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read dataset file " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    try {
      if (!have_header) {
        if (j.at("version").get<int>() != kDatasetVersion) {
          throw DataError(where + ": unsupported dataset version");
        }
        ds.num_classes = j.at("num_classes").get<int>();
        ds.length = j.at("L").get<int>();
        ds.feature_dim = j.at("F").get<int>();
        if (ds.num_classes < 1 || ds.length < 1 || ds.feature_dim < 1) {
          throw DataError(where + ": header sizes must be positive");
        }
        if (j.contains("prototypes")) {
          ds.prototypes = j["prototypes"].get<std::vector<std::vector<double>>>();
        }
        if (j.contains("background")) ds.background = j["background"].get<std::vector<double>>();
        have_header = true;
        continue;
      }
      const auto f = static_cast<std::size_t>(ds.feature_dim);
      if (j.value("exemplar", false)) {
        Exemplar e;
        e.cls = j.at("class").get<int>();
        if (e.cls < 0 || e.cls >= ds.num_classes) throw DataError(where + ": class out of range");
        e.features = read_features(j.at("features"), kExemplarLength, f, where);
        ds.exemplars.push_back(std::move(e));
        continue;
      }
      UntrimmedSample s;
      s.features = read_features(j.at("features"), static_cast<std::size_t>(ds.length), f, where);
      for (const auto& a : j.at("annotations")) {
        const double start = a.at("start").get<double>();
        const double end = a.at("end").get<double>();
        const int cls = a.at("class").get<int>();
        if (!(start >= 0.0 && end <= ds.length && end > start)) {
          throw DataError(where + ": segment [" + std::to_string(start) + ", " +
                          std::to_string(end) + ") outside [0, " + std::to_string(ds.length) + ")");
        }
        if (cls < 0 || cls >= ds.num_classes) throw DataError(where + ": class out of range");
        s.annotations.push_back({Segment(start, end), cls});
      }
      ds.videos.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(path.string() + ": missing header line");
  return ds;
}

void save_split(const Split& split, const std::filesystem::path& path) {
  json j{{"train_classes", split.train_classes},
         {"test_classes", split.test_classes},
         {"train_videos", split.train_videos},
         {"test_videos", split.test_videos}};
  std::ofstream os(path);
  if (!os) throw DataError("cannot write split file " + path.string());
  os << j.dump(2) << '\n';
}

Split load_split(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read split file " + path.string());
  try {
    const json j = json::parse(is);
    Split sp;
    sp.train_classes = j.at("train_classes").get<std::vector<int>>();
    sp.test_classes = j.at("test_classes").get<std::vector<int>>();
    sp.train_videos = j.at("train_videos").get<std::vector<std::size_t>>();
    sp.test_videos = j.at("test_videos").get<std::vector<std::size_t>>();
    std::sort(sp.train_classes.begin(), sp.train_classes.end());
    std::sort(sp.test_classes.begin(), sp.test_classes.end());
    return sp;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace fstd
