#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fstd/encoder.hpp"
#include "fstd/geometry.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

struct Annotation {
  Segment segment;
  int cls = 0;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct UntrimmedSample {
  FeatureSequence features;
  std::vector<Annotation> annotations;
  friend bool operator==(const UntrimmedSample&, const UntrimmedSample&) = default;
};

struct Exemplar {
  FeatureSequence features;  // kExemplarLength rows
  int cls = 0;
  friend bool operator==(const Exemplar&, const Exemplar&) = default;
};

struct Dataset {
  int num_classes = 0;
  int length = 0;
  int feature_dim = 0;
  /// Optional generator metadata: unit class prototypes and the background prototype.
  std::vector<std::vector<double>> prototypes;
  std::vector<double> background;
  std::vector<UntrimmedSample> videos;
  std::vector<Exemplar> exemplars;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class ExemplarSource { kFresh, kCropped };

struct GeneratorConfig {
  int num_classes = 15;
  int num_videos = 100;
  int length = 512;
  int feature_dim = 16;
  double noise_sigma = 0.3;
  int min_instances = 1;
  int max_instances = 3;
  int min_instance_len = 20;
  int max_instance_len = 120;
  int exemplars_per_class = 20;
  ExemplarSource exemplar_source = ExemplarSource::kFresh;
  /// Gram-Schmidt the class and background prototypes (needs num_classes + 1 <= feature_dim).
  bool orthogonal_prototypes = false;

  void validate() const;
};

Dataset generate_dataset(const GeneratorConfig& cfg, std::uint64_t seed);

enum class SplitSide { kTrain, kTest };

struct Split {
  std::vector<int> train_classes;
  std::vector<int> test_classes;
  /// Each video belongs to the side owning the majority of its instances (ties: train).
  std::vector<std::size_t> train_videos;
  std::vector<std::size_t> test_videos;

  const std::vector<int>& classes(SplitSide side) const;
  const std::vector<std::size_t>& videos(SplitSide side) const;
  bool contains(SplitSide side, int cls) const;
};

Split split_classes(const Dataset& dataset, double test_fraction, std::uint64_t seed);

/// Annotations of one video restricted to the classes of one side.
std::vector<Annotation> side_annotations(const UntrimmedSample& video, const Split& split,
                                         SplitSide side);

struct Episode {
  std::size_t video_index = 0;
  FeatureSequence features;
  /// Ground truth of the episode's classes, labelled with episode indices 0..way-1.
  std::vector<GroundTruth> ground_truth;
  /// Every in-split annotation, class-agnostic for the proposal stages;
  /// cls is the episode index or -1 for classes outside the episode.
  std::vector<GroundTruth> proposal_ground_truth;
  int way = 5;
  int shot = 1;
  /// support[label] holds `shot` clips of that episode class.
  std::vector<std::vector<FeatureSequence>> support;
  /// Episode label -> global class id.
  std::vector<int> label_map;
};

/// Overlap-constrained rejection attempts before forcing an annotated class in.
inline constexpr int kMaxClassSetAttempts = 1000;

Episode sample_episode(const Dataset& dataset, const Split& split, SplitSide side, int way,
                       int shot, std::uint64_t seed);

/// Independent per-index seed derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

void save_split(const Split& split, const std::filesystem::path& path);
Split load_split(const std::filesystem::path& path);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fstd
