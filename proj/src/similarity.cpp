#include "fstd/similarity.hpp"

#include "fstd/error.hpp"

namespace fstd {

SimilarityMatrix similarity_matrix(std::span<const ad::Tensor> exemplar_embeds,
                                   std::span<const int> exemplar_class,
                                   std::span<const ad::Tensor> proposal_embeds) {
  if (exemplar_embeds.size() != exemplar_class.size()) {
    throw ConfigError("similarity_matrix: one class per exemplar required");
  }
  SimilarityMatrix m;
  m.rows = exemplar_embeds.size();
  m.cols = proposal_embeds.size();
  m.exemplar_class.assign(exemplar_class.begin(), exemplar_class.end());
  m.entries.reserve(m.rows * m.cols);
  for (const auto& s : exemplar_embeds) {
    for (const auto& r : proposal_embeds) {
      if (s.numel() != r.numel()) {
        throw ConfigError("similarity_matrix: embedding dimension mismatch " +
                          std::to_string(s.numel()) + " vs " + std::to_string(r.numel()));
      }
      m.entries.push_back(ad::cosine_similarity(s, r));
    }
  }
  return m;
}

ClassScores kshot_average(const SimilarityMatrix& m, int way) {
  if (way < 1) throw ConfigError("kshot_average: way must be >= 1");
  std::vector<std::vector<std::size_t>> rows_of(static_cast<std::size_t>(way));
  for (std::size_t j = 0; j < m.rows; ++j) {
    const int c = m.exemplar_class[j];
    if (c < 0 || c >= way) {
      throw ConfigError("kshot_average: exemplar class " + std::to_string(c) +
                        " outside [0, " + std::to_string(way) + ")");
    }
    rows_of[static_cast<std::size_t>(c)].push_back(j);
  }
  for (int c = 0; c < way; ++c) {
    if (rows_of[static_cast<std::size_t>(c)].empty()) {
      throw ConfigError("kshot_average: class " + std::to_string(c) + " has no exemplars");
    }
  }
  ClassScores out;
  out.way = static_cast<std::size_t>(way);
  for (std::size_t i = 0; i < m.cols; ++i) {
    std::vector<ad::Tensor> means;
    for (const auto& rows : rows_of) {
      std::vector<ad::Tensor> col;
      for (std::size_t j : rows) col.push_back(m.entry(j, i));
      means.push_back(rows.size() == 1 ? col[0]
                                       : ad::scale(ad::sum(col), 1.0 / static_cast<double>(rows.size())));
    }
    out.per_proposal.push_back(ad::stack(means));
  }
  return out;
}

std::vector<ClassAssignment> assign_class(const ClassScores& scores) {
  std::vector<ClassAssignment> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ClassAssignment a{0, scores.at(i, 0)};
    for (std::size_t c = 1; c < scores.way; ++c) {
      if (scores.at(i, c) > a.similarity) a = {static_cast<int>(c), scores.at(i, c)};
    }
    out.push_back(a);
  }
  return out;
}

ad::Tensor fewshot_loss(const ClassScores& scores, const LabeledSet& labels, double tau) {
  if (!(tau > 0.0)) throw ConfigError("fewshot_loss: tau must be positive");
  if (labels.size() != scores.size()) {
    throw ConfigError("fewshot_loss: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(scores.size()) + " proposals");
  }
  std::vector<ad::Tensor> terms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels.labels[i] != Label::kPositive || labels.matched_class[i] < 0) continue;
    const int target = labels.matched_class[i];
    if (static_cast<std::size_t>(target) >= scores.way) {
      throw ConfigError("fewshot_loss: matched class " + std::to_string(target) +
                        " outside [0, " + std::to_string(scores.way) + ")");
    }
    terms.push_back(ad::softmax_cross_entropy(ad::scale(scores.per_proposal[i], 1.0 / tau),
                                              static_cast<std::size_t>(target)));
  }
  if (terms.empty()) return ad::Tensor::constant({}, {0.0});
  return ad::scale(ad::sum(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace fstd
