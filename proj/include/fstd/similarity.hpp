#pragma once

#include <span>
#include <vector>

#include "fstd/autodiff.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

/// Cosine similarity of every (exemplar j, proposal i) pair.
struct SimilarityMatrix {
  std::size_t rows = 0;  // exemplars
  std::size_t cols = 0;  // proposals
  std::vector<int> exemplar_class;
  std::vector<ad::Tensor> entries;  // row-major scalars

  const ad::Tensor& entry(std::size_t j, std::size_t i) const { return entries[j * cols + i]; }
  double at(std::size_t j, std::size_t i) const { return entry(j, i).item(); }
};

/// Per proposal, the mean similarity to each episode class's exemplars.
struct ClassScores {
  std::size_t way = 0;
  std::vector<ad::Tensor> per_proposal;  // each [way]

  std::size_t size() const { return per_proposal.size(); }
  double at(std::size_t i, std::size_t c) const { return per_proposal[i].values()[c]; }
};

struct ClassAssignment {
  int cls = 0;
  double similarity = 0.0;
};

SimilarityMatrix similarity_matrix(std::span<const ad::Tensor> exemplar_embeds,
                                   std::span<const int> exemplar_class,
                                   std::span<const ad::Tensor> proposal_embeds);

ClassScores kshot_average(const SimilarityMatrix& m, int way);

/// argmax over classes, lowest index on ties.
std::vector<ClassAssignment> assign_class(const ClassScores& scores);

/// Mean cross-entropy of scores/tau against matched_class over positives that
/// matched an episode class. Zero when there are none.
ad::Tensor fewshot_loss(const ClassScores& scores, const LabeledSet& labels, double tau);

}  // namespace fstd
