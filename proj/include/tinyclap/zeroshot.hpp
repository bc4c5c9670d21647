#pragma once

// Zero-shot classification in the shared latent space: the student vector
// and every class text vector are reduced to the same r latent dimensions,
// re-normalized, and scored by cosine; p = softmax(tau * cosines).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyclap/dataset.hpp"
#include "tinyclap/encoder.hpp"
#include "tinyclap/prune.hpp"
#include "tinyclap/store.hpp"

namespace tinyclap {

inline constexpr std::string_view kCaptionPrefix = "this is the sound of ";

/// kCaptionPrefix + label, verbatim.
std::string build_caption(std::string_view label);

struct ClassEmbeddingSet {
  std::vector<std::string> labels;
  std::vector<Eigen::VectorXf> vectors;  // unit norm
  std::string caption_template{kCaptionPrefix};

  std::size_t size() const noexcept { return labels.size(); }
  Index dim() const noexcept { return vectors.empty() ? 0 : vectors.front().size(); }
  std::optional<std::size_t> index_of(std::string_view label) const;
  /// Unique labels, one vector per label, equal dimensions.
  void validate() const;

  /// Record ids are the labels; vectors are normalized here.
  static ClassEmbeddingSet from_table(const EmbeddingTable& table);
  EmbeddingTable to_table() const;
};

struct Prediction {
  std::vector<double> probabilities;
  std::size_t predicted_index = 0;
  std::string predicted_label;
  std::vector<double> similarity_scores;
};

/// Latent dimensions read from the student output and from the class
/// vectors, position by position.
struct LatentSelection {
  std::vector<Index> student;
  std::vector<Index> classes;

  Index r() const noexcept { return static_cast<Index>(student.size()); }
};

LatentSelection identity_selection(Index d);
LatentSelection ranking_selection(const PruneRanking& ranking, Index r);

/// Selection for an encoder's outputs. A pruned encoder carries its own
/// kept indices (r <= its output size); an unpruned one needs a ranking
/// unless r is the full dimension.
LatentSelection selection_for(const StudentEncoder& encoder, const PruneRanking* ranking, std::optional<Index> r);

Prediction classify(const Eigen::VectorXf& student, const ClassEmbeddingSet& classes, const LatentSelection& selection,
                    double tau = 1.0);
Prediction classify(const LatentVector& student, const ClassEmbeddingSet& classes, const PruneRanking& ranking, Index r,
                    double tau = 1.0);

struct EvalResult {
  Index r = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  /// Encoder parameters with the projection reduced to r outputs.
  Index params = 0;
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::string> ids;
  std::vector<std::size_t> predicted;
};

struct EvalOptions {
  InferenceOptions inference{};
  double tau = 1.0;
};

/// One result per requested r (empty -> the encoder's full output size).
/// Every item needs a label present in `classes`.
std::vector<EvalResult> evaluate(const StudentEncoder& encoder, const AudioDataset& test,
                                 const ClassEmbeddingSet& classes, const PruneRanking* ranking,
                                 std::span<const Index> r_values, const FrontendSettings& frontend,
                                 const EvalOptions& options = {});

/// Columns: r, accuracy, params, correct, total.
std::string results_csv(std::span<const EvalResult> results);
/// Header "true,<label>..."; one row per true label.
std::string confusion_csv(const EvalResult& result);

}  // namespace tinyclap
