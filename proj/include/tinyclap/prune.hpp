#pragma once

// Latent-dimension ranking and pruning. Dimension j is scored by the mean
// absolute value of the (un-normalized) student projection over a dataset;
// keeping the top r of that order shrinks the projection to r outputs.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyclap/dataset.hpp"
#include "tinyclap/encoder.hpp"

namespace tinyclap {

struct PruneRanking {
  std::vector<Index> index_order;  // permutation of 0..d-1, most important first
  std::vector<double> importance;  // by original index
  std::string dataset_fingerprint;
  std::string encoder_fingerprint;

  Index dim() const noexcept { return static_cast<Index>(index_order.size()); }
  /// The first r entries of index_order; 1 <= r <= d.
  std::vector<Index> top_r(Index r) const;
  /// Permutation, sortedness and tie-break checks.
  void validate() const;
  std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const PruneRanking& r);
void from_json(const nlohmann::json& j, PruneRanking& r);

void save_ranking(const std::filesystem::path& path, const PruneRanking& ranking);
PruneRanking load_ranking(const std::filesystem::path& path);

/// importance[j] = mean_i |projections(i, j)|.
std::vector<double> mean_abs_importance(const Eigen::MatrixXf& projections);

/// Stable descending order of `importance`; ties keep the lower index first.
std::vector<Index> rank_order(std::span<const double> importance);

/// Ranking from precomputed projections (rows = samples).
PruneRanking rank_projections(const Eigen::MatrixXf& projections);

/// Ranks an encoder's latent dimensions over center crops of `dataset`.
PruneRanking rank_latents(const StudentEncoder& encoder, const AudioDataset& dataset,
                          const FrontendSettings& frontend, const InferenceOptions& options = {});

/// Entries of `vector` at top_r(r), in ranking order. Not re-normalized.
Eigen::VectorXf select_top_r(const PruneRanking& ranking, const Eigen::VectorXf& vector, Index r);
LatentVector select_top_r(const PruneRanking& ranking, const LatentVector& vector, Index r);

/// Projection rows top_r(r) of an unpruned encoder. The ranking must have
/// been computed on this encoder.
StudentEncoder prune_checkpoint(const StudentEncoder& encoder, const PruneRanking& ranking, Index r);

}  // namespace tinyclap
