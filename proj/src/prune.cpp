#include "tinyclap/prune.hpp"

#include <algorithm>
#include <numeric>

#include "tinyclap/errors.hpp"
#include "tinyclap/hash.hpp"
#include "tinyclap/io_util.hpp"

namespace tinyclap {

namespace {

void require_r(Index r, Index d) {
  if (r < 1 || r > d)
    throw ContractError("r must lie in [1, " + std::to_string(d) + "], got " + std::to_string(r));
}

}  // namespace

std::vector<Index> PruneRanking::top_r(Index r) const {
  require_r(r, dim());
  return {index_order.begin(), index_order.begin() + r};
}

void PruneRanking::validate() const {
  const Index d = dim();
  if (d < 1) throw ContractError("ranking is empty");
  if (static_cast<Index>(importance.size()) != d)
    throw ContractError("ranking has " + std::to_string(importance.size()) + " importance values for " +
                        std::to_string(d) + " dimensions");
  std::vector<bool> seen(static_cast<std::size_t>(d), false);
  for (Index i : index_order) {
    if (i < 0 || i >= d || seen[static_cast<std::size_t>(i)])
      throw ContractError("ranking index order is not a permutation of 0.." + std::to_string(d - 1));
    seen[static_cast<std::size_t>(i)] = true;
  }
  for (Index k = 1; k < d; ++k) {
    const Index a = index_order[static_cast<std::size_t>(k - 1)], b = index_order[static_cast<std::size_t>(k)];
    const double ia = importance[static_cast<std::size_t>(a)], ib = importance[static_cast<std::size_t>(b)];
    if (ia < ib || (ia == ib && a > b))
      throw ContractError("ranking index order is not sorted by importance at position " + std::to_string(k));
  }
}

std::string PruneRanking::fingerprint() const {
  Fnv1a64 h;
  for (Index i : index_order) h.update_value(i);
  for (double v : importance) h.update_value(v);
  h.update(dataset_fingerprint);
  h.update(encoder_fingerprint);
  return to_hex(h.digest());
}

void to_json(nlohmann::json& j, const PruneRanking& r) {
  j = nlohmann::json{{"index_order", r.index_order},
                     {"importance", r.importance},
                     {"dataset_fingerprint", r.dataset_fingerprint},
                     {"encoder_fingerprint", r.encoder_fingerprint}};
}

void from_json(const nlohmann::json& j, PruneRanking& r) {
  j.at("index_order").get_to(r.index_order);
  j.at("importance").get_to(r.importance);
  j.at("dataset_fingerprint").get_to(r.dataset_fingerprint);
  j.at("encoder_fingerprint").get_to(r.encoder_fingerprint);
}

void save_ranking(const std::filesystem::path& path, const PruneRanking& ranking) {
  write_text_atomic(path, nlohmann::json(ranking).dump(2) + "\n");
}

PruneRanking load_ranking(const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = read_file(path);
  PruneRanking r;
  try {
    r = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()))
            .get<PruneRanking>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid ranking file: " + e.what());
  }
  try {
    r.validate();
  } catch (const ContractError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return r;
}

std::vector<double> mean_abs_importance(const Eigen::MatrixXf& projections) {
  if (projections.rows() == 0) throw ContractError("cannot rank latents over an empty dataset");
  std::vector<double> out(static_cast<std::size_t>(projections.cols()), 0.0);
  for (Index j = 0; j < projections.cols(); ++j) {
    double acc = 0.0;
    for (Index i = 0; i < projections.rows(); ++i) acc += std::abs(static_cast<double>(projections(i, j)));
    out[static_cast<std::size_t>(j)] = acc / static_cast<double>(projections.rows());
  }
  return out;
}

std::vector<Index> rank_order(std::span<const double> importance) {
  std::vector<Index> order(importance.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return importance[static_cast<std::size_t>(a)] > importance[static_cast<std::size_t>(b)];
  });
  return order;
}

PruneRanking rank_projections(const Eigen::MatrixXf& projections) {
  PruneRanking r;
  r.importance = mean_abs_importance(projections);
  r.index_order = rank_order(r.importance);
  return r;
}

PruneRanking rank_latents(const StudentEncoder& encoder, const AudioDataset& dataset,
                          const FrontendSettings& frontend, const InferenceOptions& options) {
  if (dataset.empty()) throw ContractError("cannot rank latents over an empty dataset");
  PruneRanking r = rank_projections(project_dataset(encoder, dataset, frontend, options));
  r.dataset_fingerprint = to_hex(dataset.fingerprint);
  r.encoder_fingerprint = to_hex(fingerprint(encoder));
  return r;
}

Eigen::VectorXf select_top_r(const PruneRanking& ranking, const Eigen::VectorXf& vector, Index r) {
  if (vector.size() != ranking.dim())
    throw ContractError("vector has dimension " + std::to_string(vector.size()) + ", ranking covers " +
                        std::to_string(ranking.dim()));
  require_r(r, ranking.dim());
  Eigen::VectorXf out(r);
  for (Index k = 0; k < r; ++k) out[k] = vector[ranking.index_order[static_cast<std::size_t>(k)]];
  return out;
}

LatentVector select_top_r(const PruneRanking& ranking, const LatentVector& vector, Index r) {
  return {select_top_r(ranking, vector.values, r), false};
}

StudentEncoder prune_checkpoint(const StudentEncoder& encoder, const PruneRanking& ranking, Index r) {
  if (encoder.prune_info()) throw ContractError("encoder is already pruned; prune the original checkpoint");
  const std::string id = to_hex(fingerprint(encoder));
  if (ranking.encoder_fingerprint != id)
    throw ContractError("ranking was computed for encoder " + ranking.encoder_fingerprint + ", not " + id);
  if (ranking.dim() != encoder.output_dim())
    throw ContractError("ranking covers " + std::to_string(ranking.dim()) + " dimensions, encoder has " +
                        std::to_string(encoder.output_dim()));
  const std::vector<Index> kept = ranking.top_r(r);
  return encoder.pruned(kept);
}

}  // namespace tinyclap
