#include "tinyclap/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tinyclap/errors.hpp"

namespace tinyclap {

std::string build_caption(std::string_view label) {
  if (label.empty()) throw ContractError("caption label must be non-empty");
  return std::string(kCaptionPrefix) + std::string(label);
}

std::optional<std::size_t> ClassEmbeddingSet::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  return std::nullopt;
}

void ClassEmbeddingSet::validate() const {
  if (labels.size() != vectors.size())
    throw ContractError("class set has " + std::to_string(labels.size()) + " labels and " +
                        std::to_string(vectors.size()) + " vectors");
  std::set<std::string_view> seen;
  for (const std::string& l : labels)
    if (!seen.insert(l).second) throw ContractError("duplicate class label '" + l + "'");
  for (std::size_t i = 0; i < vectors.size(); ++i)
    if (vectors[i].size() != dim())
      throw ContractError("class '" + labels[i] + "' has dimension " + std::to_string(vectors[i].size()) +
                          ", expected " + std::to_string(dim()));
}

ClassEmbeddingSet ClassEmbeddingSet::from_table(const EmbeddingTable& table) {
  ClassEmbeddingSet out;
  for (const EmbeddingRecord& r : table.records) {
    const float norm = r.vector.norm();
    if (!(norm > 0.f)) throw DataError("class embedding '" + r.id + "' has zero norm");
    out.labels.push_back(r.id);
    out.vectors.push_back(r.vector / norm);
  }
  out.validate();
  return out;
}

EmbeddingTable ClassEmbeddingSet::to_table() const {
  validate();
  EmbeddingTable t;
  t.dim = dim();
  for (std::size_t i = 0; i < size(); ++i) t.records.push_back({labels[i], vectors[i]});
  return t;
}

LatentSelection identity_selection(Index d) {
  LatentSelection s;
  s.student.resize(static_cast<std::size_t>(d));
  std::iota(s.student.begin(), s.student.end(), Index{0});
  s.classes = s.student;
  return s;
}

LatentSelection ranking_selection(const PruneRanking& ranking, Index r) {
  const std::vector<Index> top = ranking.top_r(r);
  return {top, top};
}

LatentSelection selection_for(const StudentEncoder& encoder, const PruneRanking* ranking, std::optional<Index> r) {
  const Index out = encoder.output_dim();
  if (const auto& p = encoder.prune_info()) {
    const Index rr = r.value_or(out);
    if (rr < 1 || rr > out)
      throw ContractError("r must lie in [1, " + std::to_string(out) + "] for this pruned encoder, got " +
                          std::to_string(rr));
    LatentSelection s;
    for (Index k = 0; k < rr; ++k) {
      s.student.push_back(k);
      s.classes.push_back(p->kept[static_cast<std::size_t>(k)]);
    }
    return s;
  }
  const Index rr = r.value_or(out);
  if (rr < 1 || rr > out)
    throw ContractError("r must lie in [1, " + std::to_string(out) + "], got " + std::to_string(rr));
  if (ranking) {
    if (ranking->dim() != out)
      throw ContractError("ranking covers " + std::to_string(ranking->dim()) + " dimensions, encoder outputs " +
                          std::to_string(out));
    return ranking_selection(*ranking, rr);
  }
  if (rr != out) throw ContractError("selecting r = " + std::to_string(rr) + " < d requires a ranking");
  return identity_selection(out);
}

namespace {

Eigen::VectorXd gather_unit(const Eigen::VectorXf& v, std::span<const Index> idx) {
  Eigen::VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Index>(k)] = static_cast<double>(v[idx[k]]);
  const double norm = out.norm();
  return norm > kernels::kNormalizeEps ? Eigen::VectorXd(out / norm) : Eigen::VectorXd(out / kernels::kNormalizeEps);
}

void check_indices(std::span<const Index> idx, Index dim, const char* side) {
  for (Index i : idx)
    if (i < 0 || i >= dim)
      throw ContractError(std::string("latent index ") + std::to_string(i) + " out of range for " + side +
                          " dimension " + std::to_string(dim));
}

}  // namespace

Prediction classify(const Eigen::VectorXf& student, const ClassEmbeddingSet& classes, const LatentSelection& selection,
                    double tau) {
  if (classes.size() == 0) throw ContractError("classify: empty class set");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ContractError("classify: temperature must be > 0");
  if (selection.student.size() != selection.classes.size() || selection.student.empty())
    throw ContractError("classify: malformed latent selection");
  classes.validate();
  check_indices(selection.student, student.size(), "student");
  check_indices(selection.classes, classes.dim(), "class");

  const Eigen::VectorXd s = gather_unit(student, selection.student);
  Prediction p;
  p.similarity_scores.resize(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c)
    p.similarity_scores[c] = s.dot(gather_unit(classes.vectors[c], selection.classes));
  const double top = *std::max_element(p.similarity_scores.begin(), p.similarity_scores.end());
  p.probabilities.resize(classes.size());
  double z = 0.0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    p.probabilities[c] = std::exp(tau * (p.similarity_scores[c] - top));
    z += p.probabilities[c];
  }
  for (double& v : p.probabilities) v /= z;
  p.predicted_index = static_cast<std::size_t>(
      std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
  p.predicted_label = classes.labels[p.predicted_index];
  return p;
}

Prediction classify(const LatentVector& student, const ClassEmbeddingSet& classes, const PruneRanking& ranking, Index r,
                    double tau) {
  if (student.dim() != ranking.dim() || (classes.size() > 0 && classes.dim() != ranking.dim()))
    throw ContractError("classify: student dimension " + std::to_string(student.dim()) + " and class dimension " +
                        std::to_string(classes.dim()) + " must both equal the ranking dimension " +
                        std::to_string(ranking.dim()));
  return classify(student.values, classes, ranking_selection(ranking, r), tau);
}

std::vector<EvalResult> evaluate(const StudentEncoder& encoder, const AudioDataset& test,
                                 const ClassEmbeddingSet& classes, const PruneRanking* ranking,
                                 std::span<const Index> r_values, const FrontendSettings& frontend,
                                 const EvalOptions& options) {
  if (classes.size() == 0) throw ContractError("evaluate: empty class set");
  if (test.empty()) throw ContractError("evaluate: empty test set");
  const Index original = encoder.prune_info() ? encoder.prune_info()->original_dim : encoder.output_dim();
  if (classes.dim() != original)
    throw ContractError("class embeddings have dimension " + std::to_string(classes.dim()) + ", encoder latent space " +
                        std::to_string(original));
  std::vector<std::size_t> truth;
  for (const AudioItem& item : test.items) {
    if (!item.label) throw DataError("test sample '" + item.id + "' has no label");
    const auto idx = classes.index_of(*item.label);
    if (!idx) throw DataError("label '" + *item.label + "' of sample '" + item.id + "' is not among the classes");
    truth.push_back(*idx);
  }
  std::vector<LatentSelection> selections;
  if (r_values.empty()) {
    selections.push_back(selection_for(encoder, ranking, std::nullopt));
  } else {
    for (Index r : r_values) selections.push_back(selection_for(encoder, ranking, r));
  }

  const Eigen::MatrixXf proj = project_dataset(encoder, test, frontend, options.inference);
  const Index body = body_param_count(encoder.config());
  std::vector<EvalResult> out;
  for (const LatentSelection& sel : selections) {
    EvalResult res;
    res.r = sel.r();
    res.total = test.size();
    res.params = body + sel.r() * (encoder.feature_dim() + 1);
    res.labels = classes.labels;
    res.confusion.assign(classes.size(), std::vector<std::size_t>(classes.size(), 0));
    for (std::size_t i = 0; i < test.size(); ++i) {
      const Eigen::VectorXf row = proj.row(static_cast<Index>(i)).transpose();
      const Prediction p = classify(row, classes, sel, options.tau);
      ++res.confusion[truth[i]][p.predicted_index];
      if (p.predicted_index == truth[i]) ++res.correct;
      res.ids.push_back(test.items[i].id);
      res.predicted.push_back(p.predicted_index);
    }
    res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.total);
    out.push_back(std::move(res));
  }
  return out;
}

std::string results_csv(std::span<const EvalResult> results) {
  std::string out = "r,accuracy,params,correct,total\n";
  char line[128];
  for (const EvalResult& r : results) {
    std::snprintf(line, sizeof line, "%lld,%.6f,%lld,%zu,%zu\n", static_cast<long long>(r.r), r.accuracy,
                  static_cast<long long>(r.params), r.correct, r.total);
    out += line;
  }
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string confusion_csv(const EvalResult& result) {
  std::string out = "true";
  for (const std::string& l : result.labels) out += "," + csv_field(l);
  out += "\n";
  for (std::size_t i = 0; i < result.labels.size(); ++i) {
    out += csv_field(result.labels[i]);
    for (std::size_t n : result.confusion[i]) out += "," + std::to_string(n);
    out += "\n";
  }
  return out;
}

}  // namespace tinyclap
