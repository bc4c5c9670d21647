#include "tinyclap/distill.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "tinyclap/errors.hpp"
#include "tinyclap/hash.hpp"

namespace tinyclap {

void DistillConfig::validate() const {
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ContractError("distill: epoch counts must be >= 0");
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw ContractError("distill: learning rates must be > 0");
  if (batch_size < 1) throw ContractError("distill: batch size must be >= 1, got " + std::to_string(batch_size));
  if (!(crop_seconds > 0.0)) throw ContractError("distill: crop length must be > 0 seconds");
  if (threads < 1) throw ContractError("distill: threads must be >= 1");
  frontend.validate();
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = nlohmann::json{{"epochs_stage1", c.epochs_stage1},   {"epochs_stage2", c.epochs_stage2},
                     {"lr_stage1", c.lr_stage1},           {"lr_stage2", c.lr_stage2},
                     {"batch_size", c.batch_size},         {"crop_seconds", c.crop_seconds},
                     {"seed", c.seed},                     {"freeze_norm_stats", c.freeze_norm_stats},
                     {"threads", c.threads},               {"frontend", c.frontend}};
}

namespace {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
void require_unit_rows(const Tensor<Scalar>& x, const char* side) {
  const Index n = x.dim(0), d = x.dim(1);
  const auto m = x.matrix(n, d);
  for (Index i = 0; i < n; ++i) {
    const double norm = static_cast<double>(m.row(i).norm());
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance))
      throw ContractError(std::string("distill_loss: ") + side + " row " + std::to_string(i) +
                          " is not unit-normalized (norm " + std::to_string(norm) + ")");
  }
}

template <typename Scalar>
std::uint64_t hash_tensors(const BasicStudentEncoder<Scalar>& encoder) {
  Fnv1a64 h;
  h.update(nlohmann::json(encoder.config()).dump());
  for (const auto& [name, t] : encoder.named_tensors()) {
    h.update(name);
    h.update(std::as_bytes(std::span(t->raw(), static_cast<std::size_t>(t->size()))));
  }
  return h.digest();
}

template <typename Scalar>
RowMajorMatrix<Scalar> normalized_rows(const Tensor<Scalar>& projections) {
  const Tensor<Scalar> unit = kernels::l2_normalize(projections, 1);
  return unit.matrix(unit.dim(0), unit.dim(1));
}

template <typename Scalar>
Tensor<Scalar> as_tensor(const RowMajorMatrix<Scalar>& m) {
  Tensor<Scalar> t({m.rows(), m.cols()});
  t.matrix(m.rows(), m.cols()) = m;
  return t;
}

std::vector<std::string> ids_of(const AudioDataset& dataset, std::span<const std::size_t> rows) {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) ids.push_back(dataset.items[r].id);
  return ids;
}

/// Center-crop features plus teacher targets for a fixed split.
template <typename Scalar>
struct FixedSplit {
  std::vector<MelSpectrogram> mels;
  RowMajorMatrix<Scalar> targets;
};

template <typename Scalar>
FixedSplit<Scalar> prepare_fixed(const AudioDataset& dataset, const TeacherProvider<Scalar>& teacher,
                                 const DistillConfig& config) {
  FixedSplit<Scalar> out;
  const MelFrontend frontend(config.frontend);
  out.mels = center_crop_mels(dataset, frontend, config.crop_seconds, config.threads);
  std::vector<std::size_t> rows(dataset.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const std::vector<std::string> ids = ids_of(dataset, rows);
  out.targets.resize(static_cast<Index>(dataset.size()), teacher.dim());
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t count = std::min<std::size_t>(config.batch_size, rows.size() - start);
    out.targets.middleRows(static_cast<Index>(start), static_cast<Index>(count)) =
        teacher.batch(std::span(ids).subspan(start, count), std::span(out.mels).subspan(start, count));
  }
  return out;
}

template <typename Scalar>
double mean_cosine(const BasicStudentEncoder<Scalar>& encoder, const FixedSplit<Scalar>& split, int batch_size) {
  double total = 0.0;
  const std::size_t n = split.mels.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(batch_size, n - start);
    const RowMajorMatrix<Scalar> s =
        normalized_rows(encoder.forward_eval(mel_batch<Scalar>(std::span(split.mels).subspan(start, count))));
    const auto t = split.targets.middleRows(static_cast<Index>(start), static_cast<Index>(count));
    total += static_cast<double>(s.cwiseProduct(t).sum());
  }
  return total / static_cast<double>(n);
}

template <typename Scalar>
TrainReport run_stage(int stage, BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                      const TeacherProvider<Scalar>& teacher, const DistillConfig& config, int first_epoch) {
  config.validate();
  const int epochs = stage == 1 ? config.epochs_stage1 : config.epochs_stage2;
  if (!data.train) throw ContractError("distill: no training split given");
  if (teacher.dim() != encoder.output_dim())
    throw ContractError("distill: teacher dimension " + std::to_string(teacher.dim()) +
                        " does not match student projection " + std::to_string(encoder.output_dim()));
  teacher.require_ids(*data.train);
  if (data.holdout) teacher.require_ids(*data.holdout);
  TrainReport report;
  if (epochs == 0) return report;
  const AudioDataset& train = *data.train;
  if (train.empty()) throw ContractError("distill: training split is empty");

  const MelFrontend frontend(config.frontend);
  Adam<Scalar> adam(AdamOptions{.lr = stage == 1 ? config.lr_stage1 : config.lr_stage2});
  const std::vector<Parameter<Scalar>*> params =
      stage == 1 ? encoder.parameters() : encoder.projection_parameters();
  const BatchNormMode mode = config.freeze_norm_stats ? BatchNormMode::kEval : BatchNormMode::kTrain;

  std::optional<FixedSplit<Scalar>> holdout;
  if (data.holdout && !data.holdout->empty()) holdout = prepare_fixed(*data.holdout, teacher, config);

  for (int e = 0; e < epochs; ++e) {
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(stage),
                                                 static_cast<std::uint64_t>(e));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(epoch_seed);
    shuffle(order, order_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::span<const std::size_t> rows =
          std::span(order).subspan(start, std::min<std::size_t>(config.batch_size, order.size() - start));
      std::vector<MelSpectrogram> mels(rows.size());
      parallel_for(rows.size(), config.threads, [&](std::size_t k) {
        Rng crop_rng(derive_seed(epoch_seed, 1, rows[k]));
        mels[k] = prepare_mel(random_crop(train.items[rows[k]].clip, config.crop_seconds, crop_rng), frontend);
      });
      const std::vector<std::string> ids = ids_of(train, rows);
      const RowMajorMatrix<Scalar> targets = teacher.batch(ids, mels);

      Tape<Scalar> tape;
      Tensor<Scalar> input = mel_batch<Scalar>(mels);
      Var<Scalar> projection;
      if (stage == 1) {
        projection = encoder.forward(tape, tape.constant(std::move(input)), mode);
      } else {
        projection = encoder.project(tape, tape.constant(encoder.features_eval(input)));
      }
      const Var<Scalar> loss = distill_loss(l2_normalize(projection, 1), tape.constant(as_tensor(targets)));
      encoder.zero_grad();
      tape.backward(loss);
      adam.step(params);
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(rows.size());
    }

    EpochRecord rec;
    rec.epoch = first_epoch + e;
    rec.stage = stage;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_cosine = -rec.train_loss;
    if (holdout) {
      rec.has_holdout = true;
      rec.holdout_cosine = mean_cosine(encoder, *holdout, config.batch_size);
      rec.holdout_loss = -rec.holdout_cosine;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(rec);
    if (data.on_epoch) data.on_epoch(rec);
  }
  return report;
}

}  // namespace

template <typename Scalar>
EmbeddingTableTeacher<Scalar>::EmbeddingTableTeacher(const EmbeddingTable& table) : dim_(table.dim) {
  table.require_unique_ids();
  for (const EmbeddingRecord& r : table.records) {
    const double norm = static_cast<double>(r.vector.norm());
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw DataError("teacher embedding for '" + r.id + "' has zero or non-finite norm");
    index_.emplace(r.id, vectors_.size());
    ids_.push_back(r.id);
    vectors_.push_back((r.vector.template cast<double>() / norm).template cast<Scalar>());
  }
}

template <typename Scalar>
const VectorX<Scalar>& EmbeddingTableTeacher<Scalar>::lookup(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw DataError("no teacher embedding for sample '" + id + "'");
  return vectors_[it->second];
}

template <typename Scalar>
RowMajorMatrix<Scalar> EmbeddingTableTeacher<Scalar>::batch(std::span<const std::string> ids,
                                                             std::span<const MelSpectrogram>) const {
  RowMajorMatrix<Scalar> out(static_cast<Index>(ids.size()), dim_);
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = lookup(ids[i]).transpose();
  return out;
}

template <typename Scalar>
void EmbeddingTableTeacher<Scalar>::require_ids(const AudioDataset& dataset) const {
  for (const AudioItem& item : dataset.items) lookup(item.id);
}

template <typename Scalar>
std::uint64_t EmbeddingTableTeacher<Scalar>::state_hash() const {
  Fnv1a64 h;
  h.update_value(dim_);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    h.update(ids_[i]);
    h.update(std::as_bytes(std::span(vectors_[i].data(), static_cast<std::size_t>(vectors_[i].size()))));
  }
  return h.digest();
}

template <typename Scalar>
RowMajorMatrix<Scalar> EncoderTeacher<Scalar>::batch(std::span<const std::string>,
                                                      std::span<const MelSpectrogram> mels) const {
  return normalized_rows(encoder_.forward_eval(mel_batch<Scalar>(mels)));
}

template <typename Scalar>
std::uint64_t EncoderTeacher<Scalar>::state_hash() const {
  return hash_tensors(encoder_);
}

template <typename Scalar>
Var<Scalar> distill_loss(Var<Scalar> student, Var<Scalar> teacher) {
  if (student.shape().size() != 2 || student.shape() != teacher.shape())
    throw ContractError("distill_loss: expected equal (N, d) batches, got " + to_string(student.shape()) + " and " +
                        to_string(teacher.shape()));
  if (student.shape()[0] < 1) throw ContractError("distill_loss: empty batch");
  require_unit_rows(student.value(), "student");
  require_unit_rows(teacher.value(), "teacher");
  const Scalar factor = Scalar(-1) / static_cast<Scalar>(student.shape()[0]);
  return scale(sum(mul(student, stop_gradient(teacher))), factor);
}

template <typename Scalar>
double distill_loss(const RowMajorMatrix<Scalar>& student, const RowMajorMatrix<Scalar>& teacher) {
  Tape<Scalar> tape;
  return static_cast<double>(
      distill_loss(tape.constant(as_tensor(student)), tape.constant(as_tensor(teacher))).value().item());
}

void TrainReport::append(const TrainReport& other) {
  epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
}

std::string TrainReport::to_csv() const {
  std::string out = "epoch,split,loss,mean_cosine,seconds\n";
  char line[160];
  for (const EpochRecord& r : epochs) {
    std::snprintf(line, sizeof line, "%d,train,%.9g,%.9g,%.6f\n", r.epoch, r.train_loss, r.train_cosine, r.seconds);
    out += line;
    if (r.has_holdout) {
      std::snprintf(line, sizeof line, "%d,holdout,%.9g,%.9g,%.6f\n", r.epoch, r.holdout_loss, r.holdout_cosine,
                    r.seconds);
      out += line;
    }
  }
  return out;
}

template <typename Scalar>
TrainReport train_stage1(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                         const TeacherProvider<Scalar>& teacher, const DistillConfig& config) {
  return run_stage(1, encoder, data, teacher, config, 1);
}

template <typename Scalar>
TrainReport train_stage2(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                         const TeacherProvider<Scalar>& teacher, const DistillConfig& config) {
  return run_stage(2, encoder, data, teacher, config, config.epochs_stage1 + 1);
}

template <typename Scalar>
TrainReport distill(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                    const TeacherProvider<Scalar>& teacher, const DistillConfig& config) {
  TrainReport report = train_stage1(encoder, data, teacher, config);
  report.append(train_stage2(encoder, data, teacher, config));
  return report;
}

template <typename Scalar>
std::pair<double, double> evaluate_alignment(const BasicStudentEncoder<Scalar>& encoder, const AudioDataset& dataset,
                                             const TeacherProvider<Scalar>& teacher, const DistillConfig& config) {
  config.validate();
  if (dataset.empty()) throw ContractError("evaluate_alignment: empty dataset");
  teacher.require_ids(dataset);
  const FixedSplit<Scalar> split = prepare_fixed(dataset, teacher, config);
  const double cosine = mean_cosine(encoder, split, config.batch_size);
  return {cosine, -cosine};
}

#define TINYCLAP_INSTANTIATE(S)                                                                                     \
  template class EmbeddingTableTeacher<S>;                                                                          \
  template class EncoderTeacher<S>;                                                                                 \
  template Var<S> distill_loss<S>(Var<S>, Var<S>);                                                                  \
  template double distill_loss<S>(const RowMajorMatrix<S>&, const RowMajorMatrix<S>&);                              \
  template TrainReport train_stage1<S>(BasicStudentEncoder<S>&, const TrainInputs&, const TeacherProvider<S>&,      \
                                       const DistillConfig&);                                                       \
  template TrainReport train_stage2<S>(BasicStudentEncoder<S>&, const TrainInputs&, const TeacherProvider<S>&,      \
                                       const DistillConfig&);                                                       \
  template TrainReport distill<S>(BasicStudentEncoder<S>&, const TrainInputs&, const TeacherProvider<S>&,           \
                                  const DistillConfig&);                                                            \
  template std::pair<double, double> evaluate_alignment<S>(const BasicStudentEncoder<S>&, const AudioDataset&,      \
                                                           const TeacherProvider<S>&, const DistillConfig&);

TINYCLAP_INSTANTIATE(float)
TINYCLAP_INSTANTIATE(double)

#undef TINYCLAP_INSTANTIATE

}  // namespace tinyclap
