#pragma once

// Text-free distillation: the student's normalized projection is pulled
// toward a frozen teacher projection of the same clip,
//   loss = -(1/N) * sum_i <s_i, sg[t_i]>,
// first for the whole encoder (stage 1), then for the projection only
// (stage 2).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyclap/adam.hpp"
#include "tinyclap/dataset.hpp"
#include "tinyclap/encoder.hpp"
#include "tinyclap/store.hpp"

namespace tinyclap {

struct DistillConfig {
  int epochs_stage1 = 100;
  int epochs_stage2 = 20;
  double lr_stage1 = 3e-3;
  double lr_stage2 = 1e-3;
  int batch_size = 32;
  double crop_seconds = 5.0;
  std::uint64_t seed = 0;
  /// Use running statistics in normalization layers while training.
  bool freeze_norm_stats = false;
  /// Preprocessing workers; never changes results.
  int threads = 1;
  FrontendSettings frontend{};

  void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);

/// Read-only source of teacher projections, unit-normalized, d = dim().
template <typename Scalar>
class TeacherProvider {
 public:
  virtual ~TeacherProvider() = default;

  virtual Index dim() const = 0;
  /// Rows are teacher vectors for `ids`, whose features are `mels` (same order).
  virtual RowMajorMatrix<Scalar> batch(std::span<const std::string> ids, std::span<const MelSpectrogram> mels) const = 0;
  /// Throws DataError naming the first sample the provider cannot serve.
  virtual void require_ids(const AudioDataset& dataset) const = 0;
  /// Hash of everything the provider reads from.
  virtual std::uint64_t state_hash() const = 0;
};

/// Teacher vectors looked up by sample id (normalized on construction).
template <typename Scalar>
class EmbeddingTableTeacher final : public TeacherProvider<Scalar> {
 public:
  explicit EmbeddingTableTeacher(const EmbeddingTable& table);

  Index dim() const override { return dim_; }
  RowMajorMatrix<Scalar> batch(std::span<const std::string> ids, std::span<const MelSpectrogram> mels) const override;
  void require_ids(const AudioDataset& dataset) const override;
  std::uint64_t state_hash() const override;

 private:
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& lookup(const std::string& id) const;

  Index dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A frozen reference encoder run in eval mode on the student's crop.
template <typename Scalar>
class EncoderTeacher final : public TeacherProvider<Scalar> {
 public:
  explicit EncoderTeacher(BasicStudentEncoder<Scalar> encoder) : encoder_(std::move(encoder)) {}

  Index dim() const override { return encoder_.output_dim(); }
  RowMajorMatrix<Scalar> batch(std::span<const std::string> ids, std::span<const MelSpectrogram> mels) const override;
  void require_ids(const AudioDataset&) const override {}
  std::uint64_t state_hash() const override;
  const BasicStudentEncoder<Scalar>& encoder() const noexcept { return encoder_; }

 private:
  BasicStudentEncoder<Scalar> encoder_;
};

/// Rows of `x` must have unit norm within this tolerance.
inline constexpr double kUnitNormTolerance = 1e-3;

/// -(1/N) sum_i <s_i, t_i> for (N, d) batches of unit rows; the teacher
/// side is wrapped in stop_gradient.
template <typename Scalar>
Var<Scalar> distill_loss(Var<Scalar> student, Var<Scalar> teacher);

/// Value-only form.
template <typename Scalar>
double distill_loss(const RowMajorMatrix<Scalar>& student, const RowMajorMatrix<Scalar>& teacher);

struct EpochRecord {
  int epoch = 0;  // 1-based, continuous across stages
  int stage = 1;
  double train_loss = 0.0;
  double train_cosine = 0.0;
  bool has_holdout = false;
  double holdout_loss = 0.0;
  double holdout_cosine = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  std::size_t size() const noexcept { return epochs.size(); }
  bool empty() const noexcept { return epochs.empty(); }
  void append(const TrainReport& other);
  /// Columns: epoch, split, loss, mean_cosine, seconds.
  std::string to_csv() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainInputs {
  const AudioDataset* train = nullptr;
  const AudioDataset* holdout = nullptr;  // optional
  EpochCallback on_epoch;
};

/// Updates every parameter on shuffled random crops.
template <typename Scalar>
TrainReport train_stage1(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                         const TeacherProvider<Scalar>& teacher, const DistillConfig& config);

/// Updates the projection only; the body runs in eval mode and is left
/// bitwise untouched.
template <typename Scalar>
TrainReport train_stage2(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                         const TeacherProvider<Scalar>& teacher, const DistillConfig& config);

/// Both stages back to back.
template <typename Scalar>
TrainReport distill(BasicStudentEncoder<Scalar>& encoder, const TrainInputs& data,
                    const TeacherProvider<Scalar>& teacher, const DistillConfig& config);

/// Mean cosine / loss of the student against the teacher on center crops.
template <typename Scalar>
std::pair<double, double> evaluate_alignment(const BasicStudentEncoder<Scalar>& encoder, const AudioDataset& dataset,
                                             const TeacherProvider<Scalar>& teacher, const DistillConfig& config);

}  // namespace tinyclap
