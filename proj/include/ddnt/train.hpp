// SPDX-License-Identifier: Apache-2.0
/**
 * @file   train.hpp
 * @brief  Cosine learning-rate schedule, Adam, gradient clipping, losses and
 *         the desk-scale training loop.
 */
#pragma once

#include "ddnt/autodiff.hpp"
#include "ddnt/data.hpp"
#include "ddnt/model.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ddnt {

enum class LossKind { l1, charbonnier };

LossKind parse_loss(std::string_view name);
const char *loss_name(LossKind kind);

struct TrainConfig {
  double lr0 = 2e-4;
  double lr_min = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 2;
  std::size_t patch = 32;
  std::size_t steps = 500;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::l1;
  double charbonnier_eps = 1e-3;
  /// Global L2 norm bound on the gradient; 0 disables clipping.
  double clip_norm = 1.0;
  /// Held-out PSNR is reported every this many steps (and at the last
  /// step); 0 disables it.
  std::size_t eval_every = 100;

  /// Throws std::invalid_argument naming the bad field. lr0 = lr_min = 0 is
  /// accepted as a frozen run.
  void validate() const;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi step / total)) / 2, step clamped to
/// [0, total].
double cosine_lr(std::size_t step, std::size_t total, double lr0,
                 double lr_min);

template <typename T> struct AdamState {
  std::size_t t = 0;
  std::map<std::string, Tensor<T>> m, v;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
template <typename T>
void adam_step(ParamStore<T> &params, const Gradients<T> &grads,
               AdamState<T> &state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T> double clip_grad_norm(Gradients<T> &grads, double max_norm);

/// Mean absolute error.
template <typename T> double loss_l1(const Tensor<T> &pred, const Tensor<T> &target);
/// mean(sqrt(d^2 + eps^2)); equals eps when pred == target.
template <typename T>
double loss_charbonnier(const Tensor<T> &pred, const Tensor<T> &target,
                        double eps = 1e-3);

struct Batch {
  Tensor<float> blurred; // [N,P,P,3]
  Tensor<float> sharp;
};

class BatchSource {
public:
  virtual ~BatchSource() = default;
  virtual Batch next(std::mt19937_64 &rng, std::size_t batch,
                     std::size_t patch) = 0;
};

/// Fresh synthetic pairs with Gaussian sigma drawn uniformly per sample.
class SyntheticSource : public BatchSource {
public:
  SyntheticSource(double sigma_lo = 1.0, double sigma_hi = 3.0);
  Batch next(std::mt19937_64 &rng, std::size_t batch, std::size_t patch) override;

private:
  double lo_, hi_;
};

/// Random pairs from a loaded dataset, randomly cropped and flipped.
class DatasetSource : public BatchSource {
public:
  /// Throws DatasetError if the dataset is empty.
  explicit DatasetSource(PairDataset data);
  Batch next(std::mt19937_64 &rng, std::size_t batch, std::size_t patch) override;

private:
  PairDataset data_;
};

/// Held-out synthetic pairs, seeds disjoint from any training draw.
std::vector<PairSample> synthetic_holdout(std::size_t count, std::size_t size,
                                          std::uint64_t seed,
                                          double sigma_lo = 1.0,
                                          double sigma_hi = 3.0);
/// Same seeding, one fixed blur for every pair.
std::vector<PairSample> synthetic_holdout(std::size_t count, std::size_t size,
                                          std::uint64_t seed,
                                          const BlurSpec &blur);

struct HoldoutPsnr {
  double deblurred = 0; // mean PSNR(model(blurred), sharp)
  double blurred = 0;   // mean PSNR(blurred, sharp)
};
HoldoutPsnr evaluate_holdout(const Model &model,
                             const std::vector<PairSample> &pairs);

struct TrainRecord {
  std::size_t step = 0; // 1-based update index
  double lr = 0;
  double loss = 0;
  std::optional<double> psnr;
};

/// Runs cfg.steps updates in place on `model`. Each step draws a batch,
/// runs the training forward, backpropagates the loss, clips and applies
/// Adam at cosine_lr(step - 1, steps). Throws on a non-finite loss.
std::vector<TrainRecord>
train(Model &model, BatchSource &source, const TrainConfig &cfg,
      const std::vector<PairSample> &holdout = {},
      const std::function<void(const TrainRecord &)> &on_record = {});

/// `step,lr,loss[,psnr]`; the psnr column appears if any record has one.
std::string loss_curve_csv(const std::vector<TrainRecord> &records);

/// Mean loss over records [begin, end).
double mean_loss(const std::vector<TrainRecord> &records, std::size_t begin,
                 std::size_t end);

} // namespace ddnt
