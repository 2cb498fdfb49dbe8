// SPDX-License-Identifier: Apache-2.0
#include "ddnt/train.hpp"

#include "ddnt/ad_ops.hpp"
#include "ddnt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ddnt {

namespace {

// Training pairs draw seeds with the top bit clear, held-out pairs with it
// set, so the two never share an image.
constexpr std::uint64_t kHoldoutBit = std::uint64_t{1} << 63;

Batch crop_batch(std::vector<Tensor<float>> &blurred,
                 std::vector<Tensor<float>> &sharp) {
  return {stack_images(blurred), stack_images(sharp)};
}

} // namespace

LossKind parse_loss(std::string_view name) {
  if (name == "l1")
    return LossKind::l1;
  if (name == "charbonnier")
    return LossKind::charbonnier;
  throw std::invalid_argument("unknown loss '" + std::string(name) +
                              "' (expected l1 or charbonnier)");
}

const char *loss_name(LossKind kind) {
  return kind == LossKind::l1 ? "l1" : "charbonnier";
}

void TrainConfig::validate() const {
  const auto bad = [](const std::string &m) { throw std::invalid_argument(m); };
  if (!(lr_min >= 0) || !(lr0 >= lr_min))
    bad("learning rates need 0 <= lr_min <= lr0");
  if (lr0 > 0 && !(lr_min > 0 && lr_min < lr0))
    bad("learning rates need 0 < lr_min < lr0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    bad("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0))
    bad("adam_eps must be positive");
  if (steps < 1)
    bad("steps must be >= 1");
  if (batch < 1)
    bad("batch must be >= 1");
  if (patch < 8)
    bad("patch must be >= 8");
  if (!(clip_norm >= 0))
    bad("clip_norm must be >= 0");
  if (!(charbonnier_eps > 0))
    bad("charbonnier_eps must be positive");
}

double cosine_lr(std::size_t step, std::size_t total, double lr0,
                 double lr_min) {
  if (total == 0)
    return lr_min;
  const double t = static_cast<double>(std::min(step, total)) /
                   static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adam_step(ParamStore<T> &params, const Gradients<T> &grads,
               AdamState<T> &state, double lr, double beta1, double beta2,
               double eps) {
  ++state.t;
  const double c1 = 1 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1 - std::pow(beta2, static_cast<double>(state.t));
  for (auto &e : params.entries()) {
    if (!e.requires_grad)
      continue;
    const auto it = grads.find(e.name);
    if (it == grads.end())
      continue;
    const auto &g = it->second;
    require_same_shape(e.value.shape(), g.shape(), "adam_step");
    auto &m = state.m.try_emplace(e.name, e.value.shape()).first->second;
    auto &v = state.v.try_emplace(e.name, e.value.shape()).first->second;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1 - beta1) * gi;
      const double vi = beta2 * v[i] + (1 - beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      e.value[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

template <typename T> double clip_grad_norm(Gradients<T> &grads, double max_norm) {
  double sq = 0;
  for (const auto &[name, g] : grads)
    for (auto v : g.vec())
      sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<T>(max_norm / norm);
    for (auto &[name, g] : grads)
      for (auto &v : g.vec())
        v *= s;
  }
  return norm;
}

template <typename T> double loss_l1(const Tensor<T> &pred, const Tensor<T> &target) {
  require_same_shape(pred.shape(), target.shape(), "loss_l1");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    s += std::abs(static_cast<double>(pred[i]) - target[i]);
  return s / static_cast<double>(pred.numel());
}

template <typename T>
double loss_charbonnier(const Tensor<T> &pred, const Tensor<T> &target,
                        double eps) {
  require_same_shape(pred.shape(), target.shape(), "loss_charbonnier");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    s += std::sqrt(d * d + eps * eps);
  }
  return s / static_cast<double>(pred.numel());
}

SyntheticSource::SyntheticSource(double sigma_lo, double sigma_hi)
    : lo_(sigma_lo), hi_(sigma_hi) {
  if (!(sigma_lo >= 0 && sigma_hi >= sigma_lo))
    throw std::invalid_argument("synthetic sigma range must satisfy 0 <= lo <= hi");
}

Batch SyntheticSource::next(std::mt19937_64 &rng, std::size_t batch,
                            std::size_t patch) {
  std::vector<Tensor<float>> blurred, sharp;
  std::uniform_real_distribution<double> sigma(lo_, hi_);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto seed = rng() & ~kHoldoutBit;
    auto s = synth_pair(seed, patch, BlurSpec::gaussian(sigma(rng)));
    blurred.push_back(std::move(s.blurred));
    sharp.push_back(std::move(s.sharp));
  }
  return crop_batch(blurred, sharp);
}

DatasetSource::DatasetSource(PairDataset data) : data_(std::move(data)) {
  if (data_.empty())
    throw DatasetError("cannot train on an empty dataset");
}

Batch DatasetSource::next(std::mt19937_64 &rng, std::size_t batch,
                          std::size_t patch) {
  std::vector<Tensor<float>> blurred, sharp;
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  for (std::size_t i = 0; i < batch; ++i) {
    auto [b, s] = random_crop_pair(data_.pairs[pick(rng)], patch, rng);
    blurred.push_back(std::move(b));
    sharp.push_back(std::move(s));
  }
  return crop_batch(blurred, sharp);
}

std::vector<PairSample> synthetic_holdout(std::size_t count, std::size_t size,
                                          std::uint64_t seed, double sigma_lo,
                                          double sigma_hi) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> sigma(sigma_lo, sigma_hi);
  std::vector<PairSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = kHoldoutBit | (rng() & ~kHoldoutBit);
    out.push_back(synth_pair(s, size, BlurSpec::gaussian(sigma(rng))));
    out.back().id = "holdout_" + std::to_string(i);
  }
  return out;
}

std::vector<PairSample> synthetic_holdout(std::size_t count, std::size_t size,
                                          std::uint64_t seed,
                                          const BlurSpec &blur) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<PairSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(synth_pair(kHoldoutBit | (rng() & ~kHoldoutBit), size, blur));
    out.back().id = "holdout_" + std::to_string(i);
  }
  return out;
}

HoldoutPsnr evaluate_holdout(const Model &model,
                             const std::vector<PairSample> &pairs) {
  if (pairs.empty())
    throw std::invalid_argument("evaluate_holdout: no pairs");
  HoldoutPsnr r;
  for (const auto &p : pairs) {
    const auto out = unstack_image(forward(model, stack_images({p.blurred})), 0);
    r.deblurred += psnr(out, p.sharp);
    r.blurred += psnr(p.blurred, p.sharp);
  }
  r.deblurred /= static_cast<double>(pairs.size());
  r.blurred /= static_cast<double>(pairs.size());
  return r;
}

std::vector<TrainRecord>
train(Model &model, BatchSource &source, const TrainConfig &cfg,
      const std::vector<PairSample> &holdout,
      const std::function<void(const TrainRecord &)> &on_record) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  AdamState<float> adam;
  std::vector<TrainRecord> records;
  records.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto batch = source.next(rng, cfg.batch, cfg.patch);
    const double lr = cosine_lr(step - 1, cfg.steps, cfg.lr0, cfg.lr_min);

    Tape<float> tape;
    auto pred = ad::model_forward(tape, model, tape.constant(batch.blurred));
    auto target = tape.constant(batch.sharp);
    auto loss = cfg.loss == LossKind::l1
                    ? ad::l1_loss(pred, target)
                    : ad::charbonnier_loss(pred, target,
                                           static_cast<float>(cfg.charbonnier_eps));
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value))
      throw std::runtime_error("non-finite loss at step " + std::to_string(step));
    auto grads = tape.backward(loss);
    clip_grad_norm(grads, cfg.clip_norm);
    adam_step(model.params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    TrainRecord rec{step, lr, loss_value, std::nullopt};
    if (!holdout.empty() && cfg.eval_every > 0 &&
        (step % cfg.eval_every == 0 || step == cfg.steps))
      rec.psnr = evaluate_holdout(model, holdout).deblurred;
    records.push_back(rec);
    if (on_record)
      on_record(rec);
  }
  return records;
}

std::string loss_curve_csv(const std::vector<TrainRecord> &records) {
  const bool with_psnr = std::any_of(records.begin(), records.end(),
                                     [](const auto &r) { return r.psnr.has_value(); });
  std::ostringstream os;
  os.precision(9);
  os << "step,lr,loss" << (with_psnr ? ",psnr" : "") << "\n";
  for (const auto &r : records) {
    os << r.step << "," << r.lr << "," << r.loss;
    if (with_psnr) {
      os << ",";
      if (r.psnr)
        os << *r.psnr;
    }
    os << "\n";
  }
  return os.str();
}

double mean_loss(const std::vector<TrainRecord> &records, std::size_t begin,
                 std::size_t end) {
  if (begin >= end || end > records.size())
    throw std::out_of_range("mean_loss: bad record range");
  double s = 0;
  for (std::size_t i = begin; i < end; ++i)
    s += records[i].loss;
  return s / static_cast<double>(end - begin);
}

#define DDNT_TRAIN_INST(T)                                                     \
  template void adam_step(ParamStore<T> &, const Gradients<T> &,              \
                          AdamState<T> &, double, double, double, double);     \
  template double clip_grad_norm(Gradients<T> &, double);                      \
  template double loss_l1(const Tensor<T> &, const Tensor<T> &);               \
  template double loss_charbonnier(const Tensor<T> &, const Tensor<T> &,       \
                                   double);
DDNT_TRAIN_INST(float)
DDNT_TRAIN_INST(double)
#undef DDNT_TRAIN_INST

} // namespace ddnt
