// SPDX-License-Identifier: Apache-2.0
// Command-line front end: selftest, gradcheck, paramcount, train, infer,
// eval, synth. Exit codes: 0 success, 1 invalid usage or input, 2 runtime
// failure (including failed checks).

#include "ddnt/data.hpp"
#include "ddnt/image_io.hpp"
#include "ddnt/metrics.hpp"
#include "ddnt/model.hpp"
#include "ddnt/suites.hpp"
#include "ddnt/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace ddnt;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kInvalid = 1, kFailed = 2;

class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

std::string read_text(const fs::path &p) {
  std::ifstream f(p);
  if (!f)
    throw std::runtime_error("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text(const fs::path &p, const std::string &text) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f || !(f << text))
    throw std::runtime_error("cannot write '" + p.string() + "'");
}

ModelConfig model_config(const std::string &preset, const std::string &file) {
  if (!file.empty())
    return ModelConfig::from_text(read_text(file));
  return ModelConfig::preset(preset);
}

std::string thousands(std::size_t n) {
  auto s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3)
    s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// ---------------------------------------------------------------- commands

int cmd_selftest(std::uint64_t seed) {
  const auto table = selftest_suite(seed);
  std::cout << format_table(table);
  const bool ok = all_passed(table);
  std::cout << (ok ? "selftest: all checks passed\n" : "selftest: FAILED\n");
  return ok ? kOk : kFailed;
}

int cmd_gradcheck(std::uint64_t seed, double tol, double model_tol) {
  if (!(tol > 0) || !(model_tol > 0))
    throw UsageError("--tol and --model-tol must be positive");
  const auto table = gradient_suite(seed, tol, model_tol);
  std::cout << format_table(table);
  const bool ok = all_passed(table);
  std::cout << (ok ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
  return ok ? kOk : kFailed;
}

int cmd_paramcount(const std::string &preset, const std::string &config) {
  const auto cfg = model_config(preset, config);
  const auto pc = count_parameters(cfg);
  std::size_t width = 6;
  for (const auto &[name, n] : pc.modules)
    width = std::max(width, name.size());
  for (const auto &[name, n] : pc.modules)
    std::printf("%-*s %12s\n", static_cast<int>(width), name.c_str(),
                thousands(n).c_str());
  std::printf("%s\n", std::string(width + 13, '-').c_str());
  std::printf("%-*s %12s\n", static_cast<int>(width), "fusion",
              thousands(pc.fusion).c_str());
  std::printf("%-*s %12s  (%.2fM)\n", static_cast<int>(width), "total",
              thousands(pc.total).c_str(), static_cast<double>(pc.total) / 1e6);
  return kOk;
}

struct TrainArgs {
  std::string preset = "tiny", config, data, out, log, loss = "l1";
  std::size_t steps = 500, batch = 2, patch = 32, holdout = 20, eval_every = 100;
  std::uint64_t seed = 0;
  double lr = 2e-4, lr_min = 1e-7, clip = 1.0;
  bool quiet = false;
};

int cmd_train(const TrainArgs &a) {
  const auto mcfg = model_config(a.preset, a.config);
  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.patch = a.patch;
  cfg.seed = a.seed;
  cfg.lr0 = a.lr;
  cfg.lr_min = a.lr_min;
  cfg.clip_norm = a.clip;
  cfg.loss = parse_loss(a.loss);
  cfg.eval_every = a.eval_every;
  cfg.validate();

  std::unique_ptr<BatchSource> source;
  std::vector<PairSample> holdout;
  if (a.data == "synthetic") {
    source = std::make_unique<SyntheticSource>();
    holdout = synthetic_holdout(a.holdout, a.patch, a.seed);
  } else {
    source = std::make_unique<DatasetSource>(load_pairs(a.data));
  }

  auto model = build_model(mcfg, a.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = train(model, *source, cfg, holdout, [&](const TrainRecord &r) {
    if (a.quiet || (r.step % 50 != 0 && r.step != 1 && !r.psnr))
      return;
    std::printf("step %5zu  lr %.3e  loss %.5f", r.step, r.lr, r.loss);
    if (r.psnr)
      std::printf("  holdout psnr %.3f dB", *r.psnr);
    std::printf("\n");
    std::fflush(stdout);
  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(model, a.out);
  const fs::path log = a.log.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.log);
  write_text(log, loss_curve_csv(records));
  const std::size_t w = std::min<std::size_t>(50, records.size());
  std::printf("trained %zu steps in %.1fs; mean loss first %zu: %.5f, last %zu: %.5f\n",
              records.size(), secs, w, mean_loss(records, 0, w), w,
              mean_loss(records, records.size() - w, records.size()));
  std::printf("checkpoint: %s\nloss curve: %s\n", a.out.c_str(), log.string().c_str());
  return kOk;
}

int cmd_infer(const std::string &ckpt, const std::string &input,
              const std::string &output) {
  const auto model = load_checkpoint(ckpt);
  const auto img = decode_image(input);
  const auto out = unstack_image(forward(model, stack_images({img})), 0);
  if (fs::path(output).has_parent_path())
    fs::create_directories(fs::path(output).parent_path());
  encode_image(out, output);
  return kOk;
}

struct MetricSelection {
  bool psnr = false, ssim = false, hue = false;
};

MetricSelection parse_metrics(const std::string &list) {
  MetricSelection m;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "psnr")
      m.psnr = true;
    else if (item == "ssim")
      m.ssim = true;
    else if (item == "hue")
      m.hue = true;
    else
      throw UsageError("unknown metric '" + item + "' (expected psnr, ssim, hue)");
  }
  if (!m.psnr && !m.ssim && !m.hue)
    throw UsageError("--metrics selects nothing");
  return m;
}

std::string report_text(const MetricReport &r, const MetricSelection &sel) {
  std::ostringstream os;
  std::size_t width = 4;
  for (const auto &im : r.images)
    width = std::max(width, im.id.size());
  const auto row = [&](const ImageMetrics &m) {
    char buf[64];
    os << m.id << std::string(width - m.id.size(), ' ');
    if (sel.psnr)
      std::snprintf(buf, sizeof buf, "  %9.4f", m.psnr), os << buf;
    if (sel.ssim)
      std::snprintf(buf, sizeof buf, "  %8.6f", m.ssim), os << buf;
    if (sel.hue)
      std::snprintf(buf, sizeof buf, "  %8.4f", m.hue), os << buf;
    os << "\n";
  };
  os << "id" << std::string(width - 2, ' ');
  if (sel.psnr)
    os << "  " << std::string(2, ' ') << "psnr_db";
  if (sel.ssim)
    os << "  " << std::string(4, ' ') << "ssim";
  if (sel.hue)
    os << "  " << std::string(1, ' ') << "hue_pct";
  os << "\n";
  for (const auto &im : r.images)
    row(im);
  row(r.mean());
  return os.str();
}

std::string report_csv(const MetricReport &r, const MetricSelection &sel) {
  std::ostringstream os;
  os.precision(10);
  os << "id";
  if (sel.psnr)
    os << ",psnr";
  if (sel.ssim)
    os << ",ssim";
  if (sel.hue)
    os << ",hue";
  os << "\n";
  auto rows = r.images;
  rows.push_back(r.mean());
  for (const auto &m : rows) {
    os << m.id;
    if (sel.psnr)
      os << "," << m.psnr;
    if (sel.ssim)
      os << "," << m.ssim;
    if (sel.hue)
      os << "," << m.hue;
    os << "\n";
  }
  return os.str();
}

ImageMetrics measure(const std::string &id, const Tensor<float> &a,
                     const Tensor<float> &b, const MetricSelection &sel) {
  ImageMetrics m;
  m.id = id;
  if (sel.psnr)
    m.psnr = psnr(a, b);
  if (sel.ssim)
    m.ssim = ssim(a, b);
  if (sel.hue)
    m.hue = hue_distance(a, b);
  return m;
}

int cmd_eval(const std::string &ckpt, const std::string &data,
             const std::string &metrics, const std::string &csv) {
  const auto sel = parse_metrics(metrics);
  const auto ds = load_pairs(data);
  if (ds.empty())
    throw DatasetError("no image pairs in '" + data + "'");
  std::optional<Model> model;
  if (!ckpt.empty())
    model = load_checkpoint(ckpt);

  MetricReport result, baseline;
  for (const auto &p : ds.pairs) {
    baseline.images.push_back(measure(p.id, p.blurred, p.sharp, sel));
    if (model) {
      const auto out = unstack_image(forward(*model, stack_images({p.blurred})), 0);
      result.images.push_back(measure(p.id, out, p.sharp, sel));
    }
  }
  const auto &main = model ? result : baseline;
  std::cout << (model ? "restored vs sharp\n" : "blur vs sharp\n")
            << report_text(main, sel);
  if (model) {
    const auto b = baseline.mean(), r = result.mean();
    std::printf("input (blur vs sharp) mean:");
    if (sel.psnr)
      std::printf(" psnr %.4f dB (restored %+.4f dB)", b.psnr, r.psnr - b.psnr);
    if (sel.ssim)
      std::printf(" ssim %.6f", b.ssim);
    if (sel.hue)
      std::printf(" hue %.4f%%", b.hue);
    std::printf("\n");
  }
  std::printf("images: %zu\n", main.count());
  if (!csv.empty())
    write_text(csv, report_csv(main, sel));
  return kOk;
}

int cmd_synth(std::size_t n, std::size_t size, const std::string &sigma,
              const std::string &motion, const std::string &out,
              std::uint64_t seed) {
  if (n == 0)
    throw UsageError("--n must be positive");
  if (size < 8)
    throw UsageError("--size must be at least 8");
  std::vector<PairSample> pairs;
  if (!motion.empty()) {
    double len = 0, angle = 0;
    char comma = 0;
    std::istringstream is(motion);
    if (!(is >> len >> comma >> angle) || comma != ',' || !(is >> std::ws).eof())
      throw UsageError("--motion expects LEN,ANGLE (e.g. 9,30)");
    if (!(len >= 1))
      throw UsageError("--motion length must be >= 1");
    pairs = synthetic_holdout(n, size, seed, BlurSpec::motion(len, angle));
  } else {
    double lo = 0, hi = 0;
    const auto colon = sigma.find(':');
    try {
      lo = std::stod(sigma.substr(0, colon));
      hi = colon == std::string::npos ? lo : std::stod(sigma.substr(colon + 1));
    } catch (const std::exception &) {
      throw UsageError("--sigma expects S or LO:HI, got '" + sigma + "'");
    }
    if (!(lo >= 0) || !(hi >= lo))
      throw UsageError("--sigma range must satisfy 0 <= LO <= HI");
    pairs = synthetic_holdout(n, size, seed, lo, hi);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.ppm", i);
    fs::create_directories(fs::path(out) / "blur");
    fs::create_directories(fs::path(out) / "sharp");
    encode_image(pairs[i].blurred, fs::path(out) / "blur" / name);
    encode_image(pairs[i].sharp, fs::path(out) / "sharp" / name);
  }
  std::printf("wrote %zu pairs of %zux%zu to %s\n", pairs.size(), size, size,
              out.c_str());
  return kOk;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Dilated neighborhood attention deblurring network"};
  app.require_subcommand(1);
  std::function<int()> run;

  std::uint64_t seed = 0;
  auto *selftest = app.add_subcommand("selftest", "attention oracles, block identities, metric cases");
  selftest->add_option("--seed", seed, "random seed");
  selftest->callback([&] { run = [&] { return cmd_selftest(seed); }; });

  double tol = 1e-4, model_tol = 1e-3;
  auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference checks at 64 bits");
  gradcheck->add_option("--seed", seed, "random seed");
  gradcheck->add_option("--tol", tol, "relative tolerance for ops and blocks");
  gradcheck->add_option("--model-tol", model_tol, "relative tolerance for the Tiny model");
  gradcheck->callback([&] { run = [&] { return cmd_gradcheck(seed, tol, model_tol); }; });

  std::string preset = "s", config;
  auto *paramcount = app.add_subcommand("paramcount", "per-module parameter counts");
  auto *pc_preset = paramcount->add_option("--preset", preset, "s, l or tiny");
  auto *pc_config = paramcount->add_option("--config", config, "model config file");
  pc_preset->excludes(pc_config);
  paramcount->callback([&] { run = [&] { return cmd_paramcount(preset, config); }; });

  TrainArgs ta;
  auto *train_cmd = app.add_subcommand("train", "train a model");
  auto *tr_preset = train_cmd->add_option("--preset", ta.preset, "s, l or tiny (default tiny)");
  auto *tr_config = train_cmd->add_option("--config", ta.config, "model config file");
  tr_preset->excludes(tr_config);
  train_cmd->add_option("--data", ta.data, "dataset directory or 'synthetic'")->required();
  train_cmd->add_option("--steps", ta.steps, "optimizer steps");
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
  train_cmd->add_option("--seed", ta.seed, "random seed");
  train_cmd->add_option("--batch", ta.batch, "batch size");
  train_cmd->add_option("--patch", ta.patch, "square patch size");
  train_cmd->add_option("--lr", ta.lr, "initial learning rate");
  train_cmd->add_option("--lr-min", ta.lr_min, "final learning rate");
  train_cmd->add_option("--clip", ta.clip, "global gradient norm bound (0 = off)");
  train_cmd->add_option("--loss", ta.loss, "l1 or charbonnier");
  train_cmd->add_option("--log", ta.log, "loss curve CSV (default <out>.loss.csv)");
  train_cmd->add_option("--holdout", ta.holdout, "held-out synthetic pairs (synthetic data)");
  train_cmd->add_option("--eval-every", ta.eval_every, "held-out PSNR interval (0 = off)");
  train_cmd->add_flag("--quiet", ta.quiet, "no progress lines");
  train_cmd->callback([&] { run = [&] { return cmd_train(ta); }; });

  std::string ckpt, input, output;
  auto *infer = app.add_subcommand("infer", "deblur one image");
  infer->add_option("--ckpt", ckpt, "checkpoint")->required();
  infer->add_option("--input", input, "input image (.ppm/.pgm)")->required();
  infer->add_option("--output", output, "output image (.ppm)")->required();
  infer->callback([&] { run = [&] { return cmd_infer(ckpt, input, output); }; });

  std::string data, metrics = "psnr,ssim,hue", csv;
  auto *eval = app.add_subcommand("eval", "metrics over a blur/ sharp/ directory");
  eval->add_option("--ckpt", ckpt, "checkpoint; without it blur is compared to sharp");
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--metrics", metrics, "comma list of psnr, ssim, hue");
  eval->add_option("--csv", csv, "also write the report as CSV");
  eval->callback([&] { run = [&] { return cmd_eval(ckpt, data, metrics, csv); }; });

  std::size_t n = 0, size = 64;
  std::string sigma = "2", motion, out;
  auto *synth = app.add_subcommand("synth", "write synthetic blur/sharp pairs");
  synth->add_option("--n", n, "number of pairs")->required();
  synth->add_option("--size", size, "square image size");
  auto *sy_sigma = synth->add_option("--sigma", sigma, "gaussian sigma S or range LO:HI");
  auto *sy_motion = synth->add_option("--motion", motion, "motion blur LEN,ANGLE");
  sy_sigma->excludes(sy_motion);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "random seed");
  synth->callback([&] { run = [&] { return cmd_synth(n, size, sigma, motion, out, seed); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    return run();
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
}
