// SPDX-License-Identifier: Apache-2.0
#include "ddnt/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace ddnt {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto &c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  v = trim(v);
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config: '" + std::string(key) +
                      "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

std::array<std::size_t, kLevels> parse_levels(std::string_view key,
                                              std::string_view v) {
  std::array<std::size_t, kLevels> out{};
  std::size_t i = 0;
  while (true) {
    const auto comma = v.find(',');
    if (i == kLevels)
      throw ConfigError("config: '" + std::string(key) + "' expects " +
                        std::to_string(kLevels) + " comma-separated values");
    out[i++] = parse_size(key, v.substr(0, comma));
    if (comma == std::string_view::npos)
      break;
    v.remove_prefix(comma + 1);
  }
  if (i != kLevels)
    throw ConfigError("config: '" + std::string(key) + "' expects " +
                      std::to_string(kLevels) + " comma-separated values");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  v = trim(v);
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config: '" + std::string(key) +
                      "' expects a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  const auto s = lower(trim(v));
  if (s == "true" || s == "1")
    return true;
  if (s == "false" || s == "0")
    return false;
  throw ConfigError("config: '" + std::string(key) +
                    "' expects true or false, got '" + s + "'");
}

std::string join(const std::array<std::size_t, kLevels> &a) {
  std::string s;
  for (std::size_t i = 0; i < kLevels; ++i)
    s += (i ? ", " : "") + std::to_string(a[i]);
  return s;
}

std::string level_name(const char *stem, std::size_t level) {
  return stem + std::to_string(level);
}

std::size_t padded(std::size_t n) {
  return (n + kSizeMultiple - 1) / kSizeMultiple * kSizeMultiple;
}

} // namespace

ModelConfig ModelConfig::preset(std::string_view name) {
  const auto n = lower(name);
  ModelConfig c;
  if (n == "s")
    return c;
  if (n == "l") {
    c.blocks = {6, 12, 18};
    c.residual_blocks = 3;
    return c;
  }
  if (n == "tiny") {
    c.channels = {8, 16, 16};
    c.blocks = {2, 2, 2};
    c.heads = {1, 2, 2};
    c.kernel_size = 3;
    c.residual_blocks = 1;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) +
                    "' (expected s, l or tiny)");
}

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < kLevels; ++i) {
    const auto lvl = std::to_string(i + 1);
    if (channels[i] == 0)
      throw ConfigError("channels[" + lvl + "] must be positive");
    if (heads[i] == 0 || channels[i] % heads[i] != 0)
      throw ConfigError("channels[" + lvl + "] = " +
                        std::to_string(channels[i]) +
                        " is not divisible by heads[" + lvl +
                        "] = " + std::to_string(heads[i]));
    if (blocks[i] == 0 || blocks[i] % 2 != 0)
      throw ConfigError("blocks[" + lvl + "] = " + std::to_string(blocks[i]) +
                        " must be a positive even number (local/global pairs)");
    if (cfm_mode == CfmMode::split && channels[i] % 2 != 0)
      throw ConfigError("cfm_mode = split needs even channels, channels[" +
                        lvl + "] = " + std::to_string(channels[i]));
  }
  if (residual_blocks == 0)
    throw ConfigError("residual_blocks must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("kernel_size must be odd, got " +
                      std::to_string(kernel_size));
  if (!std::isfinite(leaky_slope) || leaky_slope < 0)
    throw ConfigError("leaky_slope must be a finite non-negative number");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "channels = " << join(channels) << "\n"
     << "blocks = " << join(blocks) << "\n"
     << "heads = " << join(heads) << "\n"
     << "residual_blocks = " << residual_blocks << "\n"
     << "kernel_size = " << kernel_size << "\n"
     << "leaky_slope = " << leaky_slope << "\n"
     << "use_bias = " << (use_bias ? "true" : "false") << "\n"
     << "cfm_mode = " << (cfm_mode == CfmMode::split ? "split" : "project")
     << "\n"
     << "ffn = " << (ffn == FfnKind::gdfn ? "gdfn" : "dmfn") << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key == "channels")
      c.channels = parse_levels(key, val);
    else if (key == "blocks")
      c.blocks = parse_levels(key, val);
    else if (key == "heads")
      c.heads = parse_levels(key, val);
    else if (key == "residual_blocks")
      c.residual_blocks = parse_size(key, val);
    else if (key == "kernel_size")
      c.kernel_size = parse_size(key, val);
    else if (key == "leaky_slope")
      c.leaky_slope = parse_real(key, val);
    else if (key == "use_bias")
      c.use_bias = parse_bool(key, val);
    else if (key == "cfm_mode") {
      const auto v = lower(val);
      if (v != "project" && v != "split")
        throw ConfigError("cfm_mode must be project or split, got '" + v + "'");
      c.cfm_mode = v == "split" ? CfmMode::split : CfmMode::project;
    } else if (key == "ffn") {
      const auto v = lower(val);
      if (v != "dmfn" && v != "gdfn")
        throw ConfigError("ffn must be dmfn or gdfn, got '" + v + "'");
      c.ffn = v == "gdfn" ? FfnKind::gdfn : FfnKind::dmfn;
    } else
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + std::string(key) + "'");
  }
  c.validate();
  return c;
}

template <typename T>
void register_model_params(ParamStore<T> &s, const ModelConfig &cfg,
                           Initializer &init) {
  const auto &C = cfg.channels;
  auto conv = [&](const std::string &name, std::size_t k, std::size_t cin,
                  std::size_t cout) {
    s.add(name + ".w", init.conv_weight<T>({k, k, cin, cout}));
    s.add(name + ".b", Tensor<T>({cout}));
  };
  auto encoder = [&](std::size_t level) {
    for (std::size_t r = 0; r < cfg.residual_blocks; ++r)
      register_residual_block(s,
                              level_name("enc", level) + ".res" +
                                  std::to_string(r),
                              C[level - 1], init);
  };
  auto decoder = [&](std::size_t level) {
    for (std::size_t i = 0; i < cfg.blocks[level - 1]; ++i)
      register_transformer_block(
          s, level_name("dec", level) + ".block" + std::to_string(i),
          C[level - 1], cfg.heads[level - 1], cfg.kernel_size, cfg.use_bias,
          init);
  };
  const std::size_t sum_c = C[0] + C[1] + C[2];

  conv("stem", 3, 3, C[0]);
  encoder(1);
  conv("down1", 3, C[0], C[1]);
  encoder(2);
  conv("down2", 3, C[1], C[2]);
  encoder(3);
  register_ldff(s, "ldff1", sum_c, C[0], cfg.cfm_mode, cfg.use_bias, init);
  register_ldff(s, "ldff2", sum_c, C[1], cfg.cfm_mode, cfg.use_bias, init);
  decoder(3);
  conv("up3", 2, C[2], C[1]);
  register_ldff(s, "fuse2", 2 * C[1], C[1], cfg.cfm_mode, cfg.use_bias, init);
  decoder(2);
  conv("up2", 2, C[1], C[0]);
  register_ldff(s, "fuse1", 2 * C[0], C[0], cfg.cfm_mode, cfg.use_bias, init);
  decoder(1);
  conv("out", 3, C[0], 3);
}

Model build_model(const ModelConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Initializer init(seed);
  register_model_params(m.params, cfg, init);
  return m;
}

std::vector<LevelSchedule> dilation_schedule(const ModelConfig &cfg,
                                             std::size_t height,
                                             std::size_t width) {
  if (height == 0 || width == 0)
    throw std::invalid_argument("dilation_schedule: empty image");
  const std::size_t hp = padded(height), wp = padded(width);
  std::vector<LevelSchedule> out(kLevels);
  for (std::size_t l = 0; l < kLevels; ++l) {
    auto &ls = out[l];
    ls.height = hp >> l;
    ls.width = wp >> l;
    for (std::size_t i = 0; i < cfg.blocks[l]; ++i)
      ls.blocks.push_back(block_geometry(
          ls.height, ls.width, cfg.channels[l], cfg.heads[l], cfg.kernel_size,
          i % 2 == 0 ? DilationTag::local : DilationTag::global));
  }
  return out;
}

namespace ad {

template <typename T>
Var<T> model_forward(Tape<T> &tape, const ModelConfig &cfg,
                     const ParamStore<T> &s, Var<T> image) {
  const Shape in = image.shape();
  if (in.size() != 4 || in[3] != 3)
    throw ShapeError("model input must be [N,H,W,3], got " + shape_str(in));
  if (in[0] == 0 || in[1] == 0 || in[2] == 0)
    throw std::invalid_argument("model input has a zero dimension: " +
                                shape_str(in));
  const std::size_t h = in[1], w = in[2];
  const std::size_t ph = padded(h) - h, pw = padded(w) - w;
  Var<T> x = ph || pw ? reflect_pad(image, ph, pw) : image;
  const auto sched = dilation_schedule(cfg, h, w);
  const T slope = static_cast<T>(cfg.leaky_slope);
  BlockOptions opt;
  opt.use_bias = cfg.use_bias;
  opt.ffn = cfg.ffn;

  auto conv = [&](Var<T> v, const std::string &name, std::size_t stride) {
    return conv2d(v, tape.param(s, name + ".w"), tape.param(s, name + ".b"),
                  stride, Padding::same);
  };
  auto upconv = [&](Var<T> v, const std::string &name) {
    return conv_transpose2d(v, tape.param(s, name + ".w"),
                            tape.param(s, name + ".b"), 2);
  };
  auto encoder = [&](Var<T> v, std::size_t level) {
    for (std::size_t r = 0; r < cfg.residual_blocks; ++r)
      v = residual_block(tape, s,
                         level_name("enc", level) + ".res" + std::to_string(r),
                         v, slope);
    return v;
  };
  auto decoder = [&](Var<T> v, std::size_t level) {
    const auto &geoms = sched[level - 1].blocks;
    for (std::size_t i = 0; i < geoms.size(); ++i)
      v = transformer_block(tape, s,
                            level_name("dec", level) + ".block" +
                                std::to_string(i),
                            v, geoms[i], opt);
    return v;
  };

  auto e1 = encoder(conv(x, "stem", 1), 1);
  auto e2 = encoder(conv(e1, "down1", 2), 2);
  auto e3 = encoder(conv(e2, "down2", 2), 3);
  auto f1 = ldff_multiscale(tape, s, "ldff1", e1, e2, e3, 1, cfg.cfm_mode);
  auto f2 = ldff_multiscale(tape, s, "ldff2", e1, e2, e3, 2, cfg.cfm_mode);
  auto d3 = decoder(e3, 3);
  auto d2 = decoder(
      ldff_samescale(tape, s, "fuse2", upconv(d3, "up3"), f2, cfg.cfm_mode), 2);
  auto d1 = decoder(
      ldff_samescale(tape, s, "fuse1", upconv(d2, "up2"), f1, cfg.cfm_mode), 1);
  auto out = add(conv(d1, "out", 1), x);
  return ph || pw ? crop(out, h, w) : out;
}

} // namespace ad

template <typename T>
Tensor<T> forward(const BasicModel<T> &model, const Tensor<T> &image,
                  bool clamp_output) {
  Tape<T> tape(false);
  Tensor<T> y = ad::model_forward(tape, model, tape.constant(image)).value();
  if (clamp_output)
    for (auto &v : y.vec())
      v = std::clamp(v, T(0), T(1));
  return y;
}

template <typename T> ParamCount count_parameters(const BasicModel<T> &model) {
  ParamCount pc;
  for (const auto &e : model.params.entries()) {
    const auto mod = e.name.substr(0, e.name.find('.'));
    const auto n = e.value.numel();
    if (pc.modules.empty() || pc.modules.back().first != mod)
      pc.modules.emplace_back(mod, 0);
    pc.modules.back().second += n;
    pc.total += n;
    if (mod.rfind("ldff", 0) == 0 || mod.rfind("fuse", 0) == 0)
      pc.fusion += n;
  }
  return pc;
}

ParamCount count_parameters(const ModelConfig &cfg) {
  return count_parameters(build_model(cfg, 0));
}

#define DDNT_MODEL_INSTANTIATE(T)                                              \
  template void register_model_params(ParamStore<T> &, const ModelConfig &,    \
                                      Initializer &);                          \
  template Var<T> ad::model_forward(Tape<T> &, const ModelConfig &,            \
                                    const ParamStore<T> &, Var<T>);            \
  template Tensor<T> forward(const BasicModel<T> &, const Tensor<T> &, bool);  \
  template ParamCount count_parameters(const BasicModel<T> &);

DDNT_MODEL_INSTANTIATE(float)
DDNT_MODEL_INSTANTIATE(double)

} // namespace ddnt
