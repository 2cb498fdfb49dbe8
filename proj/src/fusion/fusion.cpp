// SPDX-License-Identifier: Apache-2.0
#include "ddnt/fusion.hpp"

#include "ddnt/blocks.hpp"

#include <stdexcept>
#include <tuple>

namespace ddnt {

template <typename T>
void register_ldff(ParamStore<T> &store, const std::string &prefix,
                   std::size_t in_channels, std::size_t out_channels,
                   CfmMode mode, bool use_bias, Initializer &init) {
  const std::size_t c = out_channels;
  if (mode == CfmMode::split && c % 2 != 0)
    throw std::invalid_argument("register_ldff: split mode needs an even "
                                "channel count, got " +
                                std::to_string(c));
  auto add_bias = [&](const std::string &name, std::size_t n) {
    if (use_bias)
      store.add(name, Tensor<T>({n}));
  };
  const std::string e = prefix + ".ecr";
  store.add(e + ".pw_w", init.conv_weight<T>({1, 1, in_channels, c}));
  add_bias(e + ".pw_b", c);
  store.add(e + ".dw_w", init.conv_weight<T>({3, 3, c}));
  add_bias(e + ".dw_b", c);

  const std::string m = prefix + ".cfm";
  const std::size_t bc = mode == CfmMode::split ? c / 2 : c;
  register_layer_norm(store, m + ".norm", c);
  for (const char *br : {".a", ".b"}) {
    store.add(m + br + "_w", init.conv_weight<T>({1, 1, bc, bc}));
    add_bias(m + br + "_b", bc);
  }
  store.add(m + ".merge_w", init.conv_weight<T>({1, 1, bc, c}));
  add_bias(m + ".merge_b", c);
  store.add(m + ".dw_w", init.conv_weight<T>({3, 3, c}));
  add_bias(m + ".dw_b", c);
}

namespace ad {

namespace {

template <typename T>
Var<T> pointwise(Tape<T> &tape, const ParamStore<T> &store,
                 const std::string &name, Var<T> x) {
  return conv2d(x, tape.param(store, name + "_w"),
                optional_param(tape, store, name + "_b"), 1, Padding::valid);
}

template <typename T>
Var<T> depthwise(Tape<T> &tape, const ParamStore<T> &store,
                 const std::string &name, Var<T> x) {
  return depthwise_conv2d(x, tape.param(store, name + "_w"),
                          optional_param(tape, store, name + "_b"), 1,
                          Padding::same);
}

bool same_grid(const Shape &a, const Shape &b) {
  return a.size() == 4 && b.size() == 4 && a[0] == b[0] && a[1] == b[1] &&
         a[2] == b[2];
}

} // namespace

template <typename T>
Var<T> ecr(Tape<T> &tape, const ParamStore<T> &store, const std::string &prefix,
           Var<T> x_cat) {
  return depthwise(tape, store, prefix + ".dw",
                   pointwise(tape, store, prefix + ".pw", x_cat));
}

template <typename T>
Var<T> cfm(Tape<T> &tape, const ParamStore<T> &store, const std::string &prefix,
           Var<T> x, CfmMode mode) {
  auto xn = layer_norm(tape, store, prefix + ".norm", x);
  Var<T> in_a = xn, in_b = xn;
  if (mode == CfmMode::split)
    std::tie(in_a, in_b) = split_channels_half(xn);
  auto a = pointwise(tape, store, prefix + ".a", in_a);
  auto b = gelu(pointwise(tape, store, prefix + ".b", in_b));
  auto merged = pointwise(tape, store, prefix + ".merge", mul(a, b));
  return add(depthwise(tape, store, prefix + ".dw", merged), x);
}

template <typename T>
Var<T> ldff_multiscale(Tape<T> &tape, const ParamStore<T> &store,
                       const std::string &prefix, Var<T> e1, Var<T> e2,
                       Var<T> e3, int target_level, CfmMode mode) {
  const auto &s1 = e1.shape(), &s2 = e2.shape(), &s3 = e3.shape();
  const bool ok = s1.size() == 4 && s2.size() == 4 && s3.size() == 4 &&
                  s1[0] == s2[0] && s1[0] == s3[0] && s1[1] == 2 * s2[1] &&
                  s1[1] == 4 * s3[1] && s1[2] == 2 * s2[2] &&
                  s1[2] == 4 * s3[2];
  if (!ok)
    throw ShapeError("ldff_multiscale: levels " + shape_str(s1) + ", " +
                     shape_str(s2) + ", " + shape_str(s3) +
                     " are not in ratio 1 : 1/2 : 1/4");
  std::vector<Var<T>> parts;
  if (target_level == 1)
    parts = {e1, resize(e2, Scale::up2), resize(e3, Scale::up4)};
  else if (target_level == 2)
    parts = {resize(e1, Scale::down2), e2, resize(e3, Scale::up2)};
  else
    throw std::invalid_argument("ldff_multiscale: target level must be 1 or "
                                "2, got " +
                                std::to_string(target_level));
  return cfm(tape, store, prefix + ".cfm",
             ecr(tape, store, prefix + ".ecr", concat_channels(parts)), mode);
}

template <typename T>
Var<T> ldff_samescale(Tape<T> &tape, const ParamStore<T> &store,
                      const std::string &prefix, Var<T> a, Var<T> b,
                      CfmMode mode) {
  if (!same_grid(a.shape(), b.shape()))
    throw ShapeError("ldff_samescale: grids differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  return cfm(tape, store, prefix + ".cfm",
             ecr(tape, store, prefix + ".ecr", concat_channels<T>({a, b})),
             mode);
}

} // namespace ad

template <typename T>
Tensor<T> ecr_forward(const Tensor<T> &x_cat, const ParamStore<T> &store,
                      const std::string &prefix) {
  Tape<T> t(false);
  return ad::ecr(t, store, prefix, t.constant(x_cat)).value();
}

template <typename T>
Tensor<T> cfm_forward(const Tensor<T> &x, const ParamStore<T> &store,
                      const std::string &prefix, CfmMode mode) {
  Tape<T> t(false);
  return ad::cfm(t, store, prefix, t.constant(x), mode).value();
}

template <typename T>
Tensor<T> ldff_multiscale_forward(const Tensor<T> &e1, const Tensor<T> &e2,
                                  const Tensor<T> &e3, int target_level,
                                  const ParamStore<T> &store,
                                  const std::string &prefix, CfmMode mode) {
  Tape<T> t(false);
  return ad::ldff_multiscale(t, store, prefix, t.constant(e1), t.constant(e2),
                             t.constant(e3), target_level, mode)
      .value();
}

template <typename T>
Tensor<T> ldff_samescale_forward(const Tensor<T> &a, const Tensor<T> &b,
                                 const ParamStore<T> &store,
                                 const std::string &prefix, CfmMode mode) {
  Tape<T> t(false);
  return ad::ldff_samescale(t, store, prefix, t.constant(a), t.constant(b),
                            mode)
      .value();
}

#define DDNT_FUSION_INSTANTIATE(T)                                             \
  template void register_ldff(ParamStore<T> &, const std::string &,            \
                              std::size_t, std::size_t, CfmMode, bool,         \
                              Initializer &);                                  \
  template Var<T> ad::ecr(Tape<T> &, const ParamStore<T> &,                    \
                          const std::string &, Var<T>);                        \
  template Var<T> ad::cfm(Tape<T> &, const ParamStore<T> &,                    \
                          const std::string &, Var<T>, CfmMode);               \
  template Var<T> ad::ldff_multiscale(Tape<T> &, const ParamStore<T> &,        \
                                      const std::string &, Var<T>, Var<T>,     \
                                      Var<T>, int, CfmMode);                   \
  template Var<T> ad::ldff_samescale(Tape<T> &, const ParamStore<T> &,         \
                                     const std::string &, Var<T>, Var<T>,      \
                                     CfmMode);                                 \
  template Tensor<T> ecr_forward(const Tensor<T> &, const ParamStore<T> &,     \
                                 const std::string &);                         \
  template Tensor<T> cfm_forward(const Tensor<T> &, const ParamStore<T> &,     \
                                 const std::string &, CfmMode);                \
  template Tensor<T> ldff_multiscale_forward(                                  \
      const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, int,            \
      const ParamStore<T> &, const std::string &, CfmMode);                    \
  template Tensor<T> ldff_samescale_forward(const Tensor<T> &,                 \
                                            const Tensor<T> &,                 \
                                            const ParamStore<T> &,             \
                                            const std::string &, CfmMode);

DDNT_FUSION_INSTANTIATE(float)
DDNT_FUSION_INSTANTIATE(double)

} // namespace ddnt
