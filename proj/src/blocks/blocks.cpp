// SPDX-License-Identifier: Apache-2.0
#include "ddnt/blocks.hpp"

#include <algorithm>
#include <stdexcept>

namespace ddnt {

std::size_t global_dilation(std::size_t height, std::size_t width,
                            std::size_t kernel) {
  if (kernel == 0)
    throw std::invalid_argument("global_dilation: kernel must be positive");
  return std::max<std::size_t>(1, std::min(height, width) / kernel);
}

AttnGeometry block_geometry(std::size_t height, std::size_t width,
                            std::size_t channels, std::size_t heads,
                            std::size_t kernel, DilationTag tag) {
  if (heads == 0 || channels % heads != 0)
    throw std::invalid_argument("block_geometry: channels " +
                                std::to_string(channels) +
                                " not divisible by heads " +
                                std::to_string(heads));
  const std::size_t n = std::min(height, width);
  if (n == 0)
    throw std::invalid_argument("block_geometry: empty grid");
  AttnGeometry g;
  g.height = height;
  g.width = width;
  g.heads = heads;
  g.head_dim = channels / heads;
  g.kernel = std::min(kernel, n % 2 ? n : n - 1);
  g.dilation =
      tag == DilationTag::local ? 1 : global_dilation(height, width, kernel);
  g.validate();
  return g;
}

template <typename T>
void register_layer_norm(ParamStore<T> &store, const std::string &prefix,
                         std::size_t channels) {
  store.add(prefix + ".gamma", Tensor<T>({channels}, T(1)));
  store.add(prefix + ".beta", Tensor<T>({channels}));
}

template <typename T>
void register_ffn(ParamStore<T> &store, const std::string &prefix,
                  std::size_t channels, bool use_bias, Initializer &init) {
  const std::size_t e = kFfnExpansion * channels;
  store.add(prefix + ".pw_w", init.conv_weight<T>({1, 1, channels, e}));
  if (use_bias)
    store.add(prefix + ".pw_b", Tensor<T>({e}));
  store.add(prefix + ".dw_w", init.conv_weight<T>({3, 3, e}));
  if (use_bias)
    store.add(prefix + ".dw_b", Tensor<T>({e}));
}

template <typename T>
void register_transformer_block(ParamStore<T> &store, const std::string &prefix,
                                std::size_t channels, std::size_t heads,
                                std::size_t kernel, bool use_bias,
                                Initializer &init) {
  register_layer_norm(store, prefix + ".norm1", channels);
  register_dina_params(store, prefix + ".casa.dina", channels, heads, kernel,
                       use_bias, init);
  store.add(prefix + ".casa.lccl_w", init.trunc_normal<T>({kLcclWidth}));
  register_layer_norm(store, prefix + ".norm2", channels);
  register_ffn(store, prefix + ".ffn", channels, use_bias, init);
}

template <typename T>
void register_residual_block(ParamStore<T> &store, const std::string &prefix,
                             std::size_t channels, Initializer &init) {
  for (const char *c : {".conv1", ".conv2"}) {
    store.add(prefix + c + "_w", init.conv_weight<T>({3, 3, channels, channels}));
    store.add(prefix + c + "_b", Tensor<T>({channels}));
  }
}

namespace ad {

template <typename T>
Var<T> layer_norm(Tape<T> &tape, const ParamStore<T> &store,
                  const std::string &prefix, Var<T> x) {
  return layer_norm(x, tape.param(store, prefix + ".gamma"),
                    tape.param(store, prefix + ".beta"), T(kLayerNormEps));
}

template <typename T> Var<T> lccl(Var<T> x_norm, Var<T> w) {
  return sigmoid(conv1d_channels(global_avg_pool(x_norm), w));
}

template <typename T>
Var<T> casa(Tape<T> &tape, const ParamStore<T> &store,
            const std::string &prefix, Var<T> x_norm,
            const AttnGeometry &geom) {
  auto attn = dina(tape, store, prefix + ".dina", x_norm, geom);
  auto gate = lccl(x_norm, tape.param(store, prefix + ".lccl_w"));
  return mul(attn, gate);
}

template <typename T>
Var<T> ffn(Tape<T> &tape, const ParamStore<T> &store,
           const std::string &prefix, Var<T> x_norm, const BlockOptions &opt) {
  auto h = conv2d(x_norm, tape.param(store, prefix + ".pw_w"),
                  optional_param(tape, store, prefix + ".pw_b"), 1,
                  Padding::valid);
  h = depthwise_conv2d(h, tape.param(store, prefix + ".dw_w"),
                       optional_param(tape, store, prefix + ".dw_b"), 1,
                       Padding::same);
  auto [x1, x2] = split_channels_half(h);
  if (opt.ffn == FfnKind::gdfn && !opt.identity_gate)
    x2 = gelu(x2);
  return mul(x1, x2);
}

template <typename T>
Var<T> transformer_block(Tape<T> &tape, const ParamStore<T> &store,
                         const std::string &prefix, Var<T> x,
                         const AttnGeometry &geom, const BlockOptions &opt) {
  auto y = add(x, casa(tape, store, prefix + ".casa",
                       layer_norm(tape, store, prefix + ".norm1", x), geom));
  return add(y, ffn(tape, store, prefix + ".ffn",
                    layer_norm(tape, store, prefix + ".norm2", y), opt));
}

template <typename T>
Var<T> residual_block(Tape<T> &tape, const ParamStore<T> &store,
                      const std::string &prefix, Var<T> x, T slope) {
  auto conv = [&](Var<T> in, const char *name) {
    return conv2d(in, tape.param(store, prefix + name + "_w"),
                  tape.param(store, prefix + name + "_b"), 1, Padding::same);
  };
  return add(x, conv(leaky_relu(conv(x, ".conv1"), slope), ".conv2"));
}

} // namespace ad

template <typename T>
Tensor<T> lccl_forward(const Tensor<T> &x_norm, const Tensor<T> &w) {
  Tape<T> t(false);
  return ad::lccl(t.constant(x_norm), t.constant(w)).value();
}

template <typename T>
Tensor<T> casa_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix, const AttnGeometry &geom) {
  Tape<T> t(false);
  return ad::casa(t, store, prefix, t.constant(x_norm), geom).value();
}

template <typename T>
Tensor<T> dmfn_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix) {
  Tape<T> t(false);
  return ad::ffn(t, store, prefix, t.constant(x_norm), {}).value();
}

template <typename T>
Tensor<T> gdfn_forward(const Tensor<T> &x_norm, const ParamStore<T> &store,
                       const std::string &prefix, bool identity_gate) {
  Tape<T> t(false);
  BlockOptions opt;
  opt.ffn = FfnKind::gdfn;
  opt.identity_gate = identity_gate;
  return ad::ffn(t, store, prefix, t.constant(x_norm), opt).value();
}

template <typename T>
Tensor<T> transformer_block_forward(const Tensor<T> &x,
                                    const ParamStore<T> &store,
                                    const std::string &prefix,
                                    const AttnGeometry &geom,
                                    const BlockOptions &opt) {
  Tape<T> t(false);
  return ad::transformer_block(t, store, prefix, t.constant(x), geom, opt)
      .value();
}

template <typename T>
Tensor<T> residual_block_forward(const Tensor<T> &x, const ParamStore<T> &store,
                                 const std::string &prefix, T slope) {
  Tape<T> t(false);
  return ad::residual_block(t, store, prefix, t.constant(x), slope).value();
}

#define DDNT_BLOCKS_INSTANTIATE(T)                                             \
  template void register_layer_norm(ParamStore<T> &, const std::string &,      \
                                    std::size_t);                              \
  template void register_ffn(ParamStore<T> &, const std::string &,             \
                             std::size_t, bool, Initializer &);                \
  template void register_transformer_block(ParamStore<T> &,                    \
                                           const std::string &, std::size_t,   \
                                           std::size_t, std::size_t, bool,     \
                                           Initializer &);                     \
  template void register_residual_block(ParamStore<T> &, const std::string &,  \
                                        std::size_t, Initializer &);           \
  template Var<T> ad::layer_norm(Tape<T> &, const ParamStore<T> &,             \
                                 const std::string &, Var<T>);                 \
  template Var<T> ad::lccl(Var<T>, Var<T>);                                    \
  template Var<T> ad::casa(Tape<T> &, const ParamStore<T> &,                   \
                           const std::string &, Var<T>, const AttnGeometry &); \
  template Var<T> ad::ffn(Tape<T> &, const ParamStore<T> &,                    \
                          const std::string &, Var<T>, const BlockOptions &);  \
  template Var<T> ad::transformer_block(Tape<T> &, const ParamStore<T> &,      \
                                        const std::string &, Var<T>,           \
                                        const AttnGeometry &,                  \
                                        const BlockOptions &);                 \
  template Var<T> ad::residual_block(Tape<T> &, const ParamStore<T> &,         \
                                     const std::string &, Var<T>, T);          \
  template Tensor<T> lccl_forward(const Tensor<T> &, const Tensor<T> &);       \
  template Tensor<T> casa_forward(const Tensor<T> &, const ParamStore<T> &,    \
                                  const std::string &, const AttnGeometry &);  \
  template Tensor<T> dmfn_forward(const Tensor<T> &, const ParamStore<T> &,    \
                                  const std::string &);                        \
  template Tensor<T> gdfn_forward(const Tensor<T> &, const ParamStore<T> &,    \
                                  const std::string &, bool);                  \
  template Tensor<T> transformer_block_forward(                                \
      const Tensor<T> &, const ParamStore<T> &, const std::string &,           \
      const AttnGeometry &, const BlockOptions &);                             \
  template Tensor<T> residual_block_forward(                                   \
      const Tensor<T> &, const ParamStore<T> &, const std::string &, T);

DDNT_BLOCKS_INSTANTIATE(float)
DDNT_BLOCKS_INSTANTIATE(double)

} // namespace ddnt
