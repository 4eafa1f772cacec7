#pragma once

// A small U-Net-style encoder-decoder with hand-written reverse-mode
// gradients and an Adam optimizer.
//
// Layout per level: two 3x3 conv + ReLU, 2x2 max-pool. The decoder mirrors it
// with nearest-neighbour 2x upsampling, a 3x3 conv + ReLU, concatenation with
// the encoder skip ([skip, up] channel order) and two 3x3 conv + ReLU. A 1x1
// conv head feeds a per-pixel softmax. Filter count doubles per level.
//
// Kernels are templated on the scalar type: training runs in float, gradient
// verification in double. Both instantiations are provided.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

/// batch x channels x height x width, row-major (NCHW).
template <typename T>
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int batch, int channels, int height, int width)
      : n(batch), c(channels), h(height), w(width),
        data(static_cast<std::size_t>(batch) * channels * height * width, T(0)) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
  T* sample(int i) { return data.data() + sample_size() * i; }
  const T* sample(int i) const { return data.data() + sample_size() * i; }
  T& at(int b, int ch, int r, int col) { return data[((static_cast<std::size_t>(b) * c + ch) * h + r) * w + col]; }
  T at(int b, int ch, int r, int col) const {
    return data[((static_cast<std::size_t>(b) * c + ch) * h + r) * w + col];
  }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

struct UNetConfig {
  int depth = 3;
  int base_filters = 16;
  int in_channels = 3;
  int out_channels = 5;

  void validate() const;
  int filters(int level) const { return base_filters << level; }
  /// Input sides must be divisible by this.
  int stride() const { return 1 << depth; }
  std::vector<ChannelRole> output_roles() const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

struct LayerSpec {
  std::string name;
  int out_channels;
  int in_channels;
  int kernel;  // 3 or 1
};

/// Layers in declaration order: encoder, bottleneck, decoder, head.
std::vector<LayerSpec> layer_specs(const UNetConfig& cfg);

template <typename T>
struct ConvLayer {
  LayerSpec spec;
  std::vector<T> weight;  // [out][in][k][k]
  std::vector<T> bias;    // [out]

  friend bool operator==(const ConvLayer& a, const ConvLayer& b) {
    return a.spec.name == b.spec.name && a.weight == b.weight && a.bias == b.bias;
  }
};

template <typename T>
struct ModelParams {
  std::vector<ConvLayer<T>> layers;

  static ModelParams zeros(const UNetConfig& cfg);
  std::size_t parameter_count() const;
  bool same_shape(const ModelParams& o) const;
  /// Flat views in declaration order, weights before biases per layer.
  std::vector<std::span<T>> buffers();
  std::vector<std::span<const T>> buffers() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

template <typename To, typename From>
ModelParams<To> convert_params(const ModelParams<From>& params) {
  ModelParams<To> out;
  for (const auto& l : params.layers)
    out.layers.push_back({l.spec, std::vector<To>(l.weight.begin(), l.weight.end()),
                          std::vector<To>(l.bias.begin(), l.bias.end())});
  return out;
}

/// FNV-1a over the float32 bytes of every parameter; logged to prove two runs
/// start from the same initialization.
std::uint64_t params_checksum(const ModelParams<float>& params);

/// He initialization: N(0, 2 / fan_in) kernels, zero biases, seeded.
template <typename T>
ModelParams<T> init_params(const UNetConfig& cfg, std::uint64_t seed);

template <typename T>
struct ForwardCache {
  UNetConfig cfg;
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<Tensor4<T>> inputs;   // per layer: the tensor the conv consumed
  std::vector<Tensor4<T>> outputs;  // per layer: post-ReLU output (logits for the head)
  std::vector<std::vector<std::int32_t>> pool_argmax;  // per encoder level
  Tensor4<T> probs;
};

/// Softmax probabilities and the intermediates backward() needs. Throws
/// ShapeError when the spatial size is not divisible by 2^depth or the channel
/// count differs from cfg.in_channels.
template <typename T>
std::pair<Tensor4<T>, ForwardCache<T>> forward(const ModelParams<T>& params, const UNetConfig& cfg,
                                               const Tensor4<T>& batch);

/// Parameter gradients of the scalar loss whose gradient w.r.t. the
/// probabilities is `d_probs`. Throws CacheMismatch for a foreign cache.
template <typename T>
ModelParams<T> backward(const ModelParams<T>& params, const UNetConfig& cfg, const ForwardCache<T>& cache,
                        const Tensor4<T>& d_probs);

template <typename T>
struct AdamState {
  std::int64_t t = 0;
  ModelParams<T> m;
  ModelParams<T> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // When set, each kernel's step is multiplied by its He standard deviation
  // sqrt(2 / fan_in); biases keep the plain step. Without it a 0.01 step
  // sign-flips whole fan-ins of the deep layers at once and training blows up.
  bool fan_in_scaled = false;

  static AdamState init(const ModelParams<T>& params, bool fan_in_scaled = false);
};

/// Bias-corrected Adam, in place.
template <typename T>
void adam_update(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, double lr);

/// Value form of adam_update.
template <typename T>
std::pair<ModelParams<T>, AdamState<T>> adam_step(ModelParams<T> params, const ModelParams<T>& grads,
                                                  AdamState<T> state, double lr) {
  adam_update(params, grads, state, lr);
  return {std::move(params), std::move(state)};
}

/// NCHW tensor from interleaved images (all must share size and channel count).
Tensor4<float> images_to_tensor(std::span<const Image2D> images);
/// NCHW tensor from channel-last stacks.
Tensor4<float> stacks_to_tensor(std::span<const ChannelStack> stacks);
/// Sample `index` of an NCHW probability tensor as a channel-last stack.
ChannelStack tensor_to_stack(const Tensor4<float>& probs, int index, std::vector<ChannelRole> roles);

/// Single-image forward; roles follow cfg.out_channels.
ChannelStack predict(const ModelParams<float>& params, const UNetConfig& cfg, const Image2D& image);

// ---------------------------------------------------------------- checkpoints

/// Binary layout: 8 magic bytes "EDGESEG1", then little-endian uint32 depth,
/// base_filters, in_channels, out_channels, then every layer's weights and
/// biases in declaration order as little-endian float32.
void save_checkpoint(const std::filesystem::path& path, const UNetConfig& cfg, const ModelParams<float>& params);
std::pair<UNetConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path);

/// One line per layer: name out_channels in_channels kernel weight_count bias_count.
void write_checkpoint_manifest(const std::filesystem::path& path, const ModelParams<float>& params);

}  // namespace edgeseg
