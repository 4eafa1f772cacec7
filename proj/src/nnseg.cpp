#include "edgeseg/nnseg.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "edgeseg/error.hpp"

namespace edgeseg {

// ---------------------------------------------------------------- config & layout

void UNetConfig::validate() const {
  if (depth < 1) throw Error(ErrorKind::ConfigError, "U-Net depth must be >= 1");
  if (base_filters < 1) throw Error(ErrorKind::ConfigError, "U-Net base_filters must be >= 1");
  if (in_channels < 1) throw Error(ErrorKind::ConfigError, "U-Net in_channels must be >= 1");
  if (out_channels != 3 && out_channels != 5)
    throw Error(ErrorKind::ConfigError, "U-Net out_channels must be 3 or 5");
  if (depth > 12) throw Error(ErrorKind::ConfigError, "U-Net depth is unreasonably large");
}

std::vector<ChannelRole> UNetConfig::output_roles() const {
  return out_channels == 5 ? edge_roles() : region_roles();
}

std::vector<LayerSpec> layer_specs(const UNetConfig& cfg) {
  cfg.validate();
  std::vector<LayerSpec> specs;
  for (int l = 0; l < cfg.depth; ++l) {
    const int in = l == 0 ? cfg.in_channels : cfg.filters(l - 1);
    const std::string p = "enc" + std::to_string(l);
    specs.push_back({p + ".conv1", cfg.filters(l), in, 3});
    specs.push_back({p + ".conv2", cfg.filters(l), cfg.filters(l), 3});
  }
  specs.push_back({"bottleneck.conv1", cfg.filters(cfg.depth), cfg.filters(cfg.depth - 1), 3});
  specs.push_back({"bottleneck.conv2", cfg.filters(cfg.depth), cfg.filters(cfg.depth), 3});
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    specs.push_back({p + ".up", cfg.filters(l), cfg.filters(l + 1), 3});
    specs.push_back({p + ".conv1", cfg.filters(l), 2 * cfg.filters(l), 3});
    specs.push_back({p + ".conv2", cfg.filters(l), cfg.filters(l), 3});
  }
  specs.push_back({"head", cfg.out_channels, cfg.filters(0), 1});
  return specs;
}

namespace {

// Layer indices within layer_specs().
int enc_layer(int level, int which) { return 2 * level + which; }
int bottleneck_layer(const UNetConfig& cfg, int which) { return 2 * cfg.depth + which; }
int dec_layer(const UNetConfig& cfg, int level, int which) {
  return 2 * cfg.depth + 2 + 3 * (cfg.depth - 1 - level) + which;
}
int head_layer(const UNetConfig& cfg) { return 5 * cfg.depth + 2; }

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const UNetConfig& cfg) {
  ModelParams out;
  for (auto& s : layer_specs(cfg)) {
    const std::size_t wn = static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel * s.kernel;
    out.layers.push_back({s, std::vector<T>(wn, T(0)), std::vector<T>(s.out_channels, T(0))});
  }
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
bool ModelParams<T>::same_shape(const ModelParams& o) const {
  if (layers.size() != o.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].weight.size() != o.layers[i].weight.size() || layers[i].bias.size() != o.layers[i].bias.size())
      return false;
  return true;
}

template <typename T>
std::vector<std::span<T>> ModelParams<T>::buffers() {
  std::vector<std::span<T>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

template <typename T>
std::vector<std::span<const T>> ModelParams<T>::buffers() const {
  std::vector<std::span<const T>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  return out;
}

std::uint64_t params_checksum(const ModelParams<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto buf : params.buffers()) {
    for (float v : buf) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFU;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

template <typename T>
ModelParams<T> init_params(const UNetConfig& cfg, std::uint64_t seed) {
  auto params = ModelParams<T>::zeros(cfg);
  std::mt19937_64 rng(seed);
  for (auto& l : params.layers) {
    const double fan_in = static_cast<double>(l.spec.in_channels) * l.spec.kernel * l.spec.kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : l.weight) w = static_cast<T>(dist(rng));
  }
  return params;
}

// ---------------------------------------------------------------- kernels

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecC = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Unfolds one C x H x W sample into a (C*9) x (H*W) patch matrix (3x3, zero padding 1).
template <typename T>
void im2col3(const T* x, int channels, int h, int w, T* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src = x + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int r = 0; r < h; ++r) {
          T* drow = dst + static_cast<std::size_t>(r) * w;
          const int sr = r + dy;
          if (sr < 0 || sr >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sr) * w;
          if (dx == 0) {
            std::copy(srow, srow + w, drow);
          } else if (dx < 0) {
            drow[0] = T(0);
            std::copy(srow, srow + w - 1, drow + 1);
          } else {
            std::copy(srow + 1, srow + w, drow);
            drow[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col3: scatters patch gradients back onto the (zeroed) input gradient.
template <typename T>
void col2im3(const T* col, int channels, int h, int w, T* dx_out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* dst = dx_out + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int r = 0; r < h; ++r) {
          const int sr = r + dy;
          if (sr < 0 || sr >= h) continue;
          const T* crow = src + static_cast<std::size_t>(r) * w;
          T* drow = dst + static_cast<std::size_t>(sr) * w;
          const int c0 = std::max(0, -dx);
          const int c1 = std::min(w, w - dx);
          for (int cc = c0; cc < c1; ++cc) drow[cc + dx] += crow[cc];
        }
      }
    }
  }
}

// Reusable patch buffer; one per forward/backward call.
template <typename T>
struct Workspace {
  std::vector<T> col;
  std::vector<T> dcol;
  T* col_for(std::size_t n) {
    if (col.size() < n) col.resize(n);
    return col.data();
  }
  T* dcol_for(std::size_t n) {
    if (dcol.size() < n) dcol.resize(n);
    return dcol.data();
  }
};

template <typename T>
Tensor4<T> conv_forward(const ConvLayer<T>& layer, const Tensor4<T>& x, bool relu, Workspace<T>& ws) {
  const auto& s = layer.spec;
  Tensor4<T> y(x.n, s.out_channels, x.h, x.w);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const Eigen::Index k = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  Eigen::Map<const MatR<T>> wm(layer.weight.data(), s.out_channels, k);
  Eigen::Map<const VecC<T>> bias(layer.bias.data(), s.out_channels);
  for (int b = 0; b < x.n; ++b) {
    const T* src = x.sample(b);
    if (s.kernel == 3) {
      T* col = ws.col_for(static_cast<std::size_t>(k * hw));
      im2col3(src, s.in_channels, x.h, x.w, col);
      src = col;
    }
    Eigen::Map<const MatR<T>> cm(src, k, hw);
    Eigen::Map<MatR<T>> ym(y.sample(b), s.out_channels, hw);
    ym.noalias() = wm * cm;
    ym.colwise() += bias;
  }
  if (relu)
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

// dy must already include the activation derivative. Accumulates into `grad`;
// returns dx when requested.
template <typename T>
Tensor4<T> conv_backward(const ConvLayer<T>& layer, const Tensor4<T>& x, const Tensor4<T>& dy,
                         ConvLayer<T>& grad, bool need_dx, Workspace<T>& ws) {
  const auto& s = layer.spec;
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const Eigen::Index k = static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel;
  Eigen::Map<const MatR<T>> wm(layer.weight.data(), s.out_channels, k);
  Eigen::Map<MatR<T>> gw(grad.weight.data(), s.out_channels, k);
  Eigen::Map<VecC<T>> gb(grad.bias.data(), s.out_channels);
  Tensor4<T> dx;
  if (need_dx) dx = Tensor4<T>(x.n, x.c, x.h, x.w);
  for (int b = 0; b < x.n; ++b) {
    const T* src = x.sample(b);
    if (s.kernel == 3) {
      T* col = ws.col_for(static_cast<std::size_t>(k * hw));
      im2col3(src, s.in_channels, x.h, x.w, col);
      src = col;
    }
    Eigen::Map<const MatR<T>> cm(src, k, hw);
    Eigen::Map<const MatR<T>> dym(dy.sample(b), s.out_channels, hw);
    gw.noalias() += dym * cm.transpose();
    // plain loop: Eigen's vectorized reduction order depends on the buffer's
    // alignment, which would make gradients differ bitwise between calls
    for (int o = 0; o < s.out_channels; ++o) {
      const T* row = dy.sample(b) + static_cast<std::size_t>(o) * hw;
      T acc = T(0);
      for (Eigen::Index i = 0; i < hw; ++i) acc += row[i];
      gb[o] += acc;
    }
    if (!need_dx) continue;
    if (s.kernel == 3) {
      T* dcol = ws.dcol_for(static_cast<std::size_t>(k * hw));
      Eigen::Map<MatR<T>> dcm(dcol, k, hw);
      dcm.noalias() = wm.transpose() * dym;
      col2im3(dcol, s.in_channels, x.h, x.w, dx.sample(b));
    } else {
      Eigen::Map<MatR<T>> dxm(dx.sample(b), k, hw);
      dxm.noalias() = wm.transpose() * dym;
    }
  }
  return dx;
}

template <typename T>
void relu_backward(const Tensor4<T>& y, Tensor4<T>& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

template <typename T>
Tensor4<T> maxpool_forward(const Tensor4<T>& x, std::vector<std::int32_t>& argmax) {
  Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.c + c) * x.plane();
      for (int r = 0; r < y.h; ++r) {
        for (int col = 0; col < y.w; ++col, ++o) {
          std::int32_t best = (2 * r) * x.w + 2 * col;
          for (std::int32_t cand : {best + 1, best + x.w, best + x.w + 1})
            if (src[cand] > src[best]) best = cand;
          argmax[o] = best;
          y.data[o] = src[best];
        }
      }
    }
  }
  return y;
}

template <typename T>
void maxpool_backward(const Tensor4<T>& dy, const std::vector<std::int32_t>& argmax, Tensor4<T>& dx) {
  std::size_t o = 0;
  for (int b = 0; b < dy.n; ++b) {
    for (int c = 0; c < dy.c; ++c) {
      T* dst = dx.data.data() + (static_cast<std::size_t>(b) * dx.c + c) * dx.plane();
      for (std::size_t i = 0; i < dy.plane(); ++i, ++o) dst[argmax[o]] += dy.data[o];
    }
  }
}

template <typename T>
Tensor4<T> upsample2(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h * 2, x.w * 2);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c)
      for (int r = 0; r < y.h; ++r)
        for (int col = 0; col < y.w; ++col) y.at(b, c, r, col) = x.at(b, c, r / 2, col / 2);
  return y;
}

template <typename T>
Tensor4<T> upsample2_backward(const Tensor4<T>& dy) {
  Tensor4<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int b = 0; b < dy.n; ++b)
    for (int c = 0; c < dy.c; ++c)
      for (int r = 0; r < dy.h; ++r)
        for (int col = 0; col < dy.w; ++col) dx.at(b, c, r / 2, col / 2) += dy.at(b, c, r, col);
  return dx;
}

// Channel concatenation [a, b].
template <typename T>
Tensor4<T> concat(const Tensor4<T>& a, const Tensor4<T>& b) {
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int n = 0; n < a.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + a.sample_size(), y.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.sample_size(), y.sample(n) + a.sample_size());
  }
  return y;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split(const Tensor4<T>& y, int first_channels) {
  Tensor4<T> a(y.n, first_channels, y.h, y.w);
  Tensor4<T> b(y.n, y.c - first_channels, y.h, y.w);
  for (int n = 0; n < y.n; ++n) {
    std::copy(y.sample(n), y.sample(n) + a.sample_size(), a.sample(n));
    std::copy(y.sample(n) + a.sample_size(), y.sample(n) + y.sample_size(), b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& logits) {
  Tensor4<T> p(logits.n, logits.c, logits.h, logits.w);
  const std::size_t plane = logits.plane();
  for (int b = 0; b < logits.n; ++b) {
    const T* z = logits.sample(b);
    T* out = p.sample(b);
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = z[i];
      for (int c = 1; c < logits.c; ++c) mx = std::max(mx, z[c * plane + i]);
      T sum = 0;
      for (int c = 0; c < logits.c; ++c) {
        const T e = std::exp(z[c * plane + i] - mx);
        out[c * plane + i] = e;
        sum += e;
      }
      for (int c = 0; c < logits.c; ++c) out[c * plane + i] /= sum;
    }
  }
  return p;
}

template <typename T>
constexpr T kFloor = T(1e-7);

template <typename T>
Tensor4<T> softmax_backward(const Tensor4<T>& probs, const Tensor4<T>& d_probs) {
  Tensor4<T> dz(probs.n, probs.c, probs.h, probs.w);
  const std::size_t plane = probs.plane();
  for (int b = 0; b < probs.n; ++b) {
    const T* p = probs.sample(b);
    const T* g = d_probs.sample(b);
    T* out = dz.sample(b);
    for (std::size_t i = 0; i < plane; ++i) {
      // Probabilities are floored at the loss clamp. A float softmax underflows
      // to exactly 0 once a logit trails by ~100, and p * dL/dp would then
      // vanish although the clamped loss still pulls that class up.
      T pc[8];
      T dot = 0;
      for (int c = 0; c < probs.c; ++c) {
        pc[c] = std::clamp(p[c * plane + i], kFloor<T>, T(1) - kFloor<T>);
        dot += pc[c] * g[c * plane + i];
      }
      for (int c = 0; c < probs.c; ++c) out[c * plane + i] = pc[c] * (g[c * plane + i] - dot);
    }
  }
  return dz;
}

template <typename T>
void check_params(const ModelParams<T>& params, const UNetConfig& cfg) {
  const auto specs = layer_specs(cfg);
  if (params.layers.size() != specs.size()) throw Error(ErrorKind::ShapeError, "parameters do not match config");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto& l = params.layers[i];
    if (l.weight.size() != static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel * s.kernel ||
        l.bias.size() != static_cast<std::size_t>(s.out_channels))
      throw Error(ErrorKind::ShapeError, "layer " + s.name + " has the wrong shape");
  }
}

}  // namespace

// ---------------------------------------------------------------- forward / backward

template <typename T>
std::pair<Tensor4<T>, ForwardCache<T>> forward(const ModelParams<T>& params, const UNetConfig& cfg,
                                               const Tensor4<T>& batch) {
  check_params(params, cfg);
  if (batch.n < 1 || batch.c != cfg.in_channels)
    throw Error(ErrorKind::ShapeError, "input has " + std::to_string(batch.c) + " channels, network expects " +
                                           std::to_string(cfg.in_channels));
  if (batch.h % cfg.stride() != 0 || batch.w % cfg.stride() != 0 || batch.h == 0 || batch.w == 0)
    throw Error(ErrorKind::ShapeError, "input " + std::to_string(batch.h) + "x" + std::to_string(batch.w) +
                                           " is not divisible by " + std::to_string(cfg.stride()));

  ForwardCache<T> cache;
  cache.cfg = cfg;
  cache.batch = batch.n;
  cache.height = batch.h;
  cache.width = batch.w;
  const std::size_t nl = params.layers.size();
  cache.inputs.resize(nl);
  cache.outputs.resize(nl);
  cache.pool_argmax.resize(cfg.depth);
  Workspace<T> ws;

  auto run = [&](int idx, Tensor4<T> in, bool relu) -> const Tensor4<T>& {
    cache.inputs[idx] = std::move(in);
    cache.outputs[idx] = conv_forward(params.layers[idx], cache.inputs[idx], relu, ws);
    return cache.outputs[idx];
  };

  Tensor4<T> x = batch;
  for (int l = 0; l < cfg.depth; ++l) {
    run(enc_layer(l, 0), std::move(x), true);
    const auto& skip = run(enc_layer(l, 1), cache.outputs[enc_layer(l, 0)], true);
    x = maxpool_forward(skip, cache.pool_argmax[l]);
  }
  run(bottleneck_layer(cfg, 0), std::move(x), true);
  x = run(bottleneck_layer(cfg, 1), cache.outputs[bottleneck_layer(cfg, 0)], true);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const auto& up = run(dec_layer(cfg, l, 0), upsample2(x), true);
    run(dec_layer(cfg, l, 1), concat(cache.outputs[enc_layer(l, 1)], up), true);
    x = run(dec_layer(cfg, l, 2), cache.outputs[dec_layer(cfg, l, 1)], true);
  }
  const auto& logits = run(head_layer(cfg), std::move(x), false);
  cache.probs = softmax_channels(logits);
  return {cache.probs, std::move(cache)};
}

template <typename T>
ModelParams<T> backward(const ModelParams<T>& params, const UNetConfig& cfg, const ForwardCache<T>& cache,
                        const Tensor4<T>& d_probs) {
  check_params(params, cfg);
  if (!(cache.cfg == cfg) || cache.inputs.size() != params.layers.size() || !d_probs.same_shape(cache.probs))
    throw Error(ErrorKind::CacheMismatch, "forward cache does not match this network or gradient");
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    if (cache.outputs[i].c != params.layers[i].spec.out_channels ||
        cache.inputs[i].c != params.layers[i].spec.in_channels)
      throw Error(ErrorKind::CacheMismatch, "forward cache was produced by a different network");

  auto grads = ModelParams<T>::zeros(cfg);
  Workspace<T> ws;
  // Gradient w.r.t. a layer's post-activation output -> gradient w.r.t. its input.
  auto back = [&](int idx, Tensor4<T> dy, bool relu, bool need_dx) {
    if (relu) relu_backward(cache.outputs[idx], dy);
    return conv_backward(params.layers[idx], cache.inputs[idx], dy, grads.layers[idx], need_dx, ws);
  };

  Tensor4<T> dx = back(head_layer(cfg), softmax_backward(cache.probs, d_probs), false, true);
  std::vector<Tensor4<T>> d_skip(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    Tensor4<T> d_a = back(dec_layer(cfg, l, 2), std::move(dx), true, true);
    Tensor4<T> d_cat = back(dec_layer(cfg, l, 1), std::move(d_a), true, true);
    auto [d_skip_l, d_up] = split(d_cat, cfg.filters(l));
    d_skip[l] = std::move(d_skip_l);
    Tensor4<T> d_u = back(dec_layer(cfg, l, 0), std::move(d_up), true, true);
    dx = upsample2_backward(d_u);
  }
  dx = back(bottleneck_layer(cfg, 1), std::move(dx), true, true);
  dx = back(bottleneck_layer(cfg, 0), std::move(dx), true, true);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    Tensor4<T> d_out = std::move(d_skip[l]);
    maxpool_backward(dx, cache.pool_argmax[l], d_out);
    Tensor4<T> d_a = back(enc_layer(l, 1), std::move(d_out), true, true);
    dx = back(enc_layer(l, 0), std::move(d_a), true, l > 0);
  }
  return grads;
}

// ---------------------------------------------------------------- Adam

template <typename T>
AdamState<T> AdamState<T>::init(const ModelParams<T>& params, bool fan_in_scaled) {
  AdamState s;
  s.fan_in_scaled = fan_in_scaled;
  s.m = params;
  s.v = params;
  for (auto buf : s.m.buffers()) std::fill(buf.begin(), buf.end(), T(0));
  for (auto buf : s.v.buffers()) std::fill(buf.begin(), buf.end(), T(0));
  return s;
}

template <typename T>
void adam_update(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state, double lr) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw Error(ErrorKind::ShapeError, "Adam: parameter, gradient and state shapes differ");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto p_bufs = params.buffers();
  auto g_bufs = grads.buffers();
  auto m_bufs = state.m.buffers();
  auto v_bufs = state.v.buffers();
  for (std::size_t b = 0; b < p_bufs.size(); ++b) {
    // buffers() alternates weight, bias per layer
    double step = lr;
    if (state.fan_in_scaled && b % 2 == 0) {
      const auto& spec = params.layers[b / 2].spec;
      step *= std::sqrt(2.0 / (spec.in_channels * spec.kernel * spec.kernel));
    }
    for (std::size_t i = 0; i < p_bufs[b].size(); ++i) {
      const double g = g_bufs[b][i];
      const double m = state.beta1 * m_bufs[b][i] + (1.0 - state.beta1) * g;
      const double v = state.beta2 * v_bufs[b][i] + (1.0 - state.beta2) * g * g;
      m_bufs[b][i] = static_cast<T>(m);
      v_bufs[b][i] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      p_bufs[b][i] = static_cast<T>(p_bufs[b][i] - step * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------- conversions

Tensor4<float> images_to_tensor(std::span<const Image2D> images) {
  if (images.empty()) throw Error(ErrorKind::ShapeError, "no images");
  const auto& f = images.front();
  Tensor4<float> t(static_cast<int>(images.size()), f.channels(), f.height(), f.width());
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (img.height() != f.height() || img.width() != f.width() || img.channels() != f.channels())
      throw Error(ErrorKind::ShapeError, "images in a batch must share size and channel count");
    const std::size_t plane = t.plane();
    float* dst = t.sample(static_cast<int>(b));
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < t.c; ++c) dst[c * plane + p] = img.data()[p * t.c + c];
  }
  return t;
}

Tensor4<float> stacks_to_tensor(std::span<const ChannelStack> stacks) {
  if (stacks.empty()) throw Error(ErrorKind::ShapeError, "no stacks");
  const auto& f = stacks.front();
  Tensor4<float> t(static_cast<int>(stacks.size()), f.channels(), f.height(), f.width());
  for (std::size_t b = 0; b < stacks.size(); ++b) {
    const auto& s = stacks[b];
    if (s.height() != f.height() || s.width() != f.width() || s.roles() != f.roles())
      throw Error(ErrorKind::ShapeError, "stacks in a batch must share size and roles");
    const std::size_t plane = t.plane();
    float* dst = t.sample(static_cast<int>(b));
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < t.c; ++c) dst[c * plane + p] = s.data()[p * t.c + c];
  }
  return t;
}

ChannelStack tensor_to_stack(const Tensor4<float>& probs, int index, std::vector<ChannelRole> roles) {
  if (index < 0 || index >= probs.n || static_cast<int>(roles.size()) != probs.c)
    throw Error(ErrorKind::ShapeError, "tensor_to_stack: index or role count mismatch");
  const std::size_t plane = probs.plane();
  std::vector<float> data(plane * probs.c);
  const float* src = probs.sample(index);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < probs.c; ++c) data[p * probs.c + c] = std::clamp(src[c * plane + p], 0.0F, 1.0F);
  return ChannelStack(probs.h, probs.w, std::move(roles), std::move(data));
}

ChannelStack predict(const ModelParams<float>& params, const UNetConfig& cfg, const Image2D& image) {
  const auto batch = images_to_tensor(std::span<const Image2D>(&image, 1));
  auto [probs, cache] = forward(params, cfg, batch);
  return tensor_to_stack(probs, 0, cfg.output_roles());
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'E', 'D', 'G', 'E', 'S', 'E', 'G', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error(ErrorKind::Io, "truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const UNetConfig& cfg, const ModelParams<float>& params) {
  check_params(params, cfg);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  for (int v : {cfg.depth, cfg.base_filters, cfg.in_channels, cfg.out_channels})
    put_u32(out, static_cast<std::uint32_t>(v));
  for (auto buf : params.buffers())
    for (float v : buf) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error(ErrorKind::Io, "write failed for checkpoint " + path.string());
}

std::pair<UNetConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorKind::Io, path.string() + " is not an edgeseg checkpoint");
  UNetConfig cfg;
  cfg.depth = static_cast<int>(get_u32(in));
  cfg.base_filters = static_cast<int>(get_u32(in));
  cfg.in_channels = static_cast<int>(get_u32(in));
  cfg.out_channels = static_cast<int>(get_u32(in));
  cfg.validate();
  auto params = ModelParams<float>::zeros(cfg);
  for (auto buf : params.buffers())
    for (auto& v : buf) v = std::bit_cast<float>(get_u32(in));
  if (in.peek() != std::char_traits<char>::eof())
    throw Error(ErrorKind::Io, "trailing bytes in checkpoint " + path.string());
  return {cfg, std::move(params)};
}

void write_checkpoint_manifest(const std::filesystem::path& path, const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& l : params.layers)
    out << l.spec.name << ' ' << l.spec.out_channels << ' ' << l.spec.in_channels << ' ' << l.spec.kernel << ' '
        << l.weight.size() << ' ' << l.bias.size() << '\n';
}

// ---------------------------------------------------------------- instantiations

template struct ModelParams<float>;
template struct ModelParams<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template ModelParams<float> init_params<float>(const UNetConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const UNetConfig&, std::uint64_t);
template std::pair<Tensor4<float>, ForwardCache<float>> forward(const ModelParams<float>&, const UNetConfig&,
                                                                const Tensor4<float>&);
template std::pair<Tensor4<double>, ForwardCache<double>> forward(const ModelParams<double>&, const UNetConfig&,
                                                                  const Tensor4<double>&);
template ModelParams<float> backward(const ModelParams<float>&, const UNetConfig&, const ForwardCache<float>&,
                                     const Tensor4<float>&);
template ModelParams<double> backward(const ModelParams<double>&, const UNetConfig&, const ForwardCache<double>&,
                                      const Tensor4<double>&);
template void adam_update(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&, double);
template void adam_update(ModelParams<double>&, const ModelParams<double>&, AdamState<double>&, double);

}  // namespace edgeseg
