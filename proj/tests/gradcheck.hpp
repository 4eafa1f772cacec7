#pragma once

// Finite-difference checks shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/nnseg.hpp"

namespace gradcheck {

// |a - n| / max(|a|, |n|), with a floor so that two gradients that are both
// essentially zero do not produce a huge ratio from rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

struct Report {
  std::size_t parameters = 0;
  std::size_t checked = 0;
  double worst = 0.0;
  std::string where;
};

// Focal loss of softmax(net(x)) against a random one-hot target; every weight
// and bias compared with a central difference.
inline Report network_check(const edgeseg::UNetConfig& cfg, int height, int width, std::uint64_t seed,
                            double step = 1e-5) {
  using namespace edgeseg;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor4<double> x(2, cfg.in_channels, height, width);
  for (auto& v : x.data) v = u(rng);
  Tensor4<double> y(2, cfg.out_channels, height, width);
  for (int b = 0; b < 2; ++b)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) y.at(b, static_cast<int>(rng() % cfg.out_channels), r, c) = 1.0;
  const auto roles = cfg.output_roles();
  const auto focal = FocalConfig::defaults();
  auto params = init_params<double>(cfg, seed + 1);
  // Non-zero biases so the bias gradients are exercised away from symmetric points.
  for (auto& l : params.layers)
    for (auto& v : l.bias) v = 0.1 * (u(rng) - 0.5);

  auto loss_of = [&](const ModelParams<double>& p) {
    auto [probs, cache] = forward(p, cfg, x);
    return focal_loss_raw<double>(probs.data, y.data, roles, probs.plane(), focal);
  };
  auto [probs, cache] = forward(params, cfg, x);
  Tensor4<double> g(probs.n, probs.c, probs.h, probs.w);
  focal_loss_grad_raw<double>(probs.data, y.data, roles, probs.plane(), focal, g.data);
  const auto grads = backward(params, cfg, cache, g);

  Report rep;
  auto probe = [&](std::vector<double>& slot_vec, const std::vector<double>& grad_vec, const std::string& name) {
    for (std::size_t i = 0; i < slot_vec.size(); ++i) {
      ++rep.parameters;
      const double orig = slot_vec[i];
      slot_vec[i] = orig + step;
      const double lp = loss_of(params);
      slot_vec[i] = orig - step;
      const double lm = loss_of(params);
      slot_vec[i] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double err = relative_error(grad_vec[i], numeric);
      ++rep.checked;
      if (err > rep.worst) {
        rep.worst = err;
        rep.where = name + "[" + std::to_string(i) + "] analytic " + std::to_string(grad_vec[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    probe(params.layers[l].weight, grads.layers[l].weight, params.layers[l].spec.name + ".weight");
    probe(params.layers[l].bias, grads.layers[l].bias, params.layers[l].spec.name + ".bias");
  }
  return rep;
}

}  // namespace gradcheck
