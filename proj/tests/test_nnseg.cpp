#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "edgeseg/error.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/nnseg.hpp"
#include "gradcheck.hpp"

using namespace edgeseg;

namespace {

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor4<T> t(n, c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

UNetConfig tiny() { return {1, 2, 3, 5}; }

}  // namespace

TEST_CASE("layer order and shapes") {
  const auto specs = layer_specs({2, 4, 3, 5});
  REQUIRE(specs.size() == 2 * 2 + 2 + 2 * 3 + 1);
  CHECK(specs.front().name == "enc0.conv1");
  CHECK(specs.front().in_channels == 3);
  CHECK(specs.front().out_channels == 4);
  CHECK(specs[4].name == "bottleneck.conv1");
  CHECK(specs[4].out_channels == 16);
  CHECK(specs[6].name == "dec1.up");
  CHECK(specs[7].in_channels == 16);  // skip 8 + up 8
  CHECK(specs.back().name == "head");
  CHECK(specs.back().kernel == 1);
  CHECK(specs.back().out_channels == 5);
}

TEST_CASE("init is deterministic with He variance and zero bias") {
  const UNetConfig cfg{3, 16, 3, 5};
  const auto a = init_params<float>(cfg, 42);
  const auto b = init_params<float>(cfg, 42);
  CHECK(a == b);
  CHECK(params_checksum(a) == params_checksum(b));
  CHECK(params_checksum(a) != params_checksum(init_params<float>(cfg, 43)));
  for (const auto& l : a.layers)
    for (float v : l.bias) CHECK(v == 0.0f);

  // enc0.conv2 is 16 -> 16 with 3x3 kernels: fan_in 144, 2304 weights. Pool
  // every layer with that fan-in to get beyond 10^4 draws.
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = init_params<double>(cfg, seed);
    for (const auto& l : p.layers) {
      if (l.spec.in_channels * l.spec.kernel * l.spec.kernel != 144) continue;
      for (double v : l.weight) {
        sum += v;
        sq += v * v;
        ++n;
      }
    }
  }
  REQUIRE(n >= 10000);
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(var - 2.0 / 144.0) <= 0.2 * (2.0 / 144.0));
}

TEST_CASE("forward: softmax rows, zero params, batch independence") {
  const UNetConfig cfg{2, 4, 3, 5};
  const auto x = random_tensor<float>(1, 3, 16, 16, 7);
  const auto params = init_params<float>(cfg, 3);
  auto [probs, cache] = forward(params, cfg, x);
  REQUIRE(probs.c == 5);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) {
        const double p = probs.at(0, k, r, c);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }

  const auto zero = ModelParams<float>::zeros(cfg);
  auto [uniform, c2] = forward(zero, cfg, x);
  for (float p : uniform.data) CHECK(p == doctest::Approx(0.2).epsilon(1e-7));

  Tensor4<float> twice(2, 3, 16, 16);
  std::copy(x.data.begin(), x.data.end(), twice.data.begin());
  std::copy(x.data.begin(), x.data.end(), twice.data.begin() + x.size());
  auto [p2, c3] = forward(params, cfg, twice);
  CHECK(std::equal(probs.data.begin(), probs.data.end(), p2.sample(0)));
  CHECK(std::equal(probs.data.begin(), probs.data.end(), p2.sample(1)));
}

TEST_CASE("forward rejects bad shapes") {
  const UNetConfig cfg{2, 4, 3, 5};
  const auto params = init_params<float>(cfg, 3);
  CHECK_THROWS_AS(forward(params, cfg, random_tensor<float>(1, 3, 10, 16, 1)), Error);
  CHECK_THROWS_AS(forward(params, cfg, random_tensor<float>(1, 1, 16, 16, 1)), Error);
  try {
    forward(params, cfg, random_tensor<float>(1, 3, 14, 14, 1));
    FAIL("expected ShapeError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeError);
  }
}

TEST_CASE("backward: zero upstream, determinism, cache mismatch") {
  const UNetConfig cfg = tiny();
  const auto params = init_params<double>(cfg, 5);
  const auto x = random_tensor<double>(2, 3, 8, 8, 9);
  auto [probs, cache] = forward(params, cfg, x);
  Tensor4<double> zero(probs.n, probs.c, probs.h, probs.w);
  const auto g0 = backward(params, cfg, cache, zero);
  for (const auto& l : g0.layers) {
    for (double v : l.weight) CHECK(v == 0.0);
    for (double v : l.bias) CHECK(v == 0.0);
  }
  const auto up = random_tensor<double>(probs.n, probs.c, probs.h, probs.w, 11);
  CHECK(backward(params, cfg, cache, up) == backward(params, cfg, cache, up));

  auto [p_other, other] = forward(params, cfg, random_tensor<double>(1, 3, 8, 8, 2));
  try {
    backward(params, cfg, other, up);
    FAIL("expected CacheMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CacheMismatch);
  }
}

TEST_CASE("end-to-end gradient check, depth 1, 2 filters, 8x8, 5 outputs") {
  const auto report = gradcheck::network_check(tiny(), 8, 8, 2024);
  INFO("worst relative error " << report.worst << " at " << report.where);
  CHECK(report.checked == report.parameters);
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("adam") {
  const UNetConfig cfg = tiny();
  auto params = init_params<double>(cfg, 1);
  const auto start = params;
  auto state = AdamState<double>::init(params);

  SUBCASE("zero gradient leaves params, advances t") {
    adam_update(params, ModelParams<double>::zeros(cfg), state, 0.01);
    CHECK(params == start);
    CHECK(state.t == 1);
  }
  SUBCASE("first step is -lr*sign(g) for large gradients") {
    auto g = ModelParams<double>::zeros(cfg);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> mag(10.0, 1000.0);
    for (auto& l : g.layers)
      for (auto& v : l.weight) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    adam_update(params, g, state, 0.01);
    for (std::size_t i = 0; i < g.layers.size(); ++i)
      for (std::size_t j = 0; j < g.layers[i].weight.size(); ++j) {
        const double step = params.layers[i].weight[j] - start.layers[i].weight[j];
        const double expected = -0.01 * (g.layers[i].weight[j] > 0 ? 1.0 : -1.0);
        CHECK(step == doctest::Approx(expected).epsilon(1e-6));
      }
  }
  SUBCASE("value form is deterministic") {
    const auto g = init_params<double>(cfg, 99);
    auto [p1, s1] = adam_step(start, g, AdamState<double>::init(start), 0.01);
    auto [p2, s2] = adam_step(start, g, AdamState<double>::init(start), 0.01);
    CHECK(p1 == p2);
    CHECK(s1.t == 1);
    CHECK(s1.m == s2.m);
    CHECK(s1.v == s2.v);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(adam_update(params, ModelParams<double>::zeros({1, 3, 3, 5}), state, 0.01), Error);
  }
}

TEST_CASE("predict matches forward on a batch of one") {
  const UNetConfig cfg{2, 4, 3, 3};
  const auto params = init_params<float>(cfg, 8);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> px(16 * 16 * 3);
  for (auto& v : px) v = u(rng);
  const Image2D img(16, 16, 3, px);
  const auto stack = predict(params, cfg, img);
  REQUIRE(stack.channels() == 3);
  CHECK(stack.roles() == region_roles());
  const std::vector<Image2D> one{img};
  auto [probs, cache] = forward(params, cfg, images_to_tensor(one));
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        CHECK(stack.at(r, c, k) == probs.at(0, k, r, c));
        s += stack.at(r, c, k);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("overfitting one sample halves the loss within 50 steps") {
  const UNetConfig cfg{2, 8, 3, 5};
  auto params = init_params<float>(cfg, 17);
  auto state = AdamState<float>::init(params);
  const auto x = random_tensor<float>(1, 3, 16, 16, 21);
  Tensor4<float> y(1, 5, 16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const int d2 = (r - 8) * (r - 8) + (c - 8) * (c - 8);
      const int k = d2 <= 4 ? 4 : (d2 <= 9 ? 2 : (d2 <= 25 ? 3 : (d2 <= 36 ? 1 : 0)));
      y.at(0, k, r, c) = 1.0f;
    }
  const auto roles = edge_roles();
  const auto cfg_loss = FocalConfig::defaults();
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    auto [probs, cache] = forward(params, cfg, x);
    Tensor4<float> g(probs.n, probs.c, probs.h, probs.w);
    const double loss = focal_loss_grad_raw<float>(probs.data, y.data, roles, probs.plane(), cfg_loss, g.data);
    if (step == 0) first = loss;
    last = loss;
    adam_update(params, backward(params, cfg, cache, g), state, 0.01);
  }
  INFO("first " << first << " last " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("checkpoint round trip") {
  const UNetConfig cfg{2, 4, 3, 5};
  const auto params = init_params<float>(cfg, 12);
  const auto path = std::filesystem::temp_directory_path() / "edgeseg_test.ckpt";
  save_checkpoint(path, cfg, params);
  auto [cfg2, params2] = load_checkpoint(path);
  CHECK(cfg2.depth == 2);
  CHECK(cfg2.base_filters == 4);
  CHECK(cfg2.out_channels == 5);
  CHECK(params2 == params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}
