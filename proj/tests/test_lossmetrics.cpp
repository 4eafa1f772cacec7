#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "edgeseg/error.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace edgeseg;

namespace {

// Direct evaluation of the loss formula for one element.
double focal_term(double y, double p, double alpha, double gamma) {
  return -alpha * y * std::pow(1.0 - p, gamma) * std::log(p) - (1.0 - y) * std::pow(p, gamma) * std::log(1.0 - p);
}

struct Instance {
  std::vector<double> pred, target;
  std::vector<ChannelRole> roles;
};

Instance random_instance(std::mt19937_64& rng, int pixels) {
  Instance in;
  in.roles = edge_roles();
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int p = 0; p < pixels; ++p) {
    const int hot = static_cast<int>(rng() % 5);
    for (int k = 0; k < 5; ++k) {
      in.pred.push_back(u(rng));
      in.target.push_back(k == hot ? 1.0 : 0.0);
    }
  }
  return in;
}

BinaryPlane points_plane(int h, int w, std::initializer_list<Point> pts) {
  BinaryPlane p(h, w);
  for (auto q : pts) p.at(q.row, q.col) = 1;
  return p;
}

}  // namespace

TEST_CASE("focal config") {
  const auto d = FocalConfig::defaults();
  CHECK(d.gamma == 2.0);
  CHECK(d.alpha_for(ChannelRole::CupEdge) == 0.9);
  CHECK(d.alpha_for(ChannelRole::DiscEdge) == 0.8);
  CHECK(d.alpha_for(ChannelRole::Background) == 0.1);
  CHECK(d.alpha_for(ChannelRole::CupRegion) == 0.7);
  CHECK(d.alpha_for(ChannelRole::DiscRegion) == 0.5);
  FocalConfig empty;
  try {
    empty.alpha_for(ChannelRole::CupEdge);
    FAIL("expected MissingAlpha");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingAlpha);
  }
  FocalConfig neg = d;
  neg.gamma = -1;
  CHECK_THROWS_AS(neg.validate(), Error);
}

TEST_CASE("focal loss values") {
  FocalConfig cfg;
  cfg.gamma = 2.0;
  cfg.set_alpha(ChannelRole::CupEdge, 0.9);
  const ChannelStack half(1, 1, {ChannelRole::CupEdge}, {0.5f});
  const ChannelStack one(1, 1, {ChannelRole::CupEdge}, {1.0f});
  CHECK(std::abs(focal_loss(half, one, cfg) - 0.9 * 0.25 * std::log(2.0)) <= 1e-9);
  CHECK(std::abs(focal_loss(half, one, cfg) - 0.1559581) <= 1e-7);

  // perfect prediction: only the clamp remains
  const auto d = FocalConfig::defaults();
  const ChannelStack target(2, 1, region_roles(), {1.f, 0.f, 0.f, 0.f, 0.f, 1.f});
  CHECK(focal_loss(target, target, d) <= 1e-12);
  CHECK(focal_loss(target, target, d) >= 0.0);

  const ChannelStack wrong(1, 1, {ChannelRole::CupEdge}, {0.3f});
  CHECK_THROWS_AS(focal_loss(wrong, target, d), Error);
}

TEST_CASE("gamma 0 and alpha 0.5 reduce to half the binary cross-entropy") {
  FocalConfig cfg;
  cfg.gamma = 0.0;
  for (auto r : edge_roles()) cfg.set_alpha(r, 0.5);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int t = 0; t < 20; ++t) {
    auto in = random_instance(rng, 7);
    for (auto& p : in.pred) p = u(rng);
    // y = 1 terms are alpha-weighted, y = 0 terms are not: with one-hot
    // targets the reduction is elementwise 0.5*BCE only where y = 1
    double expected = 0.0;
    for (std::size_t i = 0; i < in.pred.size(); ++i) {
      const double y = in.target[i], p = in.pred[i];
      expected += y == 1.0 ? 0.5 * oracle::bce(y, p) : oracle::bce(y, p);
    }
    expected /= static_cast<double>(in.pred.size());
    const double got = focal_loss_raw<double>(in.pred, in.target, in.roles, 1, cfg);
    CHECK(std::abs(got - expected) <= 1e-9);
  }
}

TEST_CASE("focal loss matches the elementwise formula") {
  const auto cfg = FocalConfig::defaults();
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance(rng, 6);
    double expected = 0.0;
    for (std::size_t i = 0; i < in.pred.size(); ++i)
      expected += focal_term(in.target[i], in.pred[i], cfg.alpha_for(in.roles[i % 5]), cfg.gamma);
    expected /= static_cast<double>(in.pred.size());
    CHECK(std::abs(focal_loss_raw<double>(in.pred, in.target, in.roles, 1, cfg) - expected) <= 1e-12);
  }
}

TEST_CASE("focal gradient against central differences") {
  const auto cfg = FocalConfig::defaults();
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng, 4);
    std::vector<double> grad(in.pred.size());
    focal_loss_grad_raw<double>(in.pred, in.target, in.roles, 1, cfg, grad);
    for (std::size_t i = 0; i < in.pred.size(); ++i) {
      const double h = 1e-4, orig = in.pred[i];
      in.pred[i] = orig + h;
      const double lp = focal_loss_raw<double>(in.pred, in.target, in.roles, 1, cfg);
      in.pred[i] = orig - h;
      const double lm = focal_loss_raw<double>(in.pred, in.target, in.roles, 1, cfg);
      in.pred[i] = orig;
      worst = std::max(worst, gradcheck::relative_error(grad[i], (lp - lm) / (2 * h)));
    }
  }
  INFO("worst relative error " << worst);
  CHECK(worst <= 1e-5);
}

TEST_CASE("focal gradient special values") {
  FocalConfig ce;
  ce.gamma = 0.0;
  ce.set_alpha(ChannelRole::CupEdge, 1.0);
  const std::vector<double> p{0.5}, y{1.0};
  std::vector<double> g(1);
  focal_loss_grad_raw<double>(p, y, {ChannelRole::CupEdge}, 1, ce, g);
  CHECK(g[0] == doctest::Approx(-2.0));  // one element: mean normalization is 1

  const auto d = FocalConfig::defaults();
  const std::vector<double> near{1.0 - 1e-6};
  focal_loss_grad_raw<double>(near, y, {ChannelRole::CupEdge}, 1, d, g);
  CHECK(std::abs(g[0]) < 1e-10);

  // NCHW indexing: channel is (i / inner) % C
  const std::vector<ChannelRole> roles{ChannelRole::Background, ChannelRole::CupEdge};
  const std::vector<double> pc{0.3, 0.3, 0.3, 0.3}, yc{1, 1, 1, 1};
  const double nchw = focal_loss_raw<double>(pc, yc, roles, 2, d);
  const double expect = (2 * focal_term(1, 0.3, 0.1, 2) + 2 * focal_term(1, 0.3, 0.9, 2)) / 4;
  CHECK(std::abs(nchw - expect) <= 1e-12);

  // stack wrapper agrees with the raw kernel
  const ChannelStack sp(1, 2, roles, {0.25f, 0.75f, 0.6f, 0.4f});
  const ChannelStack st(1, 2, roles, {1.f, 0.f, 0.f, 1.f});
  const auto sg = focal_loss_grad(sp, st, d);
  std::vector<double> raw_p(sp.data().begin(), sp.data().end()), raw_y(st.data().begin(), st.data().end());
  std::vector<double> raw_g(4);
  focal_loss_grad_raw<double>(raw_p, raw_y, roles, 1, d, raw_g);
  CHECK(sg.data == raw_g);
}

TEST_CASE("dice") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_plane(10, 10, 0.4, rng);
  CHECK(dice_score(a, a) == 1.0);
  const auto b = points_plane(2, 2, {{0, 0}});
  const auto c = points_plane(2, 2, {{1, 1}});
  CHECK(dice_score(b, c) == 0.0);
  CHECK(dice_score(BinaryPlane(3, 3), BinaryPlane(3, 3)) == 1.0);
  CHECK_THROWS_AS(dice_score(BinaryPlane(2, 3), BinaryPlane(3, 2)), Error);

  // TP = 50, FP = 10, FN = 10 on a 10x10 grid
  BinaryPlane pred(10, 10), truth(10, 10);
  for (int i = 0; i < 60; ++i) pred.data[i] = 1;
  for (int i = 10; i < 70; ++i) truth.data[i] = 1;
  CHECK(dice_score(pred, truth) == doctest::Approx(100.0 / 120.0).epsilon(1e-12));

  for (int t = 0; t < 50; ++t) {
    const auto x = oracle::random_plane(8, 8, 0.3, rng), y = oracle::random_plane(8, 8, 0.5, rng);
    CHECK(dice_score(x, y) == dice_score(y, x));
    CHECK(dice_score(x, y) >= 0.0);
    CHECK(dice_score(x, y) <= 1.0);
  }
}

TEST_CASE("one-sided Hausdorff on point sets") {
  const std::vector<Point> one{{2, 2}};
  CHECK(hausdorff_one_sided(one, one) == 0.0);
  const std::vector<Point> o{{0, 0}}, f{{3, 4}};
  CHECK(hausdorff_one_sided(o, f) == 5.0);
  const std::vector<Point> two{{0, 0}, {1, 0}};
  CHECK(hausdorff_one_sided(two, o) == 1.0);
  CHECK(hausdorff_one_sided(o, two) == 0.0);
  try {
    hausdorff_one_sided(std::vector<Point>{}, o);
    FAIL("expected EmptySet");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptySet);
  }
}

TEST_CASE("plane Hausdorff against the all-pairs oracle") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 300; ++t) {
    const int h = 1 + static_cast<int>(rng() % 16), w = 1 + static_cast<int>(rng() % 16);
    auto x = oracle::random_plane(h, w, 0.05 + 0.3 * (t % 4), rng);
    auto y = oracle::random_plane(h, w, 0.1, rng);
    x.data[rng() % x.data.size()] = 1;
    y.data[rng() % y.data.size()] = 1;
    const double d = hausdorff_one_sided(x, y);
    CHECK(d == doctest::Approx(oracle::directed_hausdorff(x, y)).epsilon(1e-12));
    const auto px = foreground_points(x), py = foreground_points(y);
    CHECK(hausdorff_one_sided(px, py) == doctest::Approx(d).epsilon(1e-12));
  }
}

TEST_CASE("symmetric Hausdorff") {
  const auto two = points_plane(3, 3, {{0, 0}, {1, 0}});
  const auto one = points_plane(3, 3, {{0, 0}});
  CHECK(hausdorff(two, one) == 1.0);
  CHECK(hausdorff(one, two) == 1.0);
  CHECK(hausdorff(two, two) == 0.0);

  // one side empty: the image diagonal stands in
  CHECK(hausdorff(BinaryPlane(3, 4), points_plane(3, 4, {{1, 1}})) == 5.0);
  CHECK(image_diagonal(3, 4) == 5.0);
  try {
    hausdorff(BinaryPlane(3, 3), BinaryPlane(3, 3));
    FAIL("expected EmptyBoth");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyBoth);
  }

  // metric axioms on random 16x16 planes
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    auto a = oracle::random_plane(16, 16, 0.08, rng), b = oracle::random_plane(16, 16, 0.08, rng),
         c = oracle::random_plane(16, 16, 0.08, rng);
    a.data[3] = b.data[100] = c.data[200] = 1;
    const double ab = hausdorff(a, b), ba = hausdorff(b, a), bc = hausdorff(b, c), ac = hausdorff(a, c);
    CHECK(ab == ba);
    CHECK(ab == doctest::Approx(oracle::hausdorff(a, b)).epsilon(1e-12));
    CHECK(ac <= ab + bc + 1e-12);
    CHECK(hausdorff(a, a) == 0.0);
  }
}

TEST_CASE("boundary mode compares contours") {
  BinaryPlane big(9, 9), small(9, 9);
  for (int r = 1; r <= 7; ++r)
    for (int c = 1; c <= 7; ++c) big.at(r, c) = 1;
  for (int r = 3; r <= 5; ++r)
    for (int c = 3; c <= 5; ++c) small.at(r, c) = 1;
  // regions: every small pixel is inside big, big's corner is far from small
  CHECK(hausdorff(big, small, HausdorffMode::Region) == doctest::Approx(std::hypot(2.0, 2.0)));
  // contours: big's centre is not on its contour, so the ring-to-ring distance applies
  CHECK(hausdorff(big, small, HausdorffMode::Boundary) == doctest::Approx(std::hypot(2.0, 2.0)));
  CHECK(hausdorff(big, big, HausdorffMode::Boundary) == 0.0);
  const auto dot = points_plane(9, 9, {{4, 4}});
  CHECK(hausdorff_one_sided(dot, big) == 0.0);
  // the ring corner is the far point either way
  CHECK(hausdorff(dot, big, HausdorffMode::Boundary) == doctest::Approx(std::hypot(3.0, 3.0)));
}

TEST_CASE("cup-to-disc ratio") {
  BinaryPlane disc(40, 40), cup(40, 40);
  for (int r = 10; r <= 29; ++r) disc.at(r, 20) = 1;
  for (int r = 15; r <= 24; ++r) cup.at(r, 20) = 1;
  CHECK(compute_cdr(disc, cup) == 0.5);
  CHECK(compute_cdr(disc, disc) == 1.0);
  CHECK(compute_cdr(disc, BinaryPlane(40, 40)) == 0.0);
  try {
    compute_cdr(BinaryPlane(40, 40), cup);
    FAIL("expected EmptyDisc");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyDisc);
  }
}

TEST_CASE("aggregate") {
  auto rec = [](double v) { return MetricsRecord{"x", {v, v, v, v, v}, {}}; };
  const std::vector<MetricsRecord> single{rec(0.7)};
  const auto s1 = aggregate(single);
  CHECK(s1.mean.dice_disc == 0.7);
  CHECK(s1.median.cdr == 0.7);

  const std::vector<MetricsRecord> three{rec(1), rec(2), rec(3)};
  CHECK(aggregate(three).mean.hausdorff_cup == 2.0);
  CHECK(aggregate(three).median.hausdorff_cup == 2.0);

  const std::vector<MetricsRecord> four{rec(1), rec(2), rec(3), rec(10)};
  CHECK(aggregate(four).mean.dice_cup == 4.0);
  CHECK(aggregate(four).median.dice_cup == 2.5);

  auto with_nan = four;
  with_nan[3].metrics.hausdorff_disc = std::numeric_limits<double>::quiet_NaN();
  const auto s = aggregate(with_nan);
  CHECK(s.mean.hausdorff_disc == 2.0);
  CHECK(s.counts[1] == 3);
  CHECK(s.counts[0] == 4);

  CHECK_THROWS_AS(aggregate(std::vector<MetricsRecord>{}), Error);
}

TEST_CASE("metrics csv round trip") {
  std::vector<MetricsRecord> recs{{"a", {0.9, 3.1622776601683795, 0.1 + 0.2, 0.0, 1.0 / 3.0}, {}},
                                  {"b", {1.0, std::numeric_limits<double>::quiet_NaN(), 0.5, 2.5, 0.25}, {}}};
  std::stringstream ss;
  write_metrics_csv(ss, recs);
  const auto text = ss.str();
  CHECK(text.rfind("image_id,dice_disc,hausdorff_disc,dice_cup,hausdorff_cup,cdr\n", 0) == 0);
  const auto back = read_metrics_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == "a");
  CHECK(back[0].metrics.dice_cup == 0.1 + 0.2);
  CHECK(back[0].metrics.cdr == 1.0 / 3.0);
  CHECK(std::isnan(back[1].metrics.hausdorff_disc));
  CHECK(format_number(0.5) == "0.5");
  CHECK(parse_number(format_number(0.1)) == 0.1);
}
