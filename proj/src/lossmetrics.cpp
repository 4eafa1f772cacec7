#include "edgeseg/lossmetrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "edgeseg/edgex.hpp"
#include "edgeseg/error.hpp"

namespace edgeseg {

// ---------------------------------------------------------------- focal loss

FocalConfig FocalConfig::defaults() {
  FocalConfig cfg;
  cfg.set_alpha(ChannelRole::Background, 0.1);
  cfg.set_alpha(ChannelRole::DiscRegion, 0.5);
  cfg.set_alpha(ChannelRole::CupRegion, 0.7);
  cfg.set_alpha(ChannelRole::DiscEdge, 0.8);
  cfg.set_alpha(ChannelRole::CupEdge, 0.9);
  return cfg;
}

double FocalConfig::alpha_for(ChannelRole role) const {
  const auto& a = alpha[static_cast<std::size_t>(role)];
  if (!a) throw Error(ErrorKind::MissingAlpha, "no alpha for role " + std::string(role_name(role)));
  return *a;
}

void FocalConfig::set_alpha(ChannelRole role, double value) { alpha[static_cast<std::size_t>(role)] = value; }

void FocalConfig::validate() const {
  if (!(gamma >= 0.0)) throw Error(ErrorKind::ConfigError, "focal gamma must be >= 0");
  for (const auto& a : alpha)
    if (a && !(*a > 0.0 && *a < 1.0)) throw Error(ErrorKind::ConfigError, "focal alpha must lie in (0,1)");
}

namespace {

std::vector<double> alphas_for(const std::vector<ChannelRole>& roles, const FocalConfig& cfg) {
  std::vector<double> out;
  out.reserve(roles.size());
  for (auto r : roles) out.push_back(cfg.alpha_for(r));
  return out;
}

void check_layout(std::size_t pred, std::size_t target, std::size_t channels, std::size_t inner) {
  if (pred != target) throw Error(ErrorKind::ShapeMismatch, "prediction and target sizes differ");
  if (channels == 0 || inner == 0 || pred % (channels * inner) != 0)
    throw Error(ErrorKind::ShapeMismatch, "element count is not a multiple of channels x inner");
}

struct FocalTerm {
  double value;
  double slope;  // d value / d prediction, evaluated at the clamped prediction
};

// Positive and negative parts of the binary focal term at one element.
FocalTerm focal_term(double pred, double y, double alpha, double gamma) {
  const double p = std::clamp(pred, kProbClamp, 1.0 - kProbClamp);
  const double q = 1.0 - p;
  const double log_p = std::log(p);
  const double log_q = std::log(q);
  const double q_g = std::pow(q, gamma);
  const double p_g = std::pow(p, gamma);
  // gamma * x^(gamma-1), with the gamma = 0 limit taken as 0.
  const double dq_g = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
  const double dp_g = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);

  const double value = -alpha * y * q_g * log_p - (1.0 - y) * p_g * log_q;
  const double slope = -alpha * y * (q_g / p - dq_g * log_p) + (1.0 - y) * (p_g / q - dp_g * log_q);
  return {value, slope};
}

}  // namespace

template <typename T>
double focal_loss_raw(std::span<const T> pred, std::span<const T> target, const std::vector<ChannelRole>& roles,
                      std::size_t inner, const FocalConfig& cfg) {
  check_layout(pred.size(), target.size(), roles.size(), inner);
  const auto alpha = alphas_for(roles, cfg);
  const std::size_t c = roles.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    sum += focal_term(pred[i], target[i], alpha[(i / inner) % c], cfg.gamma).value;
  return sum / static_cast<double>(pred.size());
}

template <typename T>
double focal_loss_grad_raw(std::span<const T> pred, std::span<const T> target,
                           const std::vector<ChannelRole>& roles, std::size_t inner, const FocalConfig& cfg,
                           std::span<T> grad_out) {
  check_layout(pred.size(), target.size(), roles.size(), inner);
  if (grad_out.size() != pred.size()) throw Error(ErrorKind::ShapeMismatch, "gradient buffer size differs");
  const auto alpha = alphas_for(roles, cfg);
  const std::size_t c = roles.size();
  const double scale = 1.0 / static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto term = focal_term(pred[i], target[i], alpha[(i / inner) % c], cfg.gamma);
    sum += term.value;
    grad_out[i] = static_cast<T>(term.slope * scale);
  }
  return sum * scale;
}

template double focal_loss_raw<float>(std::span<const float>, std::span<const float>,
                                      const std::vector<ChannelRole>&, std::size_t, const FocalConfig&);
template double focal_loss_raw<double>(std::span<const double>, std::span<const double>,
                                       const std::vector<ChannelRole>&, std::size_t, const FocalConfig&);
template double focal_loss_grad_raw<float>(std::span<const float>, std::span<const float>,
                                           const std::vector<ChannelRole>&, std::size_t, const FocalConfig&,
                                           std::span<float>);
template double focal_loss_grad_raw<double>(std::span<const double>, std::span<const double>,
                                            const std::vector<ChannelRole>&, std::size_t, const FocalConfig&,
                                            std::span<double>);

namespace {

void check_stacks(const ChannelStack& pred, const ChannelStack& target) {
  if (pred.height() != target.height() || pred.width() != target.width() || pred.roles() != target.roles())
    throw Error(ErrorKind::ShapeMismatch, "prediction and target stacks differ in shape or roles");
}

}  // namespace

double focal_loss(const ChannelStack& pred, const ChannelStack& target, const FocalConfig& cfg) {
  check_stacks(pred, target);
  return focal_loss_raw(pred.data(), target.data(), pred.roles(), 1, cfg);
}

StackGradient focal_loss_grad(const ChannelStack& pred, const ChannelStack& target, const FocalConfig& cfg) {
  check_stacks(pred, target);
  // Evaluate in double so the gradient is not limited by float storage.
  std::vector<double> p(pred.data().begin(), pred.data().end());
  std::vector<double> y(target.data().begin(), target.data().end());
  StackGradient out{pred.height(), pred.width(), pred.roles(), std::vector<double>(p.size())};
  focal_loss_grad_raw<double>(p, y, pred.roles(), 1, cfg, out.data);
  return out;
}

// ---------------------------------------------------------------- dice

namespace {

void check_planes(const BinaryPlane& a, const BinaryPlane& b) {
  if (a.height != b.height || a.width != b.width)
    throw Error(ErrorKind::ShapeMismatch, "planes differ in shape");
}

}  // namespace

double dice_score(const BinaryPlane& pred, const BinaryPlane& target) {
  check_planes(pred, target);
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool t = target.data[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const std::size_t denom = (tp + fp) + (tp + fn);
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// ---------------------------------------------------------------- Hausdorff

std::vector<Point> foreground_points(const BinaryPlane& plane) {
  std::vector<Point> pts;
  for (int r = 0; r < plane.height; ++r)
    for (int c = 0; c < plane.width; ++c)
      if (plane.at(r, c)) pts.push_back({r, c});
  return pts;
}

double hausdorff_one_sided(std::span<const Point> from, std::span<const Point> to) {
  if (from.empty() || to.empty()) throw Error(ErrorKind::EmptySet, "Hausdorff distance of an empty point set");
  // Early-break scan: a source point cannot raise the maximum once some target
  // is closer than the current maximum.
  std::int64_t worst = 0;
  for (const auto& x : from) {
    std::int64_t nearest = std::numeric_limits<std::int64_t>::max();
    for (const auto& y : to) {
      const std::int64_t dr = x.row - y.row;
      const std::int64_t dc = x.col - y.col;
      nearest = std::min(nearest, dr * dr + dc * dc);
      if (nearest <= worst) break;
    }
    worst = std::max(worst, nearest);
  }
  return std::sqrt(static_cast<double>(worst));
}

namespace {

constexpr double kFar = 1e20;

// One-dimensional squared distance transform (lower envelope of parabolas).
void distance_transform_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int p) {
    return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from every pixel to the nearest foreground pixel.
std::vector<double> squared_distance_map(const BinaryPlane& plane) {
  const int h = plane.height;
  const int w = plane.width;
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = plane.data[i] ? 0.0 : kFar;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> f(std::max(h, w));
  std::vector<double> d(std::max(h, w));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[r] = grid[static_cast<std::size_t>(r) * w + c];
    distance_transform_1d(f.data(), d.data(), h, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[r];
  }
  for (int r = 0; r < h; ++r) {
    double* row = grid.data() + static_cast<std::size_t>(r) * w;
    std::copy(row, row + w, f.begin());
    distance_transform_1d(f.data(), row, w, v, z);
  }
  return grid;
}

}  // namespace

double hausdorff_one_sided(const BinaryPlane& from, const BinaryPlane& to) {
  check_planes(from, to);
  if (from.empty_foreground() || to.empty_foreground())
    throw Error(ErrorKind::EmptySet, "Hausdorff distance of an empty plane");
  const auto dist = squared_distance_map(to);
  double worst = 0.0;
  for (std::size_t i = 0; i < from.data.size(); ++i)
    if (from.data[i]) worst = std::max(worst, dist[i]);
  return std::sqrt(worst);
}

double image_diagonal(int height, int width) {
  return std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
}

double hausdorff(const BinaryPlane& x, const BinaryPlane& y, HausdorffMode mode) {
  check_planes(x, y);
  const bool x_empty = x.empty_foreground();
  const bool y_empty = y.empty_foreground();
  if (x_empty && y_empty) throw Error(ErrorKind::EmptyBoth, "both planes are empty");
  if (x_empty || y_empty) return image_diagonal(x.height, x.width);
  if (mode == HausdorffMode::Boundary) {
    const auto xe = extract_edges(x);
    const auto ye = extract_edges(y);
    return std::max(hausdorff_one_sided(xe, ye), hausdorff_one_sided(ye, xe));
  }
  return std::max(hausdorff_one_sided(x, y), hausdorff_one_sided(y, x));
}

// ---------------------------------------------------------------- CDR

namespace {

int vertical_span(const BinaryPlane& plane) {
  int top = -1;
  int bottom = -1;
  for (int r = 0; r < plane.height; ++r) {
    for (int c = 0; c < plane.width; ++c) {
      if (plane.at(r, c)) {
        if (top < 0) top = r;
        bottom = r;
        break;
      }
    }
  }
  return top < 0 ? 0 : bottom - top + 1;
}

}  // namespace

double compute_cdr(const BinaryPlane& disc, const BinaryPlane& cup) {
  check_planes(disc, cup);
  const int disc_span = vertical_span(disc);
  if (disc_span == 0) throw Error(ErrorKind::EmptyDisc, "cup-to-disc ratio needs a non-empty disc");
  return static_cast<double>(vertical_span(cup)) / disc_span;
}

// ---------------------------------------------------------------- aggregation

double mean_of(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::EmptyList, "mean of no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::EmptyList, "median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MetricsSummary aggregate(std::span<const MetricsRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyList, "no metrics records to aggregate");
  MetricsSummary out;
  std::array<double, 5> mean{};
  std::array<double, 5> median{};
  for (std::size_t col = 0; col < 5; ++col) {
    std::vector<double> column;
    for (const auto& r : records) {
      double v = r.metrics.values()[col];
      if (std::isfinite(v)) column.push_back(v);
    }
    out.counts[col] = column.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    mean[col] = column.empty() ? nan : mean_of(column);
    median[col] = column.empty() ? nan : median_of(column);
  }
  out.mean = MetricsRow::from_values(mean);
  out.median = MetricsRow::from_values(median);
  return out;
}

// ---------------------------------------------------------------- CSV

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_number(const std::string& text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorKind::Io, "cannot parse number '" + text + "'");
  return v;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << "image_id";
  for (auto* col : MetricsRow::kColumns) out << ',' << col;
  out << '\n';
  for (const auto& r : records) {
    out << r.image_id;
    for (double v : r.metrics.values()) out << ',' << format_number(v);
    out << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "image_id,dice_disc,hausdorff_disc,dice_cup,hausdorff_cup,cdr")
    throw Error(ErrorKind::Io, "unexpected metrics CSV header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MetricsRecord rec;
    std::getline(ss, rec.image_id, ',');
    std::array<double, 5> v{};
    for (auto& x : v) {
      if (!std::getline(ss, field, ',')) throw Error(ErrorKind::Io, "short metrics CSV row");
      x = parse_number(field);
    }
    rec.metrics = MetricsRow::from_values(v);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace edgeseg
