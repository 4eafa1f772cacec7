#pragma once

// Class-weighted focal loss, overlap and distance metrics, cup-to-disc ratio.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

// ---------------------------------------------------------------- focal loss

/// Predictions are clamped to [kProbClamp, 1 - kProbClamp] before taking logs.
inline constexpr double kProbClamp = 1e-7;

struct FocalConfig {
  double gamma = 2.0;
  /// Indexed by ChannelRole; unset roles raise MissingAlpha when used.
  std::array<std::optional<double>, 5> alpha{};

  /// gamma 2; CupEdge 0.9, DiscEdge 0.8, CupRegion 0.7, DiscRegion 0.5, Background 0.1.
  static FocalConfig defaults();
  double alpha_for(ChannelRole role) const;
  void set_alpha(ChannelRole role, double value);
  void validate() const;
};

/// Gradient of the focal loss with respect to each prediction value; same
/// layout as the stack it was computed from. Unbounded, so not a ChannelStack.
struct StackGradient {
  int height = 0;
  int width = 0;
  std::vector<ChannelRole> roles;
  std::vector<double> data;
};

/// Mean over pixels and channels of
///   -a y (1-p)^g log p - (1-y) p^g log(1-p),  a = alpha of the channel's role.
double focal_loss(const ChannelStack& pred, const ChannelStack& target, const FocalConfig& cfg);
StackGradient focal_loss_grad(const ChannelStack& pred, const ChannelStack& target, const FocalConfig& cfg);

/// Layout-agnostic kernels. Element i belongs to channel (i / inner) % roles.size():
/// inner = 1 for channel-last stacks, inner = H*W for NCHW tensors. The mean is
/// taken over all elements.
template <typename T>
double focal_loss_raw(std::span<const T> pred, std::span<const T> target, const std::vector<ChannelRole>& roles,
                      std::size_t inner, const FocalConfig& cfg);
template <typename T>
double focal_loss_grad_raw(std::span<const T> pred, std::span<const T> target,
                           const std::vector<ChannelRole>& roles, std::size_t inner, const FocalConfig& cfg,
                           std::span<T> grad_out);

// ---------------------------------------------------------------- dice

/// 2 TP / ((TP + FP) + (TP + FN)); 1.0 when both planes are empty.
double dice_score(const BinaryPlane& pred, const BinaryPlane& target);

// ---------------------------------------------------------------- Hausdorff

struct Point {
  int row = 0;
  int col = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

std::vector<Point> foreground_points(const BinaryPlane& plane);

/// max over x in X of min over y in Y of |x - y|. Throws EmptySet.
double hausdorff_one_sided(std::span<const Point> from, std::span<const Point> to);

enum class HausdorffMode { Region, Boundary };

/// Exact directed distance over plane foregrounds via a Euclidean distance
/// transform of `to`. Both planes must be non-empty.
double hausdorff_one_sided(const BinaryPlane& from, const BinaryPlane& to);

/// Symmetric max(H(X,Y), H(Y,X)). When exactly one plane is empty returns the
/// image diagonal; both empty throws EmptyBoth. Boundary mode compares the
/// planes' Laplacian edges instead of their full regions.
double hausdorff(const BinaryPlane& x, const BinaryPlane& y, HausdorffMode mode = HausdorffMode::Region);

double image_diagonal(int height, int width);

// ---------------------------------------------------------------- CDR

/// Vertical cup diameter / vertical disc diameter (row span of the foreground).
/// Throws EmptyDisc; 0 for an empty cup.
double compute_cdr(const BinaryPlane& disc, const BinaryPlane& cup);

// ---------------------------------------------------------------- records

struct MetricsRow {
  double dice_disc = 0.0;
  double hausdorff_disc = 0.0;
  double dice_cup = 0.0;
  double hausdorff_cup = 0.0;
  double cdr = 0.0;

  static constexpr std::array<const char*, 5> kColumns{"dice_disc", "hausdorff_disc", "dice_cup",
                                                       "hausdorff_cup", "cdr"};
  std::array<double, 5> values() const { return {dice_disc, hausdorff_disc, dice_cup, hausdorff_cup, cdr}; }
  static MetricsRow from_values(const std::array<double, 5>& v) { return {v[0], v[1], v[2], v[3], v[4]}; }
};

/// Per-image scores. A metric that could not be computed is NaN and named in `flags`.
struct MetricsRecord {
  std::string image_id;
  MetricsRow metrics;
  std::vector<std::string> flags;
};

struct MetricsSummary {
  MetricsRow mean;
  MetricsRow median;
  /// Number of finite values that entered each column.
  std::array<std::size_t, 5> counts{};
};

/// Mean and median per column; NaN entries are skipped. Throws EmptyList.
MetricsSummary aggregate(std::span<const MetricsRecord> records);

double mean_of(std::vector<double> values);
/// Average of the two central values for an even count.
double median_of(std::vector<double> values);

/// Shortest decimal text that parses back to the same double; "nan" for NaN.
std::string format_number(double v);
double parse_number(const std::string& text);

/// Header: image_id,dice_disc,hausdorff_disc,dice_cup,hausdorff_cup,cdr
void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_metrics_csv(std::istream& in);

}  // namespace edgeseg
