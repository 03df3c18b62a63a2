// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "unipr/geometry.hpp"

namespace unipr::metrics {

/// Exact 3-D nearest neighbor on a fixed cloud.
class KdTree3 {
 public:
  explicit KdTree3(const geom::Points& pts);
  double nearest_dist(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    int axis = -1;       // -1: leaf
    double split = 0;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };
  int build(int begin, int end);
  void query(int node, const Eigen::Vector3d& q, double& best2) const;
  std::vector<Eigen::Vector3d> pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Symmetric mean nearest-neighbor distance (unsquared L2).
double chamfer_distance(const geom::Points& a, const geom::Points& b);

/// Harmonic mean of point precision/recall at distance threshold tau.
double f_score(const geom::Points& a, const geom::Points& b, double tau);

/// Mean absolute difference of max-normalized axis extents; both clouds must
/// already live in a common (GT object) frame.
double shape_proportion_error(const geom::Points& pred, const geom::Points& gt);

/// Closed-form sphere-sphere intersection over union.
double sphere_iou(const geom::SphereFrame& a, const geom::SphereFrame& b);

struct ScoredDetection {
  int scene = 0;
  int index = 0;  // insertion order, used for confidence ties
  double confidence = 0;
  geom::SphereFrame sphere;
};

struct GtSphere {
  int scene = 0;
  geom::SphereFrame sphere;
};

/// All-point interpolated AP; detections greedily matched per scene to the
/// highest-IoU unmatched GT at or above the threshold.
double average_precision(std::vector<ScoredDetection> preds, const std::vector<GtSphere>& gts,
                         double iou_threshold = 0.5);

/// One row per ground-truth object.
struct EvalRow {
  int scene = 0;
  int gt_index = 0;
  int pred_index = -1;  // -1: unmatched
  double confidence = 0;
  double iou = 0;
  double chamfer_norm = 0;  // unit-sphere frames (shape + orientation only)
  double chamfer_m = 0;     // camera frame, meters
  double fscore = 0;        // at tau = 0.1 normalized
  double spe = 0;
  double pos_err2 = 0;      // squared center error, m^2
};

struct EvalAggregates {
  double ap = 0;
  std::optional<double> ape_m2;          // mean squared center error over matches
  std::optional<double> ape_rmse_m;
  double acd_norm = 0;                   // penalty-filled mean chamfer, normalized units
  double acd_m = 0;                      // penalty-filled, meters (penalty 2x GT radius)
  std::optional<double> matched_chamfer_norm;
  std::optional<double> matched_chamfer_m;
  std::optional<double> cd_topk_norm;
  std::optional<double> fscore_mean;
  std::optional<double> spe_mean;
  int n_gt = 0;
  int n_matched = 0;
};

/// Deterministic fold over rows; `gt_radii` aligns with rows for the
/// meter-space penalty.
EvalAggregates aggregate_rows(const std::vector<EvalRow>& rows, const std::vector<double>& gt_radii,
                              double ap, double penalty_norm = 2.0, int top_k = 10);

}  // namespace unipr::metrics
