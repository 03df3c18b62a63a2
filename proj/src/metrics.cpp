// SPDX-License-Identifier: Apache-2.0
#include "unipr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace unipr::metrics {

KdTree3::KdTree3(const geom::Points& pts) {
  if (pts.rows() < 1) throw std::invalid_argument("KdTree3: empty point set");
  pts_.resize(pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i) pts_[i] = pts.row(i).transpose();
  nodes_.reserve(2 * pts_.size() / 8 + 4);
  root_ = build(0, static_cast<int>(pts_.size()));
}

int KdTree3::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Node n;
  n.begin = begin;
  n.end = end;
  if (end - begin <= 8) {
    nodes_[id] = n;
    return id;
  }
  Eigen::Vector3d lo = pts_[begin], hi = pts_[begin];
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(pts_[i]);
    hi = hi.cwiseMax(pts_[i]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(pts_.begin() + begin, pts_.begin() + mid, pts_.begin() + end,
                   [axis](const auto& a, const auto& b) { return a[axis] < b[axis]; });
  n.axis = axis;
  n.split = pts_[mid][axis];
  n.left = build(begin, mid);
  n.right = build(mid, end);
  nodes_[id] = n;
  return id;
}

void KdTree3::query(int node, const Eigen::Vector3d& q, double& best2) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) best2 = std::min(best2, (pts_[i] - q).squaredNorm());
    return;
  }
  const double delta = q[n.axis] - n.split;
  const int first = delta < 0 ? n.left : n.right;
  const int second = delta < 0 ? n.right : n.left;
  query(first, q, best2);
  if (delta * delta < best2) query(second, q, best2);
}

double KdTree3::nearest_dist(const Eigen::Vector3d& q) const {
  double best2 = std::numeric_limits<double>::infinity();
  query(root_, q, best2);
  return std::sqrt(best2);
}

double chamfer_distance(const geom::Points& a, const geom::Points& b) {
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("chamfer_distance: empty point set");
  KdTree3 ta(a), tb(b);
  double ab = 0, ba = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) ab += tb.nearest_dist(a.row(i).transpose());
  for (Eigen::Index i = 0; i < b.rows(); ++i) ba += ta.nearest_dist(b.row(i).transpose());
  return 0.5 * (ab / a.rows() + ba / b.rows());
}

double f_score(const geom::Points& a, const geom::Points& b, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("f_score: tau must be positive");
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("f_score: empty point set");
  KdTree3 ta(a), tb(b);
  int64_t hit_a = 0, hit_b = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (tb.nearest_dist(a.row(i).transpose()) <= tau) ++hit_a;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    if (ta.nearest_dist(b.row(i).transpose()) <= tau) ++hit_b;
  const double precision = static_cast<double>(hit_a) / a.rows();
  const double recall = static_cast<double>(hit_b) / b.rows();
  if (precision + recall == 0) return 0;
  return 2 * precision * recall / (precision + recall);
}

namespace {

Eigen::Vector3d extents(const geom::Points& p) {
  return (p.colwise().maxCoeff() - p.colwise().minCoeff()).transpose();
}

}  // namespace

double shape_proportion_error(const geom::Points& pred, const geom::Points& gt) {
  if (pred.rows() < 2 || gt.rows() < 2)
    throw std::invalid_argument("shape_proportion_error: need at least 2 points per set");
  const Eigen::Vector3d ep = extents(pred), eg = extents(gt);
  if (!(ep.maxCoeff() > 0) || !(eg.maxCoeff() > 0))
    throw std::invalid_argument("shape_proportion_error: degenerate extent");
  const Eigen::Vector3d pp = ep / ep.maxCoeff(), pg = eg / eg.maxCoeff();
  return (pp - pg).cwiseAbs().mean();
}

double sphere_iou(const geom::SphereFrame& a, const geom::SphereFrame& b) {
  a.validate();
  b.validate();
  const double d = (a.center - b.center).norm();
  const double ra = a.radius, rb = b.radius;
  const double va = 4.0 / 3.0 * M_PI * ra * ra * ra;
  const double vb = 4.0 / 3.0 * M_PI * rb * rb * rb;
  double inter;
  if (d >= ra + rb) {
    inter = 0;
  } else if (d <= std::abs(ra - rb)) {
    inter = std::min(va, vb);
  } else {
    // lens volume of two overlapping spheres
    inter = M_PI * (ra + rb - d) * (ra + rb - d) *
            (d * d + 2 * d * (ra + rb) - 3 * (ra - rb) * (ra - rb)) / (12 * d);
  }
  return inter / (va + vb - inter);
}

double average_precision(std::vector<ScoredDetection> preds, const std::vector<GtSphere>& gts,
                         double iou_threshold) {
  if (gts.empty()) return preds.empty() ? 1.0 : 0.0;
  std::stable_sort(preds.begin(), preds.end(), [](const auto& x, const auto& y) {
    if (x.confidence != y.confidence) return x.confidence > y.confidence;
    return x.index < y.index;
  });
  std::vector<bool> gt_used(gts.size(), false);
  std::vector<int> tp_flags;
  tp_flags.reserve(preds.size());
  for (const auto& p : preds) {
    int best = -1;
    double best_iou = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].scene != p.scene) continue;
      const double iou = sphere_iou(p.sphere, gts[g].sphere);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      gt_used[best] = true;
      tp_flags.push_back(1);
    } else {
      tp_flags.push_back(0);
    }
  }
  // all-point interpolation: area under the precision envelope
  const double n_gt = static_cast<double>(gts.size());
  std::vector<double> precision(tp_flags.size()), recall(tp_flags.size());
  int tp = 0;
  for (size_t i = 0; i < tp_flags.size(); ++i) {
    tp += tp_flags[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = tp / n_gt;
  }
  double ap = 0, prev_recall = 0, run_max = 0;
  // envelope: sweep from the end keeping the running max precision
  std::vector<double> envelope(precision.size());
  for (size_t i = precision.size(); i-- > 0;) {
    run_max = std::max(run_max, precision[i]);
    envelope[i] = run_max;
  }
  for (size_t i = 0; i < precision.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

EvalAggregates aggregate_rows(const std::vector<EvalRow>& rows, const std::vector<double>& gt_radii,
                              double ap, double penalty_norm, int top_k) {
  if (rows.size() != gt_radii.size())
    throw std::invalid_argument("aggregate_rows: radii size mismatch");
  EvalAggregates agg;
  agg.ap = ap;
  agg.n_gt = static_cast<int>(rows.size());
  double pos2 = 0, cn = 0, cm = 0, fs = 0, spe = 0, acd_n = 0, acd_m = 0;
  std::vector<double> matched_cn;
  for (size_t i = 0; i < rows.size(); ++i) {
    const EvalRow& r = rows[i];
    if (r.pred_index >= 0) {
      ++agg.n_matched;
      pos2 += r.pos_err2;
      cn += r.chamfer_norm;
      cm += r.chamfer_m;
      fs += r.fscore;
      spe += r.spe;
      acd_n += r.chamfer_norm;
      acd_m += r.chamfer_m;
      matched_cn.push_back(r.chamfer_norm);
    } else {
      acd_n += penalty_norm;
      acd_m += 2.0 * gt_radii[i];
    }
  }
  if (agg.n_gt > 0) {
    agg.acd_norm = acd_n / agg.n_gt;
    agg.acd_m = acd_m / agg.n_gt;
  }
  if (agg.n_matched > 0) {
    agg.ape_m2 = pos2 / agg.n_matched;
    agg.ape_rmse_m = std::sqrt(*agg.ape_m2);
    agg.matched_chamfer_norm = cn / agg.n_matched;
    agg.matched_chamfer_m = cm / agg.n_matched;
    agg.fscore_mean = fs / agg.n_matched;
    agg.spe_mean = spe / agg.n_matched;
    std::sort(matched_cn.begin(), matched_cn.end());
    const int k = std::min<int>(top_k, static_cast<int>(matched_cn.size()));
    agg.cd_topk_norm = std::accumulate(matched_cn.begin(), matched_cn.begin() + k, 0.0) / k;
  }
  return agg;
}

}  // namespace unipr::metrics
