// SPDX-License-Identifier: Apache-2.0
#include "unipr/match/matching.hpp"

#include <cmath>
#include <limits>

namespace unipr::match {

using namespace unipr::nn;

void LossWeights::validate() const {
  if (w_pos < 0 || w_scale < 0 || w_conf < 0 || lambda_shape < 0 || lambda_conf < 0 ||
      unmatched_conf_weight < 0)
    throw std::invalid_argument("LossWeights: weights must be non-negative");
}

Eigen::MatrixXd matching_cost_matrix(const std::vector<det::ObjectPrediction>& preds,
                                     const std::vector<GtObject>& gts, const LossWeights& w) {
  w.validate();
  if (gts.empty()) throw std::invalid_argument("matching_cost_matrix: need at least one GT");
  Eigen::MatrixXd cost(preds.size(), gts.size());
  for (size_t i = 0; i < preds.size(); ++i)
    for (size_t j = 0; j < gts.size(); ++j) {
      double c = w.w_pos * (preds[i].position - gts[j].position).cwiseAbs().sum() +
                 w.w_scale * std::abs(preds[i].scale - gts[j].scale) +
                 w.w_conf * (1.0 - preds[i].confidence);
      if (w.match_with_shape) c += kl_matched_loss(preds[i].shape_dist, gts[j].shape_dist);
      if (!std::isfinite(c)) throw std::invalid_argument("matching_cost_matrix: non-finite cost");
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
    }
  return cost;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// potentials method on a K x M matrix (rows = GTs <= columns = preds);
// returns (total cost, per-column row assignment with -1 for unassigned)
std::pair<double, std::vector<int>> solve_assignment(const Eigen::MatrixXd& cost_km) {
  const int n = static_cast<int>(cost_km.rows());   // GTs
  const int m = static_cast<int>(cost_km.cols());   // preds
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost_km(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  std::vector<int> row_of_col(m, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) {
      row_of_col[j - 1] = p[j] - 1;
      total += cost_km(p[j] - 1, j - 1);
    }
  return {total, row_of_col};
}

// optimal total with some (pred, gt) pairs already fixed
double optimal_with_fixed(const Eigen::MatrixXd& cost, const std::vector<char>& pred_used,
                          const std::vector<char>& gt_used, double fixed_cost) {
  const int m = static_cast<int>(cost.rows()), k = static_cast<int>(cost.cols());
  std::vector<int> free_preds, free_gts;
  for (int i = 0; i < m; ++i)
    if (!pred_used[i]) free_preds.push_back(i);
  for (int j = 0; j < k; ++j)
    if (!gt_used[j]) free_gts.push_back(j);
  if (free_gts.empty()) return fixed_cost;
  Eigen::MatrixXd sub(free_gts.size(), free_preds.size());
  for (size_t a = 0; a < free_gts.size(); ++a)
    for (size_t b = 0; b < free_preds.size(); ++b) sub(a, b) = cost(free_preds[b], free_gts[a]);
  return fixed_cost + solve_assignment(sub).first;
}

}  // namespace

Assignment hungarian_assign(const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(cost.rows());  // predictions
  const int k = static_cast<int>(cost.cols());  // ground truth
  if (k < 1) throw std::invalid_argument("hungarian_assign: empty cost matrix");
  if (m < k) throw std::invalid_argument("hungarian_assign: more ground truth than predictions");

  Eigen::MatrixXd km = cost.transpose();
  const double opt = solve_assignment(km).first;
  const double tol = 1e-9 * (1.0 + std::abs(opt));

  // lexicographically smallest optimal pair list via greedy refixing
  Assignment out;
  std::vector<char> pred_used(m, 0), gt_used(k, 0);
  double fixed_cost = 0;
  int fixed = 0;
  for (int i = 0; i < m && fixed < k; ++i) {
    if (pred_used[i]) continue;
    for (int j = 0; j < k; ++j) {
      if (gt_used[j]) continue;
      pred_used[i] = 1;
      gt_used[j] = 1;
      const double total = optimal_with_fixed(cost, pred_used, gt_used, fixed_cost + cost(i, j));
      if (total <= opt + tol) {
        out.pairs.emplace_back(i, j);
        fixed_cost += cost(i, j);
        ++fixed;
        break;  // prediction i is committed
      }
      pred_used[i] = 0;
      gt_used[j] = 0;
    }
  }
  for (int i = 0; i < m; ++i)
    if (!pred_used[i]) out.unmatched_predictions.push_back(i);
  return out;
}

double kl_matched_loss(const pasr::LatentDistribution& pred, const pasr::LatentDistribution& gt) {
  if (pred.mu.size() != gt.mu.size()) throw std::invalid_argument("kl_matched_loss: width mismatch");
  const size_t n = pred.mu.size();
  double sum = 0;
  for (size_t j = 0; j < n; ++j) {
    const double s2_pred = std::exp(pred.logvar[j]);
    const double s2_gt = std::max(std::exp(gt.logvar[j]), 1e-6);
    const double dmu = pred.mu[j] - gt.mu[j];
    sum += 0.5 * ((dmu * dmu + s2_pred) / s2_gt - pred.logvar[j] + std::log(s2_gt));
  }
  return sum / static_cast<double>(n);
}

DetectionLossBreakdown DetectionLossRefs::values() const {
  DetectionLossBreakdown b;
  b.position = position->value[0];
  b.scale = scale->value[0];
  b.shape = shape->value[0];
  b.shape_minus_floor = b.shape > 0 ? b.shape - 0.5 : 0.0;
  b.confidence = confidence->value[0];
  b.total = total->value[0];
  return b;
}

DetectionLossRefs detection_loss_graph(Tape& tape, const det::ObjectDecoder::PredRefs& preds,
                                       const std::vector<GtObject>& gts,
                                       const Assignment& assignment, const LossWeights& w) {
  w.validate();
  const int m = preds.position->value.dim(0);
  const int c_kl = preds.mu->value.dim(1);
  if (assignment.pairs.size() != gts.size() && !gts.empty())
    throw std::invalid_argument("detection_loss: assignment does not cover every GT");

  DetectionLossRefs out;
  const int k = static_cast<int>(assignment.pairs.size());
  if (k > 0) {
    std::vector<int> rows;
    Tensor gt_pos({k, 3}), gt_scale({k, 1}), gt_mu({k, c_kl});
    Tensor gt_inv_s2({k, c_kl}), gt_log_s2({k, c_kl});
    for (int a = 0; a < k; ++a) {
      const auto [pi, gj] = assignment.pairs[a];
      if (pi < 0 || pi >= m || gj < 0 || gj >= static_cast<int>(gts.size()))
        throw std::out_of_range("detection_loss: assignment index");
      rows.push_back(pi);
      const GtObject& g = gts[gj];
      for (int c = 0; c < 3; ++c) gt_pos[a * 3 + c] = g.position[c];
      gt_scale[a] = g.scale;
      if (static_cast<int>(g.shape_dist.mu.size()) != c_kl)
        throw std::invalid_argument("detection_loss: GT latent width mismatch");
      for (int c = 0; c < c_kl; ++c) {
        const double s2 = std::max(std::exp(g.shape_dist.logvar[c]), 1e-6);
        gt_mu[a * c_kl + c] = g.shape_dist.mu[c];
        gt_inv_s2[a * c_kl + c] = 1.0 / s2;
        gt_log_s2[a * c_kl + c] = std::log(s2);
      }
    }
    Ref pos_m = gather_rows(preds.position, rows);
    Ref scale_m = gather_rows(preds.scale, rows);
    Ref mu_m = gather_rows(preds.mu, rows);
    Ref logvar_m = gather_rows(preds.logvar, rows);
    out.position = scale(sum_all(abs_op(sub(pos_m, tape.constant(gt_pos)))), 1.0 / k);
    out.scale = scale(sum_all(abs_op(sub(scale_m, tape.constant(gt_scale)))), 1.0 / k);
    Ref dmu2 = square(sub(mu_m, tape.constant(gt_mu)));
    Ref ratio = mul(add(dmu2, exp_op(logvar_m)), tape.constant(gt_inv_s2));
    Ref term = add(sub(ratio, logvar_m), tape.constant(gt_log_s2));
    out.shape = scale(mean_all(term), 0.5);
  } else {
    out.position = tape.leaf(Tensor::scalar(0.0), false);
    out.scale = tape.leaf(Tensor::scalar(0.0), false);
    out.shape = tape.leaf(Tensor::scalar(0.0), false);
  }

  // confidence: weighted BCE over all M queries; matched -> 1, unmatched -> 0
  Tensor target({m, 1}), weight({m, 1});
  for (int i = 0; i < m; ++i) weight[i] = w.unmatched_conf_weight;
  for (const auto& [pi, gj] : assignment.pairs) {
    target[pi] = 1.0;
    weight[pi] = 1.0;
  }
  double weight_sum = 0;
  for (int i = 0; i < m; ++i) weight_sum += weight[i];
  Tensor wpos({m, 1}), wneg({m, 1});
  for (int i = 0; i < m; ++i) {
    wpos[i] = weight[i] * target[i];
    wneg[i] = weight[i] * (1.0 - target[i]);
  }
  Ref conf = clamp(preds.confidence, 1e-7, 1.0 - 1e-7);
  Ref bce = add(mul(log_op(conf), tape.constant(wpos)),
                mul(log_op(add_scalar(neg(conf), 1.0)), tape.constant(wneg)));
  out.confidence = scale(sum_all(bce), -1.0 / weight_sum);

  out.total = add(add(out.position, out.scale),
                  add(scale(out.shape, w.lambda_shape), scale(out.confidence, w.lambda_conf)));
  return out;
}

DetectionLossBreakdown detection_loss(const std::vector<det::ObjectPrediction>& preds,
                                      const std::vector<GtObject>& gts,
                                      const Assignment& assignment, const LossWeights& w) {
  if (preds.empty()) throw std::invalid_argument("detection_loss: no predictions");
  const int m = static_cast<int>(preds.size());
  const int c_kl = static_cast<int>(preds[0].shape_dist.mu.size());
  Tape tape(/*grad_enabled=*/false);
  det::ObjectDecoder::PredRefs refs;
  Tensor pos({m, 3}), sc({m, 1}), mu({m, c_kl}), logvar({m, c_kl}), conf({m, 1});
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < 3; ++c) pos[i * 3 + c] = preds[i].position[c];
    sc[i] = preds[i].scale;
    conf[i] = preds[i].confidence;
    for (int c = 0; c < c_kl; ++c) {
      mu[i * c_kl + c] = preds[i].shape_dist.mu[c];
      logvar[i * c_kl + c] = preds[i].shape_dist.logvar[c];
    }
  }
  refs.position = tape.constant(pos);
  refs.scale = tape.constant(sc);
  refs.mu = tape.constant(mu);
  refs.logvar = tape.constant(logvar);
  refs.confidence = tape.constant(conf);
  return detection_loss_graph(tape, refs, gts, assignment, w).values();
}

}  // namespace unipr::match
