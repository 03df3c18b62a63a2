// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "unipr/det/detector.hpp"

namespace unipr::match {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, ground-truth index)
  std::vector<int> unmatched_predictions;  // ascending
};

struct LossWeights {
  double w_pos = 1.0;    // matching cost, per meter of L1 gap
  double w_scale = 1.0;
  double w_conf = 1.0;
  double lambda_shape = 0.5;
  double lambda_conf = 0.2;
  double unmatched_conf_weight = 0.1;
  bool match_with_shape = false;  // off by default; one switch away

  void validate() const;
};

struct GtObject {
  Eigen::Vector3d position;
  double scale = 0;
  pasr::LatentDistribution shape_dist;  // precomputed by the frozen VAE encoder
};

/// cost[i][j] = w_pos |pos_i - pos_j|_1 + w_scale |s_i - s_j| + w_conf (1 - conf_i)
/// (+ kl term when match_with_shape is set).
Eigen::MatrixXd matching_cost_matrix(const std::vector<det::ObjectPrediction>& preds,
                                     const std::vector<GtObject>& gts, const LossWeights& w);

/// Exact minimum-cost injective assignment of all K columns to M >= K rows;
/// among optima returns the lexicographically smallest pair list.
Assignment hungarian_assign(const Eigen::MatrixXd& cost);

/// Eq. as printed: (1/C_kl) sum 1/2 (((mu_h - mu)^2 + s_h^2)/s^2 - log s_h^2 + log s^2);
/// equals 0.5 at equality.
double kl_matched_loss(const pasr::LatentDistribution& pred, const pasr::LatentDistribution& gt);

struct DetectionLossBreakdown {
  double position = 0;
  double scale = 0;
  double shape = 0;          // raw mean matched KL (floor 0.5 when matched)
  double shape_minus_floor = 0;
  double confidence = 0;
  double total = 0;
};

struct DetectionLossRefs {
  nn::Ref total = nullptr;
  nn::Ref position = nullptr;
  nn::Ref scale = nullptr;
  nn::Ref shape = nullptr;
  nn::Ref confidence = nullptr;
  DetectionLossBreakdown values() const;
};

/// Differentiable loss over one scene. GT sigma^2 is clamped to >= 1e-6.
/// Handles empty GT (confidence-only supervision).
DetectionLossRefs detection_loss_graph(nn::Tape& tape, const det::ObjectDecoder::PredRefs& preds,
                                       const std::vector<GtObject>& gts,
                                       const Assignment& assignment, const LossWeights& w);

/// Value-level convenience used by tests and logging.
DetectionLossBreakdown detection_loss(const std::vector<det::ObjectPrediction>& preds,
                                      const std::vector<GtObject>& gts,
                                      const Assignment& assignment, const LossWeights& w);

}  // namespace unipr::match
