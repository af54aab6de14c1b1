#pragma once

#include <vector>

#include "titan/boxes.hpp"

namespace titan {

/// Dense cost matrix, rows = ground truths, cols = predictions.
using CostMatrix = std::vector<std::vector<double>>;

struct Assignment {
    std::vector<int> pred_for_gt;  // pred_for_gt[g] = matched prediction index
    double total_cost = 0.0;
};

/// Minimum-cost injective assignment of every row to a distinct column
/// (O(rows^2 * cols) shortest augmenting paths with potentials).
/// Throws std::invalid_argument when rows > cols or the matrix is ragged.
Assignment solve_assignment(const CostMatrix& cost);

struct MatchCosts {
    double cls = 2.0;
    double bbox = 5.0;
    double giou = 2.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

/// Weighted class + L1 + GIoU matching cost between each ground truth and
/// each prediction.
CostMatrix matching_cost(const DetectionSet& preds, const GroundTruth& gts, const MatchCosts& costs = {});

/// Hungarian matching of ground truths to predictions. Throws
/// std::invalid_argument when there are more ground truths than predictions.
Assignment hungarian_match(const DetectionSet& preds, const GroundTruth& gts, const MatchCosts& costs = {});

}  // namespace titan
