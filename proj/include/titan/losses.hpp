#pragma once

#include "titan/autodiff.hpp"
#include "titan/boxes.hpp"
#include "titan/matching.hpp"

namespace titan {

struct LossCoefs {
    double cls = 1.0;
    double bbox = 5.0;
    double giou = 2.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

/// Supervised detection loss and its terms. Each term is normalized by
/// max(1, number of ground truths).
struct DetectionLoss {
    ad::Var total;
    ad::Var cls;   // focal loss over every query and class
    ad::Var bbox;  // L1 over matched boxes
    ad::Var giou;  // 1 - GIoU over matched boxes
};

/// boxes [M x 4] and logits [M x K] must share a tape. Unmatched queries are
/// trained toward background on every class. Predicted boxes are clamped to
/// [0, 1] before GIoU.
DetectionLoss detection_loss(const ad::Var& boxes, const ad::Var& logits, const GroundTruth& gts,
                             const Assignment& matching, const LossCoefs& coefs = {});

/// Differentiable per-row GIoU between predicted boxes [G x 4] and constant
/// targets, returned as a [G x 1] column.
ad::Var giou_rows(const ad::Var& pred, const std::vector<Box>& targets);

}  // namespace titan
