#pragma once

// Detection metrics. Every function here is pure and independent of the order
// in which images' predictions are listed: ties in score are broken by box
// coordinates and label, never by input position.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "titan/boxes.hpp"

namespace titan {

/// Strict weak order used everywhere predictions are ranked: score
/// descending, then box coordinates and label ascending.
bool ranks_before(const ScoredBox& a, const ScoredBox& b);

/// Greedy per-class suppression: a box is dropped when its IoU with a kept box
/// of the same label exceeds iou_threshold.
std::vector<ScoredBox> nms(std::vector<ScoredBox> dets, double iou_threshold = 0.1);

struct APResult {
    std::map<int, double> per_class;  // only classes with ground truth
    double mean_ap = 0.0;
};

/// All-point interpolated AP per class. Predictions are visited in rank order
/// and each claims the unmatched same-class ground truth of highest IoU, if
/// that IoU reaches iou_threshold.
APResult average_precision(std::span<const std::vector<ScoredBox>> preds, std::span<const GroundTruth> gts,
                           double iou_threshold = 0.5);

struct FrocPoint {
    double threshold = 0.0;
    double fpi = 0.0;
    double recall = 0.0;
};

struct FrocResult {
    std::vector<FrocPoint> curve;  // starts at (inf, 0, 0); FPI and recall non-decreasing
    std::vector<double> fpi_points;
    std::vector<double> recall_at;
    double max_recall = 0.0;
};

inline const std::vector<double> kDefaultFpiPoints = {0.05, 0.3, 0.5, 1.0};

/// Class-agnostic free-response ROC. A prediction is a hit when its box
/// center lies inside (closed) a ground truth not yet claimed in that image.
/// Recall at an FPI budget is read from the last curve point within budget.
FrocResult froc(std::span<const std::vector<ScoredBox>> preds, std::span<const GroundTruth> gts,
                std::span<const double> fpi_points = kDefaultFpiPoints);

struct ClassificationResult {
    std::optional<double> auc;  // absent when only one label value occurs
    double f1 = 0.0;
    double f1_threshold = 0.0;
};

/// Image-level AUC (Mann-Whitney, ties counted one half) and the best F1 over
/// thresholds "score >= t".
ClassificationResult classification_scores(std::span<const double> scores, std::span<const int> labels);

struct DetectionCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct EvalReport {
    std::map<int, double> per_class_ap;
    double mean_ap = 0.0;
    std::vector<double> fpi_points;
    std::vector<double> recall_at_fpi;
    std::optional<double> auc;
    double f1 = 0.0;
    double f1_threshold = 0.0;
    DetectionCounts counts;
    FrocResult froc_curve;
};

struct EvalOptions {
    double iou_threshold = 0.5;
    double count_score_threshold = 0.5;
    std::vector<double> fpi_points = kDefaultFpiPoints;
};

/// Scores raw detector outputs. Every (slot, class) pair is an AP candidate;
/// FROC and the image-level score use each slot's best class.
EvalReport evaluate_detections(std::span<const DetectionSet> dets, std::span<const GroundTruth> gts,
                               const EvalOptions& opts = {});

/// Every (slot, class) pair of a DetectionSet as a labeled candidate.
std::vector<ScoredBox> all_class_candidates(const DetectionSet& det);
/// One candidate per slot, labeled with its best class.
std::vector<ScoredBox> best_class_candidates(const DetectionSet& det);

}  // namespace titan
