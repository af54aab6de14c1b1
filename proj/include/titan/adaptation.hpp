#pragma once

// Source pretraining and the teacher-student adaptation loop: pseudo-labels
// from an EMA teacher on weak views, a student trained on strong views, and
// cascaded query/token adversarial alignment between the source-similar and
// source-dissimilar target subsets through gradient reversal.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "titan/alignment.hpp"
#include "titan/detector.hpp"
#include "titan/losses.hpp"
#include "titan/matching.hpp"
#include "titan/metrics.hpp"
#include "titan/params.hpp"
#include "titan/partition.hpp"
#include "titan/synth.hpp"

namespace titan {

// ---------------------------------------------------------------------------
// Evaluation

/// Detections of a frozen model on every (normalized) image of a dataset.
std::vector<DetectionSet> predict(const DetectorConfig& cfg, const ParamSet& params, const Dataset& data,
                                  bool domain_query = true);
EvalReport evaluate_model(const DetectorConfig& cfg, const ParamSet& params, const Dataset& data,
                          bool domain_query = true, const EvalOptions& opts = {});

// ---------------------------------------------------------------------------
// Source pretraining

struct PretrainConfig {
    int epochs = 30;
    int batch_size = 8;
    int lr_drop_epoch = 20;  // lr is divided by 10 from this epoch on
    AdamConfig adam{.lr = 1e-3, .weight_decay = 1e-4, .clip_max_norm = 1.0};
    double dropout_p = 0.1;
    double flip_p = 0.5;
    bool domain_query = true;
    LossCoefs loss;
    MatchCosts match;
    std::uint64_t seed = 0;
};

struct PretrainLog {
    std::int64_t step = 0;
    int epoch = 0;
    double loss = 0.0, cls = 0.0, bbox = 0.0, giou = 0.0;
    double grad_norm = 0.0;
};

struct PretrainResult {
    ParamSet params;
    std::vector<PretrainLog> history;
};

/// Supervised training on labeled source data from init. Throws NumericError
/// on a non-finite loss.
PretrainResult pretrain(const DetectorConfig& cfg, ParamSet init, const Dataset& train, const PretrainConfig& pc,
                        const std::function<void(const PretrainLog&)>& on_step = {});

// ---------------------------------------------------------------------------
// Pseudo-labels

struct PseudoLabelSet {
    std::vector<ScoredBox> boxes;  // sorted by rank
    double threshold = 0.0;
    int topk = 0;
    double nms_iou = 0.0;

    GroundTruth as_ground_truth() const;
};

/// Best class per slot, per-class NMS, confidence filter at threshold, top-k.
PseudoLabelSet filter_pseudo_labels(const DetectionSet& dets, double threshold, int topk, double nms_iou);

PseudoLabelSet generate_pseudo_labels(const DetectorConfig& cfg, const ParamSet& teacher, const Tensor& weak_input,
                                      double threshold, int topk, double nms_iou, bool domain_query = true);

// ---------------------------------------------------------------------------
// Adaptation

struct AdaptConfig {
    double ema_alpha = 0.9996;
    double lambda_enc = 1.0;
    double lambda_dec = 0.9;
    AlignmentWeights query_weights;  // lambda_enc_q, lambda_dec_q
    double lambda_grl = 1.0;

    double sigma = 0.5;
    int mc_passes = 8;
    double mc_dropout = 0.1;
    bool use_partition = true;

    double pseudo_th = 0.3;
    int topk_pseudo = 30;
    double nms_iou = 0.1;
    bool use_dynamic_th = true;

    AdamConfig adam{.lr = 2e-4, .weight_decay = 1e-4, .clip_max_norm = 0.1};
    AdamConfig disc_adam{.lr = 1e-3, .weight_decay = 0.0, .clip_max_norm = 0.0};
    int batch_size = 8;
    int epochs = 4;
    double dropout_p = 0.1;
    bool use_domain_query = true;
    std::string eval_model = "teacher";  // "teacher" or "student"
    EvalOptions eval;

    AugmentPolicy augment;
    LossCoefs loss;
    MatchCosts match;
    DiscriminatorConfig disc;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

struct TeacherStudent {
    ParamSet teacher;
    ParamSet student;
    ParamSet discs;
    ParamSet disc_init;
    AdamState student_adam;
    AdamState disc_adam;
    std::int64_t step = 0;

    static TeacherStudent from_source(const ParamSet& source, ParamSet discs);
};

/// One training sample after augmentation and pseudo-labeling.
struct AdaptItem {
    Tensor strong;          // normalized student input
    GroundTruth pseudo;     // teacher labels in the same geometry
    int domain = 0;         // 0 source-similar, 1 source-dissimilar
    std::uint64_t dropout_seed = 0;
};

/// Batch means of each loss term. Per-layer vectors are 1-based layer order.
struct ObjectiveTerms {
    ad::Var surrogate;  // L_stu + lambda_enc L_enc + lambda_dec L_dec, generator behind the GRL
    ad::Var l_stu, l_enc, l_dec;
    std::vector<ad::Var> enc_q, enc_k, dec_q, dec_k;
    std::vector<Assignment> matchings;
};

/// Builds the batch objective on one tape. When fixed_matchings is non-empty
/// it supplies the Hungarian assignment of every item.
ObjectiveTerms build_objective(const DetectorConfig& cfg, ParamBinding& student, ParamBinding& discs,
                               std::span<const AdaptItem> items, const AdaptConfig& ac,
                               std::span<const Assignment> fixed_matchings = {});

/// L_stu - lambda_enc L_enc - lambda_dec L_dec.
double reported_objective(double l_stu, double l_enc, double l_dec, const AdaptConfig& ac);

struct StepReport {
    std::int64_t step = 0;
    int epoch = 0;
    double objective = 0.0;
    double l_stu = 0.0, l_enc = 0.0, l_dec = 0.0;
    std::vector<double> enc_q, enc_k, dec_q, dec_k;
    double threshold = 0.0;
    int pseudo_boxes = 0;
    double grad_norm = 0.0;
};

/// Pseudo-label threshold at a step: constant, or linear decay to half over
/// total_steps when dynamic.
double pseudo_threshold(const AdaptConfig& ac, std::int64_t step, std::int64_t total_steps);

/// One Adam step on student and discriminators followed by one EMA step on
/// the teacher. Images are raw; augmentation seeds derive from the step.
/// Throws NumericError when any loss is non-finite.
StepReport adapt_step(const DetectorConfig& cfg, TeacherStudent& state, std::span<const Tensor* const> similar,
                      std::span<const Tensor* const> dissimilar, const AdaptConfig& ac, std::int64_t total_steps);

struct EpochEval {
    int epoch = 0;
    std::int64_t step = 0;
    EvalReport report;
};

struct AdaptResult {
    TeacherStudent state;
    VarianceReport variances;
    DomainPartition split;
    std::vector<StepReport> history;
    std::vector<EpochEval> evals;
    ParamSet adapted;  // the model selected by eval_model

    const ParamSet& model(const std::string& which) const;
};

struct PartitionResult {
    VarianceReport variances;
    DomainPartition split;
};

/// MC-dropout variances of the source model on (normalized) target images and
/// the resulting split.
PartitionResult partition_target(const DetectorConfig& cfg, const ParamSet& source, const Dataset& target,
                                 int passes, double dropout_p, double sigma, std::uint64_t seed,
                                 bool domain_query = true);

struct AdaptCallbacks {
    std::function<void(const StepReport&)> on_step;
    std::function<void(const EpochEval&)> on_epoch;
};

/// Partition with the source model, then adapt for ac.epochs on target_train,
/// evaluating the selected model on target_val after every epoch. Without
/// use_partition every image is sampled from a single stream.
AdaptResult run_adaptation(const DetectorConfig& cfg, const ParamSet& source, const Dataset& target_train,
                           const Dataset& target_val, const AdaptConfig& ac, const AdaptCallbacks& cb = {});

}  // namespace titan
