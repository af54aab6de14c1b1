#pragma once

// Monte-Carlo dropout detection variance and the variance-rank split of an
// unlabeled target set into source-similar and source-dissimilar images.

#include <cstdint>
#include <span>
#include <vector>

#include "titan/boxes.hpp"
#include "titan/detector.hpp"
#include "titan/params.hpp"

namespace titan {

/// M stochastic passes with dropout active; slot j of every pass comes from
/// object query j. Throws std::invalid_argument when passes < 1.
std::vector<DetectionSet> mc_forward(const DetectorConfig& cfg, const ParamSet& params, const Tensor& image,
                                     int passes, double dropout_p, std::uint64_t seed, bool domain_query = true);

struct DetectionVariance {
    double box = 0.0;    // v_b
    double score = 0.0;  // v_c
    double value = 0.0;  // v = v_b * v_c
};

/// Mean squared deviation of box coordinates and of score rows from their
/// per-slot means, averaged over passes and slots. Throws
/// std::invalid_argument on an empty list or mismatched slot/class counts.
DetectionVariance detection_variance(std::span<const DetectionSet> samples);

struct DomainPartition {
    std::vector<int> ranks;      // 1..N, ascending with variance
    std::vector<double> levels;  // rank / N
    double sigma = 0.5;
    std::vector<std::size_t> source_similar;     // level >= sigma
    std::vector<std::size_t> source_dissimilar;  // level < sigma
};

/// Ranks images by variance (ties broken by ascending index) and splits at
/// sigma. Throws std::invalid_argument unless 0 < sigma < 1 and N >= 1.
DomainPartition partition(std::span<const double> variances, double sigma);

struct VarianceReport {
    std::vector<DetectionVariance> per_image;
    int passes = 0;
};

/// Per-image MC variance over a set of (already normalized) images; image i
/// draws its dropout masks from derive_seed(seed, "mc", i).
VarianceReport variance_report(const DetectorConfig& cfg, const ParamSet& params, std::span<const Tensor> images,
                               int passes, double dropout_p, std::uint64_t seed, bool domain_query = true);

}  // namespace titan
