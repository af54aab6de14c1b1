#include "titan/partition.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "titan/rng.hpp"

namespace titan {

std::vector<DetectionSet> mc_forward(const DetectorConfig& cfg, const ParamSet& params, const Tensor& image,
                                     int passes, double dropout_p, std::uint64_t seed, bool domain_query) {
    if (passes < 1) throw std::invalid_argument("mc_forward: at least one pass is required");
    std::vector<DetectionSet> out;
    out.reserve(static_cast<std::size_t>(passes));
    for (int m = 0; m < passes; ++m) {
        ForwardOptions opts;
        opts.domain_query = domain_query;
        opts.dropout_p = dropout_p;
        opts.train = true;
        opts.seed = derive_seed(seed, "mc-pass", static_cast<std::uint64_t>(m));
        out.push_back(detect(cfg, params, image, opts));
    }
    return out;
}

DetectionVariance detection_variance(std::span<const DetectionSet> samples) {
    if (samples.empty()) throw std::invalid_argument("detection_variance: no samples");
    const std::size_t n = samples.front().size();
    const std::size_t k = samples.front().num_classes();
    for (const DetectionSet& s : samples) {
        if (s.size() != n || s.scores.size() != n) throw std::invalid_argument("detection_variance: slot counts differ across passes");
        for (const auto& row : s.scores)
            if (row.size() != k) throw std::invalid_argument("detection_variance: class counts differ");
    }
    DetectionVariance v;
    if (n == 0) return v;
    const double inv_m = 1.0 / static_cast<double>(samples.size());

    double box_acc = 0.0, score_acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double mean_box[4] = {0, 0, 0, 0};
        std::vector<double> mean_score(k, 0.0);
        for (const DetectionSet& s : samples) {
            const Box& b = s.boxes[j];
            mean_box[0] += b.x1 * inv_m;
            mean_box[1] += b.y1 * inv_m;
            mean_box[2] += b.x2 * inv_m;
            mean_box[3] += b.y2 * inv_m;
            for (std::size_t c = 0; c < k; ++c) mean_score[c] += s.scores[j][c] * inv_m;
        }
        for (const DetectionSet& s : samples) {
            const Box& b = s.boxes[j];
            const double d[4] = {b.x1 - mean_box[0], b.y1 - mean_box[1], b.x2 - mean_box[2], b.y2 - mean_box[3]};
            for (double x : d) box_acc += x * x;
            for (std::size_t c = 0; c < k; ++c) {
                const double e = s.scores[j][c] - mean_score[c];
                score_acc += e * e;
            }
        }
    }
    const double denom = static_cast<double>(samples.size()) * static_cast<double>(n);
    v.box = box_acc / denom;
    v.score = score_acc / denom;
    v.value = v.box * v.score;
    return v;
}

DomainPartition partition(std::span<const double> variances, double sigma) {
    if (!(sigma > 0.0 && sigma < 1.0)) throw std::invalid_argument("partition: sigma must lie in (0, 1)");
    const std::size_t n = variances.size();
    if (n == 0) throw std::invalid_argument("partition: no images");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return variances[a] < variances[b]; });

    DomainPartition p;
    p.sigma = sigma;
    p.ranks.assign(n, 0);
    p.levels.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) p.ranks[order[r]] = static_cast<int>(r + 1);
    for (std::size_t i = 0; i < n; ++i) {
        p.levels[i] = static_cast<double>(p.ranks[i]) / static_cast<double>(n);
        (p.levels[i] >= sigma ? p.source_similar : p.source_dissimilar).push_back(i);
    }
    return p;
}

VarianceReport variance_report(const DetectorConfig& cfg, const ParamSet& params, std::span<const Tensor> images,
                               int passes, double dropout_p, std::uint64_t seed, bool domain_query) {
    VarianceReport rep;
    rep.passes = passes;
    rep.per_image.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto samples = mc_forward(cfg, params, images[i], passes, dropout_p, derive_seed(seed, "mc", i), domain_query);
        rep.per_image.push_back(detection_variance(samples));
    }
    return rep;
}

}  // namespace titan
