#include "titan/metrics.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <stdexcept>

namespace titan {

bool ranks_before(const ScoredBox& a, const ScoredBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
    if (a.box.y2 != b.box.y2) return a.box.y2 < b.box.y2;
    return a.label < b.label;
}

std::vector<ScoredBox> nms(std::vector<ScoredBox> dets, double iou_threshold) {
    std::sort(dets.begin(), dets.end(), ranks_before);
    std::vector<ScoredBox> kept;
    for (const ScoredBox& d : dets) {
        bool suppressed = false;
        for (const ScoredBox& k : kept) {
            if (k.label == d.label && iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace {

struct Ranked {
    ScoredBox det;
    std::size_t image = 0;
};

std::vector<Ranked> rank_all(std::span<const std::vector<ScoredBox>> preds, std::optional<int> label) {
    std::vector<Ranked> out;
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (const ScoredBox& d : preds[i])
            if (!label || d.label == *label) out.push_back({d, i});
    std::stable_sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
        if (ranks_before(a.det, b.det)) return true;
        if (ranks_before(b.det, a.det)) return false;
        return a.image < b.image;
    });
    return out;
}

void check_sizes(std::size_t preds, std::size_t gts, const char* who) {
    if (preds != gts) throw std::invalid_argument(std::string(who) + ": prediction and ground-truth image counts differ");
}

}  // namespace

APResult average_precision(std::span<const std::vector<ScoredBox>> preds, std::span<const GroundTruth> gts,
                           double iou_threshold) {
    check_sizes(preds.size(), gts.size(), "average_precision");
    std::set<int> classes;
    for (const auto& g : gts)
        for (int l : g.labels) classes.insert(l);

    APResult result;
    for (int cls : classes) {
        std::size_t npos = 0;
        std::vector<std::vector<bool>> used(gts.size());
        for (std::size_t i = 0; i < gts.size(); ++i) {
            used[i].assign(gts[i].size(), false);
            for (int l : gts[i].labels) npos += (l == cls);
        }
        const auto ranked = rank_all(preds, cls);
        std::vector<double> precision, recall;
        std::size_t tp = 0, fp = 0;
        for (const Ranked& r : ranked) {
            const GroundTruth& g = gts[r.image];
            double best = -1.0;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (g.labels[j] != cls || used[r.image][j]) continue;
                const double o = iou(r.det.box, g.boxes[j]);
                if (o > best) {
                    best = o;
                    best_j = j;
                }
            }
            if (best >= iou_threshold) {
                used[r.image][best_j] = true;
                ++tp;
            } else {
                ++fp;
            }
            precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
            recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
        }
        // Precision envelope from the right, then sum over recall steps.
        for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
        double ap = 0.0, prev_recall = 0.0;
        for (std::size_t i = 0; i < recall.size(); ++i) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
        result.per_class[cls] = ap;
    }
    if (!result.per_class.empty()) {
        double s = 0.0;
        for (const auto& [cls, ap] : result.per_class) s += ap;
        result.mean_ap = s / static_cast<double>(result.per_class.size());
    }
    return result;
}

FrocResult froc(std::span<const std::vector<ScoredBox>> preds, std::span<const GroundTruth> gts,
                std::span<const double> fpi_points) {
    check_sizes(preds.size(), gts.size(), "froc");
    if (gts.empty()) throw std::invalid_argument("froc: zero images");
    const double n_images = static_cast<double>(gts.size());
    std::size_t total_gt = 0;
    std::vector<std::vector<bool>> claimed(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
        claimed[i].assign(gts[i].size(), false);
        total_gt += gts[i].size();
    }
    auto recall_of = [&](std::size_t tp) {
        return total_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(total_gt);
    };

    FrocResult out;
    out.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    const auto ranked = rank_all(preds, std::nullopt);
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const Ranked& r = ranked[k];
        const GroundTruth& g = gts[r.image];
        bool hit = false;
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!claimed[r.image][j] && contains_point(g.boxes[j], r.det.box.center_x(), r.det.box.center_y())) {
                claimed[r.image][j] = true;
                hit = true;
                break;
            }
        }
        (hit ? tp : fp) += 1;
        // One operating point per distinct score.
        if (k + 1 == ranked.size() || ranked[k + 1].det.score != r.det.score) {
            out.curve.push_back({r.det.score, static_cast<double>(fp) / n_images, recall_of(tp)});
        }
    }
    out.max_recall = out.curve.back().recall;
    out.fpi_points.assign(fpi_points.begin(), fpi_points.end());
    for (double budget : fpi_points) {
        double rec = 0.0;
        for (const FrocPoint& p : out.curve) {
            if (p.fpi <= budget) rec = p.recall;
            else break;
        }
        out.recall_at.push_back(rec);
    }
    return out;
}

ClassificationResult classification_scores(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("classification_scores: size mismatch");
    ClassificationResult out;
    const std::size_t n = scores.size();
    std::size_t npos = 0;
    for (int l : labels) npos += (l != 0);
    const std::size_t nneg = n - npos;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    if (npos > 0 && nneg > 0) {
        // Average ranks over tie groups.
        double pos_rank_sum = 0.0;
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j < n && scores[order[j]] == scores[order[i]]) ++j;
            const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
            for (std::size_t k = i; k < j; ++k)
                if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
            i = j;
        }
        const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
        out.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    }

    // Sweep thresholds from high to low; everything >= t is predicted positive.
    std::size_t tp = 0, predicted = 0;
    for (std::size_t idx = n; idx > 0;) {
        const double t = scores[order[idx - 1]];
        while (idx > 0 && scores[order[idx - 1]] == t) {
            --idx;
            ++predicted;
            tp += (labels[order[idx]] != 0);
        }
        if (npos == 0) continue;
        const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + npos);
        if (f1 > out.f1) {
            out.f1 = f1;
            out.f1_threshold = t;
        }
    }
    return out;
}

std::vector<ScoredBox> all_class_candidates(const DetectionSet& det) {
    std::vector<ScoredBox> out;
    out.reserve(det.size() * det.num_classes());
    for (std::size_t j = 0; j < det.size(); ++j)
        for (std::size_t c = 0; c < det.scores[j].size(); ++c)
            out.push_back({det.boxes[j], static_cast<int>(c), det.scores[j][c]});
    return out;
}

std::vector<ScoredBox> best_class_candidates(const DetectionSet& det) {
    std::vector<ScoredBox> out;
    out.reserve(det.size());
    for (std::size_t j = 0; j < det.size(); ++j) {
        const auto [cls, score] = det.best_class(j);
        out.push_back({det.boxes[j], cls, score});
    }
    return out;
}

EvalReport evaluate_detections(std::span<const DetectionSet> dets, std::span<const GroundTruth> gts,
                               const EvalOptions& opts) {
    check_sizes(dets.size(), gts.size(), "evaluate_detections");
    std::vector<std::vector<ScoredBox>> all, best;
    std::vector<double> image_scores;
    std::vector<int> image_labels;
    EvalReport rep;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        all.push_back(all_class_candidates(dets[i]));
        best.push_back(best_class_candidates(dets[i]));
        double top = 0.0;
        for (const ScoredBox& b : best.back()) top = std::max(top, b.score);
        image_scores.push_back(top);
        image_labels.push_back(gts[i].size() > 0 ? 1 : 0);

        // Counts at a fixed operating point, class-aware IoU matching.
        std::vector<ScoredBox> kept;
        for (const ScoredBox& b : best.back())
            if (b.score >= opts.count_score_threshold) kept.push_back(b);
        std::sort(kept.begin(), kept.end(), ranks_before);
        std::vector<bool> used(gts[i].size(), false);
        for (const ScoredBox& b : kept) {
            double best_iou = -1.0;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < gts[i].size(); ++j) {
                if (used[j] || gts[i].labels[j] != b.label) continue;
                const double o = iou(b.box, gts[i].boxes[j]);
                if (o > best_iou) {
                    best_iou = o;
                    best_j = j;
                }
            }
            if (best_iou >= opts.iou_threshold) {
                used[best_j] = true;
                ++rep.counts.tp;
            } else {
                ++rep.counts.fp;
            }
        }
        for (bool u : used) rep.counts.fn += u ? 0 : 1;
    }
    const APResult ap = average_precision(all, gts, opts.iou_threshold);
    rep.per_class_ap = ap.per_class;
    rep.mean_ap = ap.mean_ap;
    if (!gts.empty()) {
        rep.froc_curve = froc(best, gts, opts.fpi_points);
        rep.fpi_points = rep.froc_curve.fpi_points;
        rep.recall_at_fpi = rep.froc_curve.recall_at;
    }
    const ClassificationResult cls = classification_scores(image_scores, image_labels);
    rep.auc = cls.auc;
    rep.f1 = cls.f1;
    rep.f1_threshold = cls.f1_threshold;
    return rep;
}

}  // namespace titan
