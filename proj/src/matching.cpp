#include "titan/matching.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace titan {

Assignment solve_assignment(const CostMatrix& cost) {
    const std::size_t n = cost.size();
    if (n == 0) return {};
    const std::size_t m = cost.front().size();
    for (const auto& row : cost)
        if (row.size() != m) throw std::invalid_argument("solve_assignment: ragged cost matrix");
    if (n > m) {
        throw std::invalid_argument("solve_assignment: " + std::to_string(n) + " rows cannot be matched into " +
                                    std::to_string(m) + " columns");
    }

    // 1-based potentials u (rows), v (cols); way[j] = previous column on the path.
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        owner[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = owner[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    Assignment a;
    a.pred_for_gt.assign(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (owner[j] != 0) a.pred_for_gt[owner[j] - 1] = static_cast<int>(j - 1);
    for (std::size_t i = 0; i < n; ++i) a.total_cost += cost[i][static_cast<std::size_t>(a.pred_for_gt[i])];
    return a;
}

CostMatrix matching_cost(const DetectionSet& preds, const GroundTruth& gts, const MatchCosts& costs) {
    CostMatrix c(gts.size(), std::vector<double>(preds.size(), 0.0));
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const auto label = static_cast<std::size_t>(gts.labels[g]);
        const Box& gb = gts.boxes[g];
        for (std::size_t p = 0; p < preds.size(); ++p) {
            const double prob = preds.scores[p].at(label);
            const double pos = costs.focal_alpha * std::pow(1.0 - prob, costs.focal_gamma) * -std::log(prob + 1e-8);
            const double neg =
                (1.0 - costs.focal_alpha) * std::pow(prob, costs.focal_gamma) * -std::log(1.0 - prob + 1e-8);
            const Box& pb = preds.boxes[p];
            const double l1 = std::abs(pb.x1 - gb.x1) + std::abs(pb.y1 - gb.y1) + std::abs(pb.x2 - gb.x2) +
                              std::abs(pb.y2 - gb.y2);
            c[g][p] = costs.cls * (pos - neg) + costs.bbox * l1 - costs.giou * giou(pb.clamped(), gb);
        }
    }
    return c;
}

Assignment hungarian_match(const DetectionSet& preds, const GroundTruth& gts, const MatchCosts& costs) {
    if (gts.size() > preds.size()) {
        throw std::invalid_argument("hungarian_match: " + std::to_string(gts.size()) + " ground truths but only " +
                                    std::to_string(preds.size()) + " predictions");
    }
    return solve_assignment(matching_cost(preds, gts, costs));
}

}  // namespace titan
