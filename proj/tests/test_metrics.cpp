#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "test_util.hpp"
#include "titan/metrics.hpp"

using namespace titan;
using namespace titan::test;

TEST_CASE("AP equals prefix enumeration") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const Case c = random_case(rng, 3);
        const double thr = trial % 2 ? 0.5 : 0.3;
        const APResult r = average_precision(c.preds, c.gts, thr);
        std::set<int> classes;
        for (const auto& g : c.gts) classes.insert(g.labels.begin(), g.labels.end());
        REQUIRE(r.per_class.size() == classes.size());
        double mean = 0.0;
        for (int cls : classes) {
            CHECK(r.per_class.at(cls) == doctest::Approx(ap_oracle(c, cls, thr)).epsilon(1e-12));
            mean += ap_oracle(c, cls, thr);
        }
        if (!classes.empty()) CHECK(r.mean_ap == doctest::Approx(mean / static_cast<double>(classes.size())).epsilon(1e-12));
    }
}

TEST_CASE("AP hand case with three predictions and two objects") {
    std::vector<std::vector<ScoredBox>> preds = {{{{0, 0, 1, 1}, 0, 0.9}, {{5, 5, 6, 6}, 0, 0.8}, {{2, 2, 3, 3}, 0, 0.7}}};
    GroundTruth g;
    g.boxes = {{0, 0, 1, 1}, {2, 2, 3, 3}};
    g.labels = {0, 0};
    const std::vector<GroundTruth> gts = {g};
    // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    CHECK(average_precision(preds, gts).mean_ap == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
}

TEST_CASE("AP does not depend on prediction order") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        Case c = random_case(rng, 2);
        const double a = average_precision(c.preds, c.gts).mean_ap;
        for (auto& p : c.preds) std::reverse(p.begin(), p.end());
        CHECK(average_precision(c.preds, c.gts).mean_ap == a);
    }
}

TEST_CASE("FROC equals per-threshold recomputation") {
    Rng rng(3);
    const std::vector<double> budgets = {0.05, 0.3, 0.5, 1.0, 2.0};
    for (int trial = 0; trial < 200; ++trial) {
        const Case c = random_case(rng, 2);
        const FrocResult f = froc(c.preds, c.gts, budgets);
        const std::vector<double> expect = froc_oracle(c, budgets);
        for (std::size_t k = 0; k < budgets.size(); ++k) CHECK(f.recall_at[k] == doctest::Approx(expect[k]).epsilon(1e-12));
        for (std::size_t k = 1; k < f.curve.size(); ++k) {
            CHECK(f.curve[k].fpi >= f.curve[k - 1].fpi);
            CHECK(f.curve[k].recall >= f.curve[k - 1].recall);
            CHECK(f.curve[k].threshold < f.curve[k - 1].threshold);
        }
    }
    CHECK_THROWS_AS(froc(std::vector<std::vector<ScoredBox>>{}, std::vector<GroundTruth>{}), std::invalid_argument);
}

TEST_CASE("AUC equals pairwise counting") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::round(rng.uniform(0.0, 1.0) * 8.0) / 8.0;
            y[i] = rng.uniform(0.0, 1.0) < 0.5 ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        const ClassificationResult r = classification_scores(s, y);
        REQUIRE(r.auc.has_value());
        CHECK(*r.auc == doctest::Approx(auc_oracle(s, y)).epsilon(1e-12));

        double best = 0.0;
        for (double t : s) {
            std::size_t tp = 0, pred = 0, pos = 0;
            for (std::size_t i = 0; i < n; ++i) {
                pos += y[i];
                if (s[i] >= t) {
                    ++pred;
                    tp += y[i];
                }
            }
            best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(pred + pos));
        }
        CHECK(r.f1 == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("AUC hand case") {
    const std::vector<double> s = {0.9, 0.8, 0.7, 0.1};
    const std::vector<int> y = {1, 0, 1, 0};
    CHECK(*classification_scores(s, y).auc == 0.75);
    CHECK_FALSE(classification_scores(s, std::vector<int>{1, 1, 1, 1}).auc.has_value());
}

TEST_CASE("NMS equals flag-array suppression") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ScoredBox> d;
        const auto n = rng.uniform_int(0, 15);
        for (std::int64_t j = 0; j < n; ++j) d.push_back({random_box(rng), static_cast<int>(rng.uniform_int(0, 1)), rng.uniform(0.0, 1.0)});
        const double thr = rng.uniform(0.0, 0.8);
        const auto got = nms(d, thr);
        const auto expect = nms_oracle(d, thr);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].box == expect[i].box);
            CHECK(got[i].score == expect[i].score);
        }
        for (std::size_t i = 0; i < got.size(); ++i)
            for (std::size_t j = i + 1; j < got.size(); ++j)
                if (got[i].label == got[j].label) CHECK(iou(got[i].box, got[j].box) <= thr);
    }
}

TEST_CASE("perfect detections score one") {
    Rng rng(6);
    std::vector<DetectionSet> dets;
    std::vector<GroundTruth> gts;
    for (int i = 0; i < 4; ++i) {
        GroundTruth g;
        DetectionSet d;
        for (int j = 0; j < 2; ++j) {
            const Box b{0.4 * j + 0.05, 0.1, 0.4 * j + 0.3, 0.4};
            g.boxes.push_back(b);
            g.labels.push_back(j);
            d.boxes.push_back(b);
            d.scores.push_back(j == 0 ? std::vector<double>{0.9, 0.05} : std::vector<double>{0.05, 0.9});
        }
        dets.push_back(d);
        gts.push_back(g);
    }
    const EvalReport r = evaluate_detections(dets, gts);
    CHECK(r.mean_ap == 1.0);
    CHECK(r.counts.tp == 8);
    CHECK(r.counts.fp == 0);
    CHECK(r.counts.fn == 0);
    CHECK(r.froc_curve.max_recall == 1.0);
    CHECK_FALSE(r.auc.has_value());
}
