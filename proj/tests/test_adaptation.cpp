#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "titan/adaptation.hpp"
#include "titan/metrics.hpp"

using namespace titan;
using namespace titan::test;

namespace {

DetectorConfig small_detector() {
    DetectorConfig c;
    c.image_size = 8;
    c.hidden_dim = 6;
    c.num_heads = 2;
    c.ffn_dim = 8;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.num_queries = 4;
    c.num_classes = 2;
    return c;
}

DomainShiftSpec small_shift(double haze) {
    DomainShiftSpec s;
    s.image_size = 8;
    s.min_object_size = 3;
    s.max_object_size = 3;
    s.max_objects = 2;
    s.num_classes = 2;
    s.haze = haze;
    s.severity_spread = 0.5;
    return s;
}

AdaptConfig small_adapt(const DetectorConfig& c) {
    AdaptConfig ac;
    ac.disc = {.input_dim = c.hidden_dim, .hidden_dim = 5, .enc_layers = c.enc_layers, .dec_layers = c.dec_layers};
    ac.batch_size = 4;
    ac.epochs = 1;
    ac.mc_passes = 3;
    ac.pseudo_th = 0.0;
    ac.seed = 5;
    return ac;
}

ParamSet small_params() {
    ParamSet p;
    p.add("a", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    p.add("b", Tensor({4}, {-1, 0.5, 0.25, 8}));
    return p;
}

bool params_equal(const ParamSet& a, const ParamSet& b) { return a == b; }

}  // namespace

TEST_CASE("EMA teacher equals the explicit geometric sum") {
    const double alpha = 0.9996;
    Rng rng(1);
    ParamSet teacher = small_params();
    const ParamSet t0 = teacher;
    std::vector<ParamSet> trajectory;
    for (int n = 0; n < 1000; ++n) {
        ParamSet s = teacher.zeros_like();
        for (std::size_t i = 0; i < s.size(); ++i)
            for (double& v : s.at(i).data) v = rng.normal(0.0, 3.0);
        ema_update(teacher, s, alpha);
        trajectory.push_back(std::move(s));
    }
    // T_n = alpha^n T_0 + (1 - alpha) sum_k alpha^(n-k) S_k
    const int n = 1000;
    for (std::size_t i = 0; i < t0.size(); ++i) {
        for (std::size_t k = 0; k < t0.at(i).size(); ++k) {
            double expect = std::pow(alpha, n) * t0.at(i).data[k];
            for (int step = 1; step <= n; ++step) {
                expect += (1.0 - alpha) * std::pow(alpha, n - step) * trajectory[static_cast<std::size_t>(step - 1)].at(i).data[k];
            }
            CHECK(std::abs(teacher.at(i).data[k] - expect) <= 1e-9);
        }
    }
}

TEST_CASE("EMA contracts toward a constant student by alpha per step") {
    const double alpha = AdaptConfig{}.ema_alpha;
    CHECK(alpha == 0.9996);
    ParamSet teacher = small_params();
    ParamSet student = teacher.zeros_like();
    for (std::size_t i = 0; i < student.size(); ++i)
        for (double& v : student.at(i).data) v = 0.5;
    for (int step = 0; step < 50; ++step) {
        const ParamSet before = teacher;
        ema_update(teacher, student, alpha);
        for (std::size_t i = 0; i < teacher.size(); ++i) {
            for (std::size_t k = 0; k < teacher.at(i).size(); ++k) {
                const double gap0 = before.at(i).data[k] - 0.5;
                const double gap1 = teacher.at(i).data[k] - 0.5;
                if (std::abs(gap0) > 1e-3) CHECK(gap1 / gap0 == doctest::Approx(alpha).epsilon(1e-12));
            }
        }
    }
    ParamSet frozen = small_params();
    ema_update(frozen, student, 1.0);
    CHECK(frozen == small_params());
    ParamSet other;
    other.add("a", Tensor({2, 3}, 0.0));
    CHECK_THROWS_AS(ema_update(frozen, other, alpha), std::invalid_argument);
}

TEST_CASE("pseudo-label filter equals an independent pipeline") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        DetectionSet d;
        const int n = static_cast<int>(rng.uniform_int(0, 10));
        for (int j = 0; j < n; ++j) {
            const double x = rng.uniform(-0.1, 0.8), y = rng.uniform(-0.1, 0.8);
            d.boxes.push_back({x, y, x + rng.uniform(0.05, 0.4), y + rng.uniform(0.05, 0.4)});
            d.scores.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
        }
        const double th = rng.uniform(0.0, 0.9);
        const int topk = static_cast<int>(rng.uniform_int(1, 6));
        const double nms_iou = rng.uniform(0.05, 0.7);

        // best class per slot
        std::vector<ScoredBox> cand;
        for (int j = 0; j < n; ++j) {
            const auto& s = d.scores[static_cast<std::size_t>(j)];
            const auto best = std::max_element(s.begin(), s.end()) - s.begin();
            cand.push_back({d.boxes[static_cast<std::size_t>(j)], static_cast<int>(best), s[static_cast<std::size_t>(best)]});
        }
        std::sort(cand.begin(), cand.end(), ranks_before);
        // greedy same-label suppression
        std::vector<ScoredBox> kept;
        for (const ScoredBox& c : cand) {
            bool drop = false;
            for (const ScoredBox& k : kept) drop = drop || (k.label == c.label && iou(k.box, c.box) > nms_iou);
            if (!drop) kept.push_back(c);
        }
        std::vector<ScoredBox> expect;
        for (const ScoredBox& k : kept)
            if (k.score >= th && static_cast<int>(expect.size()) < topk) expect.push_back(k);

        const PseudoLabelSet got = filter_pseudo_labels(d, th, topk, nms_iou);
        REQUIRE(got.boxes.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(got.boxes[i].score == expect[i].score);
            CHECK(got.boxes[i].label == expect[i].label);
            CHECK(got.boxes[i].box == expect[i].box.clamped());
        }
        const GroundTruth gt = got.as_ground_truth();
        CHECK(gt.size() == expect.size());
    }
}

TEST_CASE("dynamic threshold decays linearly to half") {
    AdaptConfig ac;
    ac.pseudo_th = 0.4;
    CHECK(pseudo_threshold(ac, 0, 100) == 0.4);
    CHECK(pseudo_threshold(ac, 50, 100) == doctest::Approx(0.3));
    CHECK(pseudo_threshold(ac, 100, 100) == doctest::Approx(0.2));
    CHECK(pseudo_threshold(ac, 500, 100) == doctest::Approx(0.2));
    ac.use_dynamic_th = false;
    CHECK(pseudo_threshold(ac, 50, 100) == 0.4);
}

TEST_CASE("scalarized objective matches finite differences on the full step") {
    const DetectorConfig c = small_detector();
    const AdaptConfig ac = small_adapt(c);
    const ParamSet student = init_detector_params(c, 3);
    ParamSet discs = init_discriminators(ac.disc, 4);
    Rng rng(6);
    // zero biases put rows with an all-zero hidden layer exactly on a ReLU kink
    for (std::size_t i = 0; i < discs.size(); ++i) {
        if (discs.name(i).ends_with(".b"))
            for (double& v : discs.at(i).data) v = rng.normal(0.0, 0.1);
    }
    std::vector<AdaptItem> items(2);
    for (std::size_t i = 0; i < items.size(); ++i) {
        items[i].strong = uniform_tensor(rng, {3, 8, 8}, -1.5, 1.5);
        items[i].pseudo.boxes = {{0.1, 0.15, 0.45, 0.6}, {0.5, 0.4, 0.9, 0.85}};
        items[i].pseudo.labels = {0, 1};
        items[i].domain = static_cast<int>(i);
        items[i].dropout_seed = 40 + i;
    }

    const CompositeFd fd = composite_fd(c, ac, student, discs, items, 200);
    CHECK(fd.student < 1e-3);
    CHECK(fd.discriminators < 1e-3);
}

TEST_CASE("zero adversarial weights give zero adversarial gradients") {
    const DetectorConfig c = small_detector();
    AdaptConfig ac = small_adapt(c);
    ac.lambda_enc = 0.0;
    ac.lambda_dec = 0.0;
    const ParamSet student = init_detector_params(c, 3);
    const ParamSet discs = init_discriminators(ac.disc, 4);
    Rng rng(7);
    std::vector<AdaptItem> items(1);
    items[0].strong = uniform_tensor(rng, {3, 8, 8}, -1.0, 1.0);
    items[0].pseudo.boxes = {{0.1, 0.1, 0.4, 0.4}};
    items[0].pseudo.labels = {1};
    Tape tape;
    ParamBinding s(tape, student, true);
    ParamBinding d(tape, discs, true);
    const ObjectiveTerms t = build_objective(c, s, d, items, ac);
    CHECK(t.surrogate.value().item() == t.l_stu.value().item());
    const ParamSet g = d.gradients(tape.backward(t.surrogate));
    for (std::size_t i = 0; i < g.size(); ++i)
        for (double v : g.at(i).data) CHECK(v == 0.0);
}

TEST_CASE("adaptation loop: zero epochs, frozen teacher, determinism") {
    const DetectorConfig c = small_detector();
    const ParamSet source = init_detector_params(c, 9);
    const Dataset train = generate_domain(small_shift(0.3), 12, 1);
    const Dataset val = generate_domain(small_shift(0.3), 4, 2);

    AdaptConfig ac = small_adapt(c);
    ac.epochs = 0;
    const AdaptResult none = run_adaptation(c, source, train, val, ac);
    CHECK(none.state.teacher == source);
    CHECK(none.state.student == source);
    CHECK(none.history.empty());
    CHECK(none.evals.size() == 1);
    CHECK(none.split.source_similar.size() + none.split.source_dissimilar.size() == train.size());

    ac.epochs = 1;
    ac.ema_alpha = 1.0;
    const AdaptResult frozen = run_adaptation(c, source, train, val, ac);
    CHECK(frozen.state.teacher == source);
    CHECK_FALSE(frozen.state.student == source);
    CHECK(frozen.history.size() == 3);
    CHECK(frozen.state.step == 3);

    ac.ema_alpha = 0.9;
    const AdaptResult a = run_adaptation(c, source, train, val, ac);
    const AdaptResult b = run_adaptation(c, source, train, val, ac);
    CHECK(a.state.teacher == b.state.teacher);
    CHECK(a.state.discs == b.state.discs);
    CHECK(a.evals.back().report.mean_ap == b.evals.back().report.mean_ap);
    CHECK(params_equal(a.adapted, a.state.teacher));
    for (const StepReport& r : a.history) {
        CHECK(r.objective == doctest::Approx(reported_objective(r.l_stu, r.l_enc, r.l_dec, ac)).epsilon(1e-14));
        CHECK(r.enc_q.size() == 2);
        CHECK(r.dec_k.size() == 2);
    }

    ac.seed = 6;
    const AdaptResult other = run_adaptation(c, source, train, val, ac);
    CHECK_FALSE(other.state.teacher == a.state.teacher);
}

TEST_CASE("naive variant uses a single stream") {
    const DetectorConfig c = small_detector();
    const ParamSet source = init_detector_params(c, 9);
    const Dataset train = generate_domain(small_shift(0.3), 8, 1);
    AdaptConfig ac = small_adapt(c);
    ac.use_partition = false;
    ac.lambda_enc = ac.lambda_dec = 0.0;
    const AdaptResult r = run_adaptation(c, source, train, Dataset{}, ac);
    CHECK(r.split.ranks.empty());
    CHECK(r.history.size() == 2);
    CHECK(r.evals.size() == 2);
}

TEST_CASE("adaptation argument errors") {
    const DetectorConfig c = small_detector();
    const Dataset train = generate_domain(small_shift(0.3), 4, 1);
    AdaptConfig ac = small_adapt(c);
    CHECK_THROWS_AS(run_adaptation(c, init_detector_params(DetectorConfig{}, 1), train, train, ac), std::invalid_argument);
    CHECK_THROWS_AS(run_adaptation(c, init_detector_params(c, 1), Dataset{}, train, ac), std::invalid_argument);
    ac.ema_alpha = 1.5;
    CHECK_THROWS_AS(run_adaptation(c, init_detector_params(c, 1), train, train, ac), std::invalid_argument);
}
