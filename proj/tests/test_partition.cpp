#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "test_util.hpp"
#include "titan/partition.hpp"

using namespace titan;
using namespace titan::test;

TEST_CASE("detection variance equals a brute-force loop") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = random_passes(rng);
        const DetectionVariance a = detection_variance(s);
        const DetectionVariance b = brute_variance(s);
        CHECK(std::abs(a.box - b.box) <= 1e-12);
        CHECK(std::abs(a.score - b.score) <= 1e-12);
        CHECK(std::abs(a.value - b.value) <= 1e-12);
    }
}

TEST_CASE("two-pass hand case") {
    DetectionSet p1, p2;
    p1.boxes = {{0, 0, 2, 2}};
    p1.scores = {{0.6, 0.4}};
    p2.boxes = {{0, 0, 4, 2}};
    p2.scores = {{0.8, 0.2}};
    const std::vector<DetectionSet> s = {p1, p2};
    const DetectionVariance v = detection_variance(s);
    CHECK(v.box == 1.0);
    CHECK(v.score == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(v.value == doctest::Approx(0.02).epsilon(1e-14));
}

TEST_CASE("a single pass or identical passes have zero variance") {
    Rng rng(4);
    auto s = random_passes(rng);
    s.resize(1);
    CHECK(detection_variance(s).value == 0.0);
    s.push_back(s[0]);
    s.push_back(s[0]);
    const DetectionVariance v = detection_variance(s);
    CHECK(v.box <= 1e-30);
    CHECK(v.score <= 1e-30);
}

TEST_CASE("variance input errors") {
    CHECK_THROWS_AS(detection_variance(std::vector<DetectionSet>{}), std::invalid_argument);
    DetectionSet a, b;
    a.boxes = {{0, 0, 1, 1}};
    a.scores = {{0.5}};
    b = a;
    b.boxes.push_back({0, 0, 1, 1});
    b.scores.push_back({0.5});
    CHECK_THROWS_AS(detection_variance(std::vector<DetectionSet>{a, b}), std::invalid_argument);
}

TEST_CASE("partition hand case") {
    const std::vector<double> v = {0.5, 0.1, 0.9, 0.3};
    const DomainPartition p = partition(v, 0.5);
    CHECK(p.ranks == std::vector<int>{3, 1, 4, 2});
    CHECK(p.levels == std::vector<double>{0.75, 0.25, 1.0, 0.5});
    CHECK(p.source_similar == std::vector<std::size_t>{0, 2, 3});
    CHECK(p.source_dissimilar == std::vector<std::size_t>{1});
}

TEST_CASE("partition predicate and scale invariance") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 40));
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform(0.0, 1.0) * std::pow(10.0, rng.uniform(-6.0, 0.0));
        const double factor = std::pow(10.0, rng.uniform(-3.0, 3.0));
        std::vector<double> scaled = v;
        for (double& x : scaled) x *= factor;
        for (int s = 1; s <= 9; ++s) {
            const double sigma = s / 10.0;
            const DomainPartition p = partition(v, sigma);

            std::vector<int> sorted = p.ranks;
            std::sort(sorted.begin(), sorted.end());
            std::vector<int> expect(n);
            std::iota(expect.begin(), expect.end(), 1);
            REQUIRE(sorted == expect);

            const std::set<std::size_t> sim(p.source_similar.begin(), p.source_similar.end());
            CHECK(p.source_similar.size() + p.source_dissimilar.size() == n);
            for (std::size_t i = 0; i < n; ++i) {
                const double level = static_cast<double>(p.ranks[i]) / static_cast<double>(n);
                CHECK(p.levels[i] == level);
                CHECK(sim.contains(i) == (level >= sigma));
                for (std::size_t j = 0; j < n; ++j) {
                    if (v[i] < v[j]) CHECK(p.ranks[i] < p.ranks[j]);
                }
            }

            const DomainPartition q = partition(scaled, sigma);
            CHECK(q.ranks == p.ranks);
            CHECK(q.source_similar == p.source_similar);
            CHECK(q.source_dissimilar == p.source_dissimilar);
        }
    }
}

TEST_CASE("ties are ranked by index") {
    const std::vector<double> v = {0.2, 0.2, 0.1, 0.2};
    const DomainPartition p = partition(v, 0.5);
    CHECK(p.ranks == std::vector<int>{2, 3, 1, 4});
}

TEST_CASE("partition argument errors") {
    const std::vector<double> v = {1.0, 2.0};
    CHECK_THROWS_AS(partition(v, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(partition(v, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(partition(std::vector<double>{}, 0.5), std::invalid_argument);
}

TEST_CASE("MC passes without dropout have zero variance") {
    DetectorConfig c;
    c.image_size = 8;
    c.hidden_dim = 8;
    c.ffn_dim = 16;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.num_queries = 4;
    c.num_classes = 2;
    const ParamSet p = init_detector_params(c, 2);
    Rng rng(3);
    const std::vector<Tensor> imgs = {uniform_tensor(rng, {3, 8, 8}, -1.0, 1.0), uniform_tensor(rng, {3, 8, 8}, -1.0, 1.0)};
    const VarianceReport none = variance_report(c, p, imgs, 4, 0.0, 7);
    for (const auto& v : none.per_image) CHECK(v.value == 0.0);
    const VarianceReport some = variance_report(c, p, imgs, 4, 0.3, 7);
    for (const auto& v : some.per_image) CHECK(v.value > 0.0);
    const VarianceReport again = variance_report(c, p, imgs, 4, 0.3, 7);
    for (std::size_t i = 0; i < imgs.size(); ++i) CHECK(again.per_image[i].value == some.per_image[i].value);
    CHECK_THROWS_AS(mc_forward(c, p, imgs[0], 0, 0.1, 1), std::invalid_argument);
}
