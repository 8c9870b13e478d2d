#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fracal/calibration.hpp"
#include "fracal/error.hpp"

using namespace fracal;

namespace {

CalibrationWeights weights(std::vector<std::uint64_t> counts, std::vector<double> phi,
                           double beta = 10.0, double lambda = 2.0) {
    std::vector<ClassId> ids(counts.size());
    std::iota(ids.begin(), ids.end(), ClassId{1});
    return CalibrationWeights(ids, std::move(counts), std::move(phi), beta, lambda);
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

std::vector<double> random_logits(std::mt19937_64& gen, std::size_t n) {
    std::normal_distribution<double> nd(0.0, 2.0);
    std::vector<double> z(n);
    for (auto& v : z) v = nd(gen);
    return z;
}

}  // namespace

TEST_CASE("class calibration worked example") {
    const auto w = weights({10, 90}, {1, 1});
    const std::vector<double> z{1.0, 2.0, 0.5};
    const auto out = class_calibrate(z, ScoreMode::softmax, w);
    // Oracle in extended precision.
    const long double e0 = 1.0L - std::log10(0.1L) + std::log10(0.5L);
    const long double e1 = 2.0L - std::log10(0.9L) + std::log10(0.5L);
    CHECK(std::abs(out[0] - static_cast<double>(e0)) <= 1e-12);
    CHECK(std::abs(out[1] - static_cast<double>(e1)) <= 1e-12);
    CHECK(std::abs(out[0] - 1.6989700) <= 1e-6);
    CHECK(std::abs(out[1] - 1.7447275) <= 1e-6);
    CHECK(out[2] == 0.5);
}

TEST_CASE("class calibration is the identity for equal frequencies") {
    std::mt19937_64 gen(1);
    const auto w = weights({7, 7, 7, 7}, {1, 1, 1, 1});
    for (int i = 0; i < 50; ++i) {
        const auto z = random_logits(gen, 5);
        check_close(class_calibrate(z, ScoreMode::softmax, w), z, 1e-12);
        const std::vector<double> zs(z.begin(), z.end() - 1);
        check_close(class_calibrate(zs, ScoreMode::sigmoid, w), zs, 1e-12);
    }
}

TEST_CASE("zero-frequency classes use a surrogate count of one") {
    const auto w = weights({0, 9}, {1, 1});
    const auto out = class_calibrate(std::vector<double>{0.0, 0.0, 0.0}, ScoreMode::softmax, w);
    CHECK(std::isfinite(out[0]));
    CHECK(out[0] == doctest::Approx(-std::log10(1.0 / 9.0) + std::log10(0.5)));
    CHECK(w.zero_frequency_classes() == std::vector<ClassId>{1});
}

TEST_CASE("natural base matches the pcsa baseline") {
    std::mt19937_64 gen(2);
    const auto w = weights({3, 40, 500}, {1, 1.5, 2}, std::exp(1.0));
    for (int i = 0; i < 20; ++i) {
        const auto z = random_logits(gen, 4);
        check_close(softmax(class_calibrate(z, ScoreMode::softmax, w)),
                    baseline_calibrate(z, ScoreMode::softmax, w, {Baseline::Kind::pcsa, 0.0}), 1e-12);
    }
}

TEST_CASE("grid calibration with one cell equals class calibration") {
    std::mt19937_64 gen(3);
    auto w = weights({5, 50, 500}, {1, 1, 1});
    w.set_grid_counts(1, {{5}, {50}, {500}});
    for (int i = 0; i < 50; ++i) {
        const auto z = random_logits(gen, 4);
        const Point u{std::uniform_real_distribution<double>(0, 1)(gen), 0.3};
        CHECK(grid_calibrate(z, ScoreMode::softmax, u, w, 1) == class_calibrate(z, ScoreMode::softmax, w));
    }
}

TEST_CASE("grid calibration boosts empty cells") {
    auto w = weights({4, 4}, {1, 1});
    w.set_grid_counts(2, {{4, 0, 0, 0}, {1, 1, 1, 1}});
    const std::vector<double> z{0.0, 0.0, 0.0};
    const auto seen = grid_calibrate(z, ScoreMode::softmax, {0.1, 0.1}, w, 2);
    const auto empty = grid_calibrate(z, ScoreMode::softmax, {0.9, 0.9}, w, 2);
    const double target = std::log10(1.0 / 8.0);
    CHECK(seen[0] == doctest::Approx(-std::log10(0.5) + target));
    CHECK(empty[0] == doctest::Approx(-std::log10(kGridPriorFloor) + target));
    CHECK(empty[0] - seen[0] > 10.0);
    CHECK(empty[1] == seen[1]);
    CHECK(empty[2] == 0.0);

    CHECK_THROWS_AS(grid_calibrate(z, ScoreMode::softmax, {0.1, 0.1}, w, 4), InvalidArgument);
    CHECK_THROWS_AS(w.set_grid_counts(2, {{1, 0, 0, 0}, {1, 1, 1, 1}}), InvalidArgument);
}

TEST_CASE("space calibration worked example") {
    const auto w = weights({1, 1}, {2, 1});
    const std::vector<double> p{0.2, 0.5, 0.3};
    const auto s = space_calibrate(p, w);
    check_close(s, {0.05, 0.5, 0.3}, 1e-15);

    const double z = 0.85;
    const std::vector<double> expected{0.05 / z, 0.5 / z, 0.3 / z};
    // Softmax of these logits reproduces p, equal counts keep C out of the way.
    const std::vector<double> logits{std::log(0.2), std::log(0.5), std::log(0.3)};
    const auto f = fracal::fracal(logits, w);
    check_close(f, expected, 1e-12);
    CHECK(std::abs(f[0] - 0.0588235) <= 1e-6);
    CHECK(std::abs(f[1] - 0.5882353) <= 1e-6);
    CHECK(std::abs(f[2] - 0.3529412) <= 1e-6);
}

TEST_CASE("space calibration with lambda zero is the identity") {
    std::mt19937_64 gen(4);
    const auto w = weights({1, 5, 25}, {0.3, 1.1, 1.9}, 10.0, 0.0);
    for (int i = 0; i < 20; ++i) {
        const auto p = softmax(random_logits(gen, 4));
        check_close(space_calibrate(p, w), p, 1e-15);
    }
}

TEST_CASE("fracal reduces to softmax without frequency or spread differences") {
    std::mt19937_64 gen(5);
    const auto w = weights({6, 6, 6}, {0.4, 1.2, 2.0}, 10.0, 0.0);
    for (int i = 0; i < 20; ++i) {
        const auto z = random_logits(gen, 4);
        check_close(fracal::fracal(z, w), softmax(z), 1e-12);
        check_close(fracal_opposite(z, w), softmax(z), 1e-12);
    }
}

TEST_CASE("fracal output is a distribution and invariant to logit shift") {
    std::mt19937_64 gen(6);
    const auto w = weights({2, 30, 800, 0}, {0.7, 1.3, 1.9, 0.0});
    for (int i = 0; i < 100; ++i) {
        const auto z = random_logits(gen, 5);
        const auto f = fracal::fracal(z, w);
        CHECK(std::abs(sum(f) - 1.0) <= 1e-12);
        auto shifted = z;
        for (auto& v : shifted) v += 41.0;
        check_close(fracal::fracal(shifted, w), f, 1e-12);
    }
}

TEST_CASE("scaling every phi keeps foreground ratios but moves the background share") {
    std::mt19937_64 gen(11);
    const auto w = weights({2, 30, 800}, {0.8, 1.3, 1.9});
    const auto half = w.with_phi({0.4, 0.65, 0.95});
    for (int i = 0; i < 50; ++i) {
        const auto z = random_logits(gen, 4);
        const auto f = fracal::fracal(z, w);
        const auto g = fracal::fracal(z, half);
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) {
                CHECK(f[a] / f[b] == doctest::Approx(g[a] / g[b]).epsilon(1e-12));
            }
        }
        // Halving phi with lambda 2 multiplies foreground mass by 4 relative to background.
        const double fg_f = f[0] + f[1] + f[2];
        const double fg_g = g[0] + g[1] + g[2];
        CHECK((fg_g / g[3]) / (fg_f / f[3]) == doctest::Approx(4.0).epsilon(1e-10));
    }
}

TEST_CASE("fracal keeps the ranking inside one proposal for equal statistics") {
    std::mt19937_64 gen(7);
    const auto w = weights({9, 9, 9, 9}, {1.5, 1.5, 1.5, 1.5});
    for (int i = 0; i < 30; ++i) {
        const auto z = random_logits(gen, 5);
        const auto f = fracal::fracal(z, w);
        for (std::size_t a = 0; a < 4; ++a) {
            for (std::size_t b = 0; b < 4; ++b) {
                if (z[a] < z[b]) CHECK(f[a] < f[b]);
            }
        }
    }
}

TEST_CASE("phi floor guards degenerate classes") {
    const auto w = weights({5, 5}, {0.0, 2.0});
    CHECK(w.guarded_phi(0) == kPhiFloor);
    CHECK(w.floored_phi_classes() == std::vector<ClassId>{1});
    const auto f = fracal::fracal(std::vector<double>{0.0, 0.0, 0.0}, w);
    for (double v : f) CHECK(std::isfinite(v));
    CHECK(f[0] > f[1]);
}

TEST_CASE("opposite multiplies by the spread weight") {
    const auto w = weights({1, 1}, {2.0, 1.0});
    const std::vector<double> logits{0.0, 0.0, 0.0};
    const auto opp = fracal_opposite(logits, w);
    CHECK(opp[0] / opp[1] == doctest::Approx(4.0));
    const auto f = fracal::fracal(logits, w);
    CHECK(f[0] / f[1] == doctest::Approx(0.25));
    CHECK(std::abs(sum(opp) - 1.0) <= 1e-12);
}

TEST_CASE("binary fracal worked example and limits") {
    const auto w = weights({3, 3}, {1.0, 1.0});
    const auto out = fracal_binary(std::vector<double>{0.0, 0.0}, w);
    CHECK(std::abs(out[0] - 0.25) <= 1e-12);
    CHECK(std::abs(out[1] - 0.25) <= 1e-12);

    const auto low = fracal_binary(std::vector<double>{-60.0, 0.0}, w);
    CHECK(low[0] < 1e-20);

    std::mt19937_64 gen(8);
    const auto uneven = weights({3, 30, 300}, {0.5, 1.0, 1.8});
    for (int i = 0; i < 30; ++i) {
        const auto z = random_logits(gen, 3);
        const auto base = fracal_binary(z, uneven);
        for (double v : base) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        check_close(fracal_binary(z, uneven.with_phi({0.25, 0.5, 0.9})), base, 1e-12);
    }
}

TEST_CASE("norcal worked example") {
    const auto w = weights({10, 100}, {1, 1});
    const auto out = norcal_probabilities(std::vector<double>{0.2, 0.3, 0.5}, w, 1.0);
    const long double denom = 0.02L + 0.003L + 0.5L;
    CHECK(std::abs(out[0] - static_cast<double>(0.02L / denom)) <= 1e-12);
    CHECK(std::abs(out[1] - static_cast<double>(0.003L / denom)) <= 1e-12);
    CHECK(std::abs(out[0] - 0.038241) <= 1e-6);
    CHECK(std::abs(out[1] - 0.005736) <= 1e-6);
    CHECK(std::abs(out[2] - 0.956023) <= 1e-6);
    CHECK(std::abs(sum(out) - 1.0) <= 1e-12);
}

TEST_CASE("logit adjustment baselines") {
    std::mt19937_64 gen(9);
    const auto w = weights({2, 20, 200}, {1, 1, 1});
    for (int i = 0; i < 20; ++i) {
        const auto z = random_logits(gen, 4);
        check_close(baseline_calibrate(z, ScoreMode::softmax, w, {Baseline::Kind::la, 0.0}), softmax(z),
                    1e-15);
        auto la_logits = z;
        auto iif_logits = z;
        for (std::size_t k = 0; k < 3; ++k) {
            la_logits[k] = z[k] - 0.5 * std::log(w.prior(k));
            iif_logits[k] = -z[k] * std::log(w.prior(k));
        }
        check_close(baseline_calibrate(z, ScoreMode::softmax, w, {Baseline::Kind::la, 0.5}),
                    softmax(la_logits), 1e-12);
        check_close(baseline_calibrate(z, ScoreMode::softmax, w, {Baseline::Kind::iif, 0.0}),
                    softmax(iif_logits), 1e-12);
        const std::vector<double> zs(z.begin(), z.end() - 1);
        const auto sig = baseline_calibrate(zs, ScoreMode::sigmoid, w, {Baseline::Kind::la, 0.0});
        for (std::size_t k = 0; k < 3; ++k) CHECK(sig[k] == doctest::Approx(sigmoid(zs[k])));
    }
    CHECK_THROWS_AS(baseline_calibrate(std::vector<double>{0, 0, 0, 0}, ScoreMode::softmax, w,
                                       {Baseline::Kind::la, -1.0}),
                    InvalidArgument);
    CHECK_THROWS_AS(baseline_calibrate(std::vector<double>{0, 0, 0, 0}, ScoreMode::softmax, w,
                                       {Baseline::Kind::norcal, -0.5}),
                    InvalidArgument);
}

TEST_CASE("weights reject invalid hyperparameters") {
    CHECK_THROWS_AS(weights({1, 2}, {1, 1}, 1.0), InvalidArgument);
    CHECK_THROWS_AS(weights({1, 2}, {1, 1}, 0.5), InvalidArgument);
    CHECK_THROWS_AS(weights({1, 2}, {1, 1}, 10.0, -1.0), InvalidArgument);
    CHECK_THROWS_AS(weights({1, 2}, {1}, 10.0), InvalidArgument);
    CHECK_THROWS_AS(weights({1, 2}, {1, 2.5}, 10.0), InvalidArgument);
    CHECK_THROWS_AS(weights({0, 0}, {1, 1}, 10.0), InvalidArgument);
    const auto w = weights({1, 2}, {1, 1});
    CHECK_THROWS_AS(w.with_beta(1.0), InvalidArgument);
    CHECK_THROWS_AS(class_calibrate(std::vector<double>{0, 0}, ScoreMode::softmax, w), InvalidArgument);
}

TEST_CASE("method parsing and mode checks") {
    CHECK(parse_method("grid(4)").kind == MethodKind::grid);
    CHECK(parse_method("grid(4)").grid == 4);
    CHECK(parse_method("la(0.5)").tau == 0.5);
    CHECK(parse_method("norcal(2)").gamma == 2.0);
    CHECK(parse_method("class-only").kind == MethodKind::class_only);
    CHECK(parse_method("fracal-binary").kind == MethodKind::fracal_binary);
    CHECK(parse_method(parse_method("grid(2)").name()).grid == 2);
    CHECK_THROWS_AS(parse_method("bogus"), InvalidArgument);

    CHECK_THROWS_AS(check_method_mode(parse_method("fracal"), ScoreMode::sigmoid), ModeMismatch);
    CHECK_THROWS_AS(check_method_mode(parse_method("fracal_binary"), ScoreMode::softmax), ModeMismatch);
    CHECK_NOTHROW(check_method_mode(parse_method("class_only"), ScoreMode::sigmoid));

    const auto w = weights({1, 2}, {1, 1});
    const LogitRecord rec{1, {0.5, 0.5, 0.1, 0.1}, {0.3, -0.2, 0.9}};
    CHECK(apply_method(rec, ScoreMode::softmax, w, parse_method("none")) == softmax(rec.logits));
}

TEST_CASE("parallel batch calibration matches the serial reference") {
    std::mt19937_64 gen(10);
    auto w = weights({1, 4, 16, 64, 0}, {0.2, 0.9, 1.4, 1.95, 1.0});
    w.set_grid_counts(1, {{1}, {4}, {16}, {64}, {0}});
    w.set_grid_counts(2, {{1, 0, 0, 0}, {1, 1, 1, 1}, {4, 4, 4, 4}, {16, 16, 16, 16}, {0, 0, 0, 0}});
    std::vector<LogitRecord> softmax_records, sigmoid_records;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const Box b{u(gen), u(gen), 0.1, 0.1};
        softmax_records.push_back({i / 10, b, random_logits(gen, 6)});
        sigmoid_records.push_back({i / 10, b, random_logits(gen, 5)});
    }
    for (const char* name : {"none", "class_only", "grid(1)", "grid(2)", "fracal", "opposite", "la",
                             "iif", "pcsa", "norcal"}) {
        const auto m = parse_method(name);
        const auto a = calibrate_batch(softmax_records, ScoreMode::softmax, w, m);
        const auto b = reference::calibrate_batch(softmax_records, ScoreMode::softmax, w, m);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].scores == b[i].scores);
    }
    const auto m = parse_method("fracal_binary");
    const auto a = calibrate_batch(sigmoid_records, ScoreMode::sigmoid, w, m);
    const auto b = reference::calibrate_batch(sigmoid_records, ScoreMode::sigmoid, w, m);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].scores == b[i].scores);

    std::vector<LogitRecord> bad = softmax_records;
    bad[250].logits.pop_back();
    CHECK_THROWS_AS(calibrate_batch(bad, ScoreMode::softmax, w, parse_method("fracal")), InvalidArgument);
}
