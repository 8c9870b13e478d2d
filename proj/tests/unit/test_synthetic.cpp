#include <set>
#include <sstream>

#include "doctest.h"
#include "fracal/error.hpp"
#include "fracal/fractal.hpp"
#include "fracal/io.hpp"
#include "fracal/pipeline.hpp"
#include "fracal/synthetic.hpp"

using namespace fracal;

namespace {

ScenarioSpec small_scenario() {
    ScenarioSpec spec;
    spec.num_classes = 12;
    spec.max_count = 600;
    spec.train_images = 300;
    spec.test_images = 60;
    spec.clutter_rate = 1.5;
    return spec;
}

std::string logits_text(const SimulatedBatch& b) {
    std::ostringstream os;
    write_logits(os, {b.header, b.proposals});
    return os.str();
}

}  // namespace

TEST_CASE("rng streams are reproducible and uniform draws stay in [0, 1)") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        differs = differs || x != c.uniform();
        CHECK(a.normal() == b.normal());
        c.normal();
        CHECK(a.index(7) < 7);
        b.index(7);
        c.index(7);
    }
    CHECK(differs);
}

TEST_CASE("every generator stays inside the unit square") {
    for (auto kind : {PointProcessKind::uniform, PointProcessKind::line, PointProcessKind::gaussian_cluster,
                      PointProcessKind::sierpinski, PointProcessKind::single_cell}) {
        PointProcessSpec spec{kind, 2000, 9, {}};
        const auto pts = generate_points(spec);
        CHECK(pts.size() == 2000);
        for (const auto& p : pts) {
            CHECK(p.x >= 0.0);
            CHECK(p.x <= 1.0);
            CHECK(p.y >= 0.0);
            CHECK(p.y <= 1.0);
        }
        CHECK(generate_points(spec) == pts);
        CHECK(point_process_from_string(to_string(kind)) == kind);
    }
    CHECK_THROWS_AS(point_process_from_string("poisson"), InvalidArgument);
    CHECK_THROWS_AS(generate_points({PointProcessKind::uniform, 0, 1, {}}), InvalidArgument);
    CHECK_THROWS_AS(generate_points({PointProcessKind::line, 5, 1, {0, 0, 2, 1}}), InvalidArgument);
}

TEST_CASE("single-cell points land in one cell at every grid up to eight") {
    const PointProcessSpec spec{PointProcessKind::single_cell, 100, 3, {2, 1, 4}};
    const auto pts = generate_points(spec);
    for (std::size_t g = 1; g <= 8; ++g) {
        const auto series = build_box_count_series(pts, g);
        CHECK(series.pairs.back().occupied == 1);
    }
    CHECK(cell_index(pts[0].x, 4) == 2);
    CHECK(cell_index(pts[0].y, 4) == 1);
}

TEST_CASE("line points lie on the segment") {
    const PointProcessSpec spec{PointProcessKind::line, 500, 4, {0.1, 0.2, 0.7, 0.5}};
    for (const auto& p : generate_points(spec)) {
        const double t = (p.x - 0.1) / 0.6;
        CHECK(p.y == doctest::Approx(0.2 + 0.3 * t).epsilon(1e-9));
        CHECK(spatial_affinity(spec, p) == doctest::Approx(1.0));
    }
    CHECK(spatial_affinity(spec, {0.9, 0.0}) < 0.01);
}

TEST_CASE("frequency schedule is long-tailed and covers all groups") {
    for (const auto& spec : {ScenarioSpec::standard(), ScenarioSpec::sparse()}) {
        const auto n = spec.frequency_schedule();
        REQUIRE(n.size() == spec.num_classes);
        for (std::size_t k = 1; k < n.size(); ++k) CHECK(n[k] <= n[k - 1]);
        CHECK(n.back() >= 1);

        const auto batch = simulate_scenario(spec);
        const auto freq = compute_class_frequencies(batch.train);
        std::set<FrequencyGroup> groups;
        for (const auto& [id, f] : freq) {
            groups.insert(f.group);
            CHECK(f.instance_count == n[static_cast<std::size_t>(id - 1)]);
        }
        CHECK(groups.size() == 3);
    }
}

TEST_CASE("scenario proposals cover their ground truth") {
    const auto batch = simulate_scenario(small_scenario());
    REQUIRE(batch.proposals.size() == batch.truth_link.size());
    std::size_t linked = 0;
    for (std::size_t i = 0; i < batch.proposals.size(); ++i) {
        const auto& p = batch.proposals[i];
        CHECK(p.logits.size() == batch.header.entries());
        CHECK(p.box.x0() >= -1e-12);
        CHECK(p.box.x1() <= 1.0 + 1e-12);
        if (const auto& link = batch.truth_link[i]) {
            ++linked;
            const auto& gt = batch.ground_truth.instances[*link];
            CHECK(gt.image_id == p.image_id);
            CHECK(iou(p.box, gt.box) >= 0.5);
        }
    }
    CHECK(linked == batch.ground_truth.instances.size());
    CHECK(batch.header.mode == ScoreMode::softmax);
    CHECK(batch.header.extra["rng"] == Rng::kAlgorithm);
}

TEST_CASE("a fixed seed reproduces the scenario byte for byte") {
    const auto spec = small_scenario();
    const auto a = simulate_scenario(spec);
    const auto b = simulate_scenario(spec);
    CHECK(logits_text(a) == logits_text(b));
    CHECK(to_coco_json(a.train) == to_coco_json(b.train));
    CHECK(to_coco_json(a.ground_truth) == to_coco_json(b.ground_truth));

    auto other = spec;
    other.seed += 1;
    CHECK(logits_text(simulate_scenario(other)) != logits_text(a));
}

TEST_CASE("unbiased separable detector scores perfectly") {
    auto spec = small_scenario();
    spec.bias.frequency = 0.0;
    spec.bias.spatial = 0.0;
    spec.bias.noise = 0.0;
    spec.bias.separation = 30.0;
    const auto batch = simulate_scenario(spec);
    for (std::size_t i = 0; i < batch.proposals.size(); ++i) {
        if (!batch.truth_link[i]) continue;
        const auto& z = batch.proposals[i].logits;
        const auto best = std::max_element(z.begin(), z.end() - 1) - z.begin();
        CHECK(static_cast<ClassId>(best + 1) ==
              batch.ground_truth.instances[*batch.truth_link[i]].class_id);
    }
    const auto stats = train_statistics(batch.train);
    // Suppression is switched off so overlapping same-class objects all survive.
    PostprocessOptions keep_all;
    keep_all.nms_iou = 1.0;
    const auto result = run_method(batch, stats, parse_method("none"), keep_all);
    CHECK(result.report.ap_overall == doctest::Approx(1.0));
}

TEST_CASE("frequency bias hurts rare classes before calibration") {
    const auto batch = simulate_scenario(ScenarioSpec::standard());
    const auto stats = train_statistics(batch.train);
    const auto result = run_method(batch, stats, parse_method("none"));
    REQUIRE(result.report.ap_rare);
    REQUIRE(result.report.ap_frequent);
    CHECK(*result.report.ap_rare < *result.report.ap_frequent);
}

TEST_CASE("scenario rejects impossible settings") {
    auto spec = small_scenario();
    spec.num_classes = 0;
    CHECK_THROWS_AS(simulate_scenario(spec), InvalidArgument);
    spec = small_scenario();
    spec.bias.noise = -1.0;
    CHECK_THROWS_AS(simulate_scenario(spec), InvalidArgument);
    spec = small_scenario();
    spec.test_displacement = 1.5;
    CHECK_THROWS_AS(simulate_scenario(spec), InvalidArgument);
}
