#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fracal/error.hpp"
#include "fracal/io.hpp"

using namespace fracal;
using nlohmann::json;

namespace {

CalibrationWeights sample_weights() {
    CalibrationWeights w({3, 10, 42}, {5, 0, 120}, {1.25, 0.0, 1.9}, 7.5, 1.5);
    w.set_grid_counts(2, {{5, 0, 0, 0}, {0, 0, 0, 0}, {30, 30, 30, 30}});
    return w;
}

}  // namespace

TEST_CASE("weights survive a JSON round trip") {
    const auto w = sample_weights();
    const json classes = {{"3", {{"name", "a"}, {"group", "rare"}}},
                          {"10", {{"name", "b"}, {"group", "rare"}}},
                          {"42", {{"name", "c"}, {"group", "frequent"}}}};
    const auto doc = weights_to_json(w, classes, ScoreMode::sigmoid);
    const auto back = weights_from_json(json::parse(doc.dump()));
    CHECK(back.mode == ScoreMode::sigmoid);
    CHECK(back.weights.class_ids() == w.class_ids());
    CHECK(back.weights.counts() == w.counts());
    CHECK(back.weights.phi() == w.phi());
    CHECK(back.weights.beta() == w.beta());
    CHECK(back.weights.lambda() == w.lambda());
    CHECK(back.weights.grids() == std::vector<std::size_t>{2});
    CHECK(back.weights.grid_counts(2) == w.grid_counts(2));

    const auto groups = groups_from_classes(back.classes);
    CHECK(groups.at(42) == FrequencyGroup::frequent);
    CHECK(groups.at(3) == FrequencyGroup::rare);
}

TEST_CASE("class ids are ordered numerically, not lexically") {
    const auto doc = weights_to_json(sample_weights(), json::object(), ScoreMode::softmax);
    const auto back = weights_from_json(doc);
    CHECK(back.weights.class_ids() == std::vector<ClassId>{3, 10, 42});
}

TEST_CASE("malformed weights are rejected") {
    auto doc = weights_to_json(sample_weights(), json::object(), ScoreMode::softmax);
    auto bad = doc;
    bad["beta"] = 1.0;
    CHECK_THROWS(weights_from_json(bad));
    bad = doc;
    bad.erase("classes");
    CHECK_THROWS_AS(weights_from_json(bad), ParseError);
    bad = doc;
    bad["format"] = "something-else";
    CHECK_THROWS_AS(weights_from_json(bad), ParseError);
    CHECK_THROWS_AS(load_weights("/nonexistent/weights.json"), ParseError);
}

TEST_CASE("logits files round-trip and validate record length") {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    LogitsFile file;
    file.header.mode = ScoreMode::softmax;
    file.header.num_classes = 3;
    file.header.class_ids = {5, 6, 9};
    file.header.extra = {{"seed", 4}};
    for (int i = 0; i < 40; ++i) {
        file.records.push_back({i % 7, {0.5, 0.4, 0.2, 0.1}, {nd(gen), nd(gen), nd(gen), nd(gen)}});
    }
    std::stringstream ss;
    write_logits(ss, file);
    const auto back = read_logits(ss);
    CHECK(back.header.mode == ScoreMode::softmax);
    CHECK(back.header.class_ids == file.header.class_ids);
    CHECK(back.header.extra["seed"] == 4);
    REQUIRE(back.records.size() == file.records.size());
    for (std::size_t i = 0; i < file.records.size(); ++i) {
        CHECK(back.records[i].logits == file.records[i].logits);
        CHECK(back.records[i].box == file.records[i].box);
        CHECK(back.records[i].image_id == file.records[i].image_id);
    }
    CHECK(back.header.class_at(2) == 9);

    file.records[3].logits.pop_back();
    std::stringstream short_record;
    write_logits(short_record, file);
    CHECK_THROWS_AS(read_logits(short_record), ParseError);

    std::stringstream no_header("{\"image_id\":1,\"box\":[0,0,1,1],\"logits\":[0,0]}\n");
    CHECK_THROWS_AS(read_logits(no_header), ParseError);
}

TEST_CASE("header without class ids maps entries to their index") {
    RecordHeader h;
    h.mode = ScoreMode::sigmoid;
    h.num_classes = 4;
    CHECK(h.class_at(3) == 3);
    CHECK(h.entries() == 4);
    h.mode = ScoreMode::softmax;
    CHECK(h.entries() == 5);
}

TEST_CASE("scores files round-trip through disk") {
    ScoresFile file;
    file.header.mode = ScoreMode::sigmoid;
    file.header.num_classes = 2;
    file.records.push_back({1, {0.5, 0.5, 0.2, 0.2}, {0.25, 0.75}});
    const auto path = std::filesystem::temp_directory_path() / "fracal_io_scores_test.jsonl";
    save_scores(file, path);
    const auto back = load_scores(path);
    std::filesystem::remove(path);
    CHECK(back.header.mode == ScoreMode::sigmoid);
    REQUIRE(back.records.size() == 1);
    CHECK(back.records[0].scores == file.records[0].scores);
}
