#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fracal/annotations.hpp"
#include "fracal/calibration.hpp"

namespace fracal {

// Weights file: header {format, beta, lambda, mode, background_convention,
// variant}, a "classes" table keyed by class id and optional "grid_priors"
// holding per-class cell counts keyed by grid size.
struct WeightsFile {
    CalibrationWeights weights;
    ScoreMode mode = ScoreMode::softmax;
    nlohmann::json classes;  // class_id -> {name, n, image_count, group, phi, ...}
};

nlohmann::json weights_to_json(const CalibrationWeights& w, const nlohmann::json& classes,
                               ScoreMode mode, const nlohmann::json& extra_header = {});
WeightsFile weights_from_json(const nlohmann::json& doc, const std::string& source = "");
WeightsFile load_weights(const std::filesystem::path& path);
void save_json(const nlohmann::json& doc, const std::filesystem::path& path);

// Group per class as recorded in the weights "classes" table.
std::map<ClassId, FrequencyGroup> groups_from_classes(const nlohmann::json& classes);

// Header shared by logits and scores files: one JSON object on the first line.
struct RecordHeader {
    ScoreMode mode = ScoreMode::softmax;
    std::size_t num_classes = 0;
    std::vector<ClassId> class_ids;  // empty means 0..C-1
    nlohmann::json extra = nlohmann::json::object();

    // Class id of foreground entry k.
    ClassId class_at(std::size_t k) const;
    std::size_t entries() const { return num_classes + (mode == ScoreMode::softmax ? 1 : 0); }
};

struct LogitsFile {
    RecordHeader header;
    std::vector<LogitRecord> records;
};

struct ScoresFile {
    RecordHeader header;
    std::vector<ScoredRecord> records;
};

void write_logits(std::ostream& os, const LogitsFile& file);
void write_scores(std::ostream& os, const ScoresFile& file);
LogitsFile read_logits(std::istream& is, const std::string& source = "");
ScoresFile read_scores(std::istream& is, const std::string& source = "");
LogitsFile load_logits(const std::filesystem::path& path);
ScoresFile load_scores(const std::filesystem::path& path);
void save_logits(const LogitsFile& file, const std::filesystem::path& path);
void save_scores(const ScoresFile& file, const std::filesystem::path& path);

}  // namespace fracal
