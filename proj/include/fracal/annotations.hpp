#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fracal/geometry.hpp"

namespace fracal {

using ClassId = std::int64_t;
using ImageId = std::int64_t;

struct ObjectInstance {
    std::int64_t annotation_id = 0;
    ClassId class_id = 0;
    ImageId image_id = 0;
    Point center;  // box center normalized by image width / height
    Box box;       // normalized box, used by the evaluation harness
};

struct ImageInfo {
    double width = 0.0;
    double height = 0.0;
};

struct Dataset {
    std::vector<ObjectInstance> instances;
    std::map<ClassId, std::string> categories;
    std::map<ImageId, ImageInfo> images;
    // Annotations dropped while loading because w <= 0 or h <= 0.
    std::size_t degenerate_skipped = 0;
    std::size_t crowd_skipped = 0;

    std::vector<ClassId> class_ids() const;
    std::vector<Point> centers_of(ClassId cls) const;
};

enum class FrequencyGroup { rare, common, frequent };

const char* to_string(FrequencyGroup g);
FrequencyGroup group_from_string(const std::string& s);
FrequencyGroup group_for_image_count(std::size_t image_count);

struct ClassFrequency {
    ClassId class_id = 0;
    std::size_t instance_count = 0;
    std::size_t image_count = 0;
    FrequencyGroup group = FrequencyGroup::rare;
};

using FrequencyTable = std::map<ClassId, ClassFrequency>;

// counts[j][i] holds the number of centers in column i, row j.
struct SpatialHistogram {
    std::size_t grid_size = 0;
    std::vector<std::vector<std::uint64_t>> counts;

    std::uint64_t total() const;
};

// Parses COCO/LVIS-style JSON. Crowd annotations and degenerate boxes are
// skipped; unknown image or category references raise ParseError.
Dataset parse_annotations(const nlohmann::json& doc, const std::string& source = "");
Dataset load_annotations(const std::filesystem::path& path);

// Writes the dataset back in the same schema (pixel bbox, iscrowd = 0).
nlohmann::json to_coco_json(const Dataset& ds);
void save_annotations(const Dataset& ds, const std::filesystem::path& path);

FrequencyTable compute_class_frequencies(const Dataset& ds);

SpatialHistogram spatial_histogram(const Dataset& ds, std::optional<ClassId> class_filter,
                                   std::size_t grid_size);

void write_frequency_csv(std::ostream& os, const Dataset& ds, const FrequencyTable& freq);
void write_histogram_csv(std::ostream& os, const SpatialHistogram& hist);
nlohmann::json histogram_to_json(const SpatialHistogram& hist);

}  // namespace fracal
