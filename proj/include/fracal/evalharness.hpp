#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "fracal/annotations.hpp"
#include "fracal/geometry.hpp"
#include "fracal/io.hpp"

namespace fracal {

struct Detection {
    ImageId image_id = 0;
    ClassId class_id = 0;
    Box box;  // normalized, clipped to the unit square
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

inline constexpr double kDefaultNmsIou = 0.3;
inline constexpr double kDefaultMatchIou = 0.5;
inline constexpr std::size_t kDefaultMaxPerImage = 300;

struct PostprocessOptions {
    double nms_iou = kDefaultNmsIou;
    bool classwise = true;
    double score_threshold = 0.0;  // keep scores >= threshold
    std::size_t max_per_image = kDefaultMaxPerImage;  // 0 disables the cap
};

struct PostprocessResult {
    std::vector<Detection> detections;
    std::size_t input = 0;
    std::size_t below_threshold = 0;
    std::size_t suppressed = 0;
    std::size_t over_cap = 0;
};

Box clip_to_unit(const Box& b);

// One candidate per foreground entry of every record; background is skipped.
std::vector<Detection> expand_scores(const ScoresFile& scores);

// Greedy score-descending suppression inside each image (and each class when
// classwise). Ties go to the lower class id, then the earlier input. Survivors
// keep their input order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold = kDefaultNmsIou,
                           bool classwise = true);

// Threshold, class-wise NMS and per-image cap, parallel over images.
PostprocessResult postprocess(std::span<const Detection> dets, const PostprocessOptions& options = {});

// Single-IoU AP with 101-point interpolation; nullopt when the class has no
// ground truth.
std::optional<double> average_precision(std::span<const Detection> dets, const Dataset& gts,
                                        ClassId class_id, double iou_match = kDefaultMatchIou);

struct EvalReport {
    double ap_overall = 0.0;
    std::optional<double> ap_rare;
    std::optional<double> ap_common;
    std::optional<double> ap_frequent;
    std::map<ClassId, double> per_class;
    std::vector<ClassId> absent;  // categories without ground truth
    std::size_t detections_kept = 0;
    std::size_t detections_suppressed = 0;
};

// Per-class AP and macro means. Groups come from the training split; classes
// missing from `groups` fall back to their image count in `gts`.
EvalReport evaluate(std::span<const Detection> dets, const Dataset& gts,
                    const std::map<ClassId, FrequencyGroup>& groups,
                    double iou_match = kDefaultMatchIou);

nlohmann::json report_to_json(const EvalReport& report);
void print_report(std::ostream& os, const EvalReport& report);

void write_detections(std::ostream& os, std::span<const Detection> dets);
std::vector<Detection> read_detections(std::istream& is, const std::string& source = "");
void save_detections(std::span<const Detection> dets, const std::filesystem::path& path);
std::vector<Detection> load_detections(const std::filesystem::path& path);

namespace reference {
PostprocessResult postprocess(std::span<const Detection> dets, const PostprocessOptions& options = {});
EvalReport evaluate(std::span<const Detection> dets, const Dataset& gts,
                    const std::map<ClassId, FrequencyGroup>& groups,
                    double iou_match = kDefaultMatchIou);
}  // namespace reference

}  // namespace fracal
