#include "fracal/evalharness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "fracal/error.hpp"

namespace fracal {

using nlohmann::json;

Box clip_to_unit(const Box& b) {
    const double x0 = std::clamp(b.x0(), 0.0, 1.0);
    const double y0 = std::clamp(b.y0(), 0.0, 1.0);
    const double x1 = std::clamp(b.x1(), 0.0, 1.0);
    const double y1 = std::clamp(b.y1(), 0.0, 1.0);
    return {(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
}

std::vector<Detection> expand_scores(const ScoresFile& scores) {
    std::vector<Detection> out;
    const std::size_t C = scores.header.num_classes;
    out.reserve(scores.records.size() * C);
    for (const auto& rec : scores.records) {
        const Box box = clip_to_unit(rec.box);
        for (std::size_t k = 0; k < C; ++k) {
            out.push_back({rec.image_id, scores.header.class_at(k), box, rec.scores.at(k)});
        }
    }
    return out;
}

namespace {

// Rank order: score descending, then lower class id, then input position.
void rank(std::span<const Detection> dets, std::vector<std::size_t>& idx) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return dets[a].class_id < dets[b].class_id;
    });
}

// Greedy suppression over one ranked bucket; clears keep[] for losers.
std::size_t suppress(std::span<const Detection> dets, const std::vector<std::size_t>& ranked,
                     double iou_threshold, std::vector<char>& keep) {
    std::size_t removed = 0;
    for (std::size_t a = 0; a < ranked.size(); ++a) {
        if (!keep[ranked[a]]) continue;
        for (std::size_t b = a + 1; b < ranked.size(); ++b) {
            if (keep[ranked[b]] && iou(dets[ranked[a]].box, dets[ranked[b]].box) > iou_threshold) {
                keep[ranked[b]] = 0;
                ++removed;
            }
        }
    }
    return removed;
}

using Buckets = std::vector<std::vector<std::size_t>>;

Buckets bucket_by_image(std::span<const Detection> dets) {
    std::map<ImageId, std::vector<std::size_t>> by_image;
    for (std::size_t i = 0; i < dets.size(); ++i) by_image[dets[i].image_id].push_back(i);
    Buckets out;
    out.reserve(by_image.size());
    for (auto& [id, v] : by_image) out.push_back(std::move(v));
    return out;
}

struct ImageTally {
    std::size_t below_threshold = 0;
    std::size_t suppressed = 0;
    std::size_t over_cap = 0;
};

// Postprocess one image's candidates in place on keep[].
ImageTally process_image(std::span<const Detection> dets, const std::vector<std::size_t>& members,
                         const PostprocessOptions& options, std::vector<char>& keep) {
    ImageTally tally;
    std::map<ClassId, std::vector<std::size_t>> per_class;
    for (std::size_t i : members) {
        if (dets[i].score < options.score_threshold) {
            keep[i] = 0;
            ++tally.below_threshold;
            continue;
        }
        per_class[options.classwise ? dets[i].class_id : 0].push_back(i);
    }
    std::vector<std::size_t> survivors;
    for (auto& [cls, idx] : per_class) {
        rank(dets, idx);
        tally.suppressed += suppress(dets, idx, options.nms_iou, keep);
        for (std::size_t i : idx) {
            if (keep[i]) survivors.push_back(i);
        }
    }
    if (options.max_per_image > 0 && survivors.size() > options.max_per_image) {
        std::sort(survivors.begin(), survivors.end());
        rank(dets, survivors);
        for (std::size_t r = options.max_per_image; r < survivors.size(); ++r) {
            keep[survivors[r]] = 0;
            ++tally.over_cap;
        }
    }
    return tally;
}

PostprocessResult collect(std::span<const Detection> dets, const std::vector<char>& keep,
                          const std::vector<ImageTally>& tallies) {
    PostprocessResult res;
    res.input = dets.size();
    for (const auto& t : tallies) {
        res.below_threshold += t.below_threshold;
        res.suppressed += t.suppressed;
        res.over_cap += t.over_cap;
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (keep[i]) res.detections.push_back(dets[i]);
    }
    return res;
}

void check_options(const PostprocessOptions& options) {
    if (!(options.nms_iou >= 0.0 && options.nms_iou <= 1.0)) {
        throw InvalidArgument("NMS IoU threshold must lie in [0, 1]");
    }
}

// Precision envelope sampled at recall 0.00, 0.01, ..., 1.00.
double interpolated_ap(const std::vector<char>& is_tp, std::size_t num_gt) {
    std::vector<double> precision(is_tp.size());
    std::vector<double> recall(is_tp.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < is_tp.size(); ++i) {
        tp += is_tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    for (std::size_t i = precision.size(); i-- > 1;) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double sum = 0.0;
    for (int r = 0; r <= 100; ++r) {
        const double level = static_cast<double>(r) / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) {
            sum += precision[static_cast<std::size_t>(it - recall.begin())];
        }
    }
    return sum / 101.0;
}

struct GroundTruthIndex {
    // class -> image -> boxes
    std::map<ClassId, std::unordered_map<ImageId, std::vector<Box>>> boxes;
    std::map<ClassId, std::size_t> counts;
};

GroundTruthIndex index_ground_truth(const Dataset& gts) {
    GroundTruthIndex index;
    for (const auto& inst : gts.instances) {
        index.boxes[inst.class_id][inst.image_id].push_back(inst.box);
        ++index.counts[inst.class_id];
    }
    return index;
}

double class_ap(std::span<const Detection> dets, std::vector<std::size_t> idx,
                const std::unordered_map<ImageId, std::vector<Box>>& gt_boxes, std::size_t num_gt,
                double iou_match) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::unordered_map<ImageId, std::vector<char>> matched;
    std::vector<char> is_tp;
    is_tp.reserve(idx.size());
    for (std::size_t i : idx) {
        const auto& d = dets[i];
        const auto gt = gt_boxes.find(d.image_id);
        bool hit = false;
        if (gt != gt_boxes.end()) {
            auto& used = matched[d.image_id];
            used.resize(gt->second.size(), 0);
            double best = iou_match;
            std::ptrdiff_t best_j = -1;
            for (std::size_t j = 0; j < gt->second.size(); ++j) {
                if (used[j]) continue;
                const double o = iou(d.box, gt->second[j]);
                if (o >= best) {
                    best = o;
                    best_j = static_cast<std::ptrdiff_t>(j);
                }
            }
            if (best_j >= 0) {
                used[static_cast<std::size_t>(best_j)] = 1;
                hit = true;
            }
        }
        is_tp.push_back(hit ? 1 : 0);
    }
    return interpolated_ap(is_tp, num_gt);
}

std::optional<double> mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

EvalReport assemble(const Dataset& gts, const std::map<ClassId, FrequencyGroup>& groups,
                    const std::vector<ClassId>& classes, const std::vector<double>& aps) {
    EvalReport report;
    const auto freq = compute_class_frequencies(gts);
    std::vector<double> all;
    std::vector<double> rare;
    std::vector<double> common;
    std::vector<double> frequent;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const ClassId id = classes[i];
        report.per_class[id] = aps[i];
        all.push_back(aps[i]);
        const auto g = groups.find(id);
        const auto group = g != groups.end() ? g->second : freq.at(id).group;
        switch (group) {
            case FrequencyGroup::rare: rare.push_back(aps[i]); break;
            case FrequencyGroup::common: common.push_back(aps[i]); break;
            case FrequencyGroup::frequent: frequent.push_back(aps[i]); break;
        }
    }
    for (const auto& [id, name] : gts.categories) {
        if (!report.per_class.contains(id)) report.absent.push_back(id);
    }
    report.ap_overall = mean_of(all).value_or(0.0);
    report.ap_rare = mean_of(rare);
    report.ap_common = mean_of(common);
    report.ap_frequent = mean_of(frequent);
    report.detections_kept = 0;
    return report;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, bool classwise) {
    PostprocessOptions options;
    options.nms_iou = iou_threshold;
    options.classwise = classwise;
    options.score_threshold = -std::numeric_limits<double>::infinity();
    options.max_per_image = 0;
    return reference::postprocess(dets, options).detections;
}

PostprocessResult postprocess(std::span<const Detection> dets, const PostprocessOptions& options) {
    check_options(options);
    const auto buckets = bucket_by_image(dets);
    std::vector<char> keep(dets.size(), 1);
    std::vector<ImageTally> tallies(buckets.size());
    const auto count = static_cast<std::ptrdiff_t>(buckets.size());

    // Buckets touch disjoint entries of keep[].
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t b = 0; b < count; ++b) {
        tallies[b] = process_image(dets, buckets[b], options, keep);
    }
    return collect(dets, keep, tallies);
}

std::optional<double> average_precision(std::span<const Detection> dets, const Dataset& gts,
                                        ClassId class_id, double iou_match) {
    if (!(iou_match > 0.0 && iou_match <= 1.0)) {
        throw InvalidArgument("IoU match threshold must lie in (0, 1]");
    }
    std::unordered_map<ImageId, std::vector<Box>> gt_boxes;
    std::size_t num_gt = 0;
    for (const auto& inst : gts.instances) {
        if (inst.class_id != class_id) continue;
        gt_boxes[inst.image_id].push_back(inst.box);
        ++num_gt;
    }
    if (num_gt == 0) return std::nullopt;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].class_id == class_id) idx.push_back(i);
    }
    return class_ap(dets, std::move(idx), gt_boxes, num_gt, iou_match);
}

EvalReport evaluate(std::span<const Detection> dets, const Dataset& gts,
                    const std::map<ClassId, FrequencyGroup>& groups, double iou_match) {
    if (!(iou_match > 0.0 && iou_match <= 1.0)) {
        throw InvalidArgument("IoU match threshold must lie in (0, 1]");
    }
    const auto index = index_ground_truth(gts);
    std::vector<ClassId> classes;
    for (const auto& [id, name] : gts.categories) {
        if (index.counts.contains(id)) classes.push_back(id);
    }
    std::unordered_map<ClassId, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dets.size(); ++i) by_class[dets[i].class_id].push_back(i);

    std::vector<double> aps(classes.size());
    const auto count = static_cast<std::ptrdiff_t>(classes.size());
    static const std::vector<std::size_t> kNone;

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < count; ++c) {
        const ClassId id = classes[c];
        const auto it = by_class.find(id);
        aps[c] = class_ap(dets, it == by_class.end() ? kNone : it->second, index.boxes.at(id),
                          index.counts.at(id), iou_match);
    }

    auto report = assemble(gts, groups, classes, aps);
    report.detections_kept = dets.size();
    return report;
}

json report_to_json(const EvalReport& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json per_class = json::object();
    for (const auto& [id, ap] : r.per_class) per_class[std::to_string(id)] = ap;
    return {{"ap_overall", r.ap_overall},
            {"ap_rare", opt(r.ap_rare)},
            {"ap_common", opt(r.ap_common)},
            {"ap_frequent", opt(r.ap_frequent)},
            {"per_class", per_class},
            {"absent_classes", r.absent},
            {"counts", {{"kept", r.detections_kept}, {"suppressed", r.detections_suppressed}}}};
}

void print_report(std::ostream& os, const EvalReport& r) {
    const auto cell = [](const std::optional<double>& v) {
        std::ostringstream s;
        if (v) s << std::fixed << std::setprecision(2) << 100.0 * *v;
        else s << "-";
        return s.str();
    };
    os << std::left << std::setw(10) << "AP" << std::setw(10) << "AP_r" << std::setw(10) << "AP_c"
       << std::setw(10) << "AP_f" << "classes\n";
    os << std::setw(10) << cell(r.ap_overall) << std::setw(10) << cell(r.ap_rare) << std::setw(10)
       << cell(r.ap_common) << std::setw(10) << cell(r.ap_frequent) << r.per_class.size() << '\n';
    os << "detections kept " << r.detections_kept << ", suppressed " << r.detections_suppressed
       << '\n';
}

void write_detections(std::ostream& os, std::span<const Detection> dets) {
    for (const auto& d : dets) {
        json j = {{"image_id", d.image_id},
                  {"class_id", d.class_id},
                  {"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                  {"score", d.score}};
        os << j.dump() << '\n';
    }
}

std::vector<Detection> read_detections(std::istream& is, const std::string& source) {
    std::vector<Detection> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = source + ":" + std::to_string(line_no);
        try {
            const json j = json::parse(line);
            const auto b = j.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw ParseError(where, "box must be [cx, cy, w, h]");
            Detection d{j.at("image_id").get<ImageId>(), j.at("class_id").get<ClassId>(),
                        clip_to_unit({b[0], b[1], b[2], b[3]}), j.at("score").get<double>()};
            if (!(d.score >= 0.0 && d.score <= 1.0)) {
                throw ParseError(where, "score must lie in [0, 1]");
            }
            out.push_back(d);
        } catch (const json::exception& e) {
            throw ParseError(where, std::string("bad detection: ") + e.what());
        }
    }
    return out;
}

void save_detections(std::span<const Detection> dets, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path.string(), "cannot open file for writing");
    write_detections(out, dets);
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), "cannot open file");
    return read_detections(in, path.string());
}

namespace reference {

PostprocessResult postprocess(std::span<const Detection> dets, const PostprocessOptions& options) {
    check_options(options);
    std::vector<char> keep(dets.size(), 1);
    std::vector<ImageTally> tallies;
    for (const auto& members : bucket_by_image(dets)) {
        tallies.push_back(process_image(dets, members, options, keep));
    }
    return collect(dets, keep, tallies);
}

EvalReport evaluate(std::span<const Detection> dets, const Dataset& gts,
                    const std::map<ClassId, FrequencyGroup>& groups, double iou_match) {
    std::vector<ClassId> classes;
    std::vector<double> aps;
    for (const auto& [id, name] : gts.categories) {
        if (const auto ap = average_precision(dets, gts, id, iou_match)) {
            classes.push_back(id);
            aps.push_back(*ap);
        }
    }
    auto report = assemble(gts, groups, classes, aps);
    report.detections_kept = dets.size();
    return report;
}

}  // namespace reference

}  // namespace fracal
