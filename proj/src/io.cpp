#include "fracal/io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "fracal/error.hpp"

namespace fracal {

using nlohmann::json;

namespace {

constexpr const char* kWeightsFormat = "fracal-weights";
constexpr const char* kLogitsFormat = "fracal-logits";
constexpr const char* kScoresFormat = "fracal-scores";

ClassId parse_class_key(const std::string& key, const std::string& source) {
    try {
        std::size_t used = 0;
        const auto id = std::stoll(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
        return id;
    } catch (const std::exception&) {
        throw ParseError(source, "class key '" + key + "' is not an integer id");
    }
}

// JSON object keys sort as strings; class order must follow numeric ids.
std::vector<std::pair<ClassId, const json*>> numeric_entries(const json& obj,
                                                             const std::string& source) {
    std::vector<std::pair<ClassId, const json*>> out;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        out.emplace_back(parse_class_key(it.key(), source), &it.value());
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string(), "cannot open file");
    }
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError(path.string(), "cannot open file for writing");
    }
    return out;
}

json header_to_json(const RecordHeader& h, const char* format) {
    json j = h.extra.is_object() ? h.extra : json::object();
    j["format"] = format;
    j["mode"] = to_string(h.mode);
    j["num_classes"] = h.num_classes;
    if (!h.class_ids.empty()) j["class_ids"] = h.class_ids;
    j["background_convention"] = h.mode == ScoreMode::softmax ? "last" : "none";
    return j;
}

RecordHeader header_from_json(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("mode") || !j.contains("num_classes")) {
        throw ParseError(where, "first line must be a header declaring mode and num_classes");
    }
    RecordHeader h;
    try {
        h.mode = score_mode_from_string(j.at("mode").get<std::string>());
        h.num_classes = j.at("num_classes").get<std::size_t>();
        if (j.contains("class_ids")) h.class_ids = j.at("class_ids").get<std::vector<ClassId>>();
    } catch (const json::exception& e) {
        throw ParseError(where, std::string("bad header: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError(where, e.what());
    }
    if (h.num_classes == 0) {
        throw ParseError(where, "num_classes must be positive");
    }
    if (!h.class_ids.empty() && h.class_ids.size() != h.num_classes) {
        throw ParseError(where, "class_ids length differs from num_classes");
    }
    h.extra = j;
    for (const char* key : {"format", "mode", "num_classes", "class_ids", "background_convention"}) {
        h.extra.erase(key);
    }
    return h;
}

Box box_from_json(const json& j, const std::string& where) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 4) {
        throw ParseError(where, "box must be [cx, cy, w, h]");
    }
    return {v[0], v[1], v[2], v[3]};
}

template <typename Record, typename MakeRecord>
std::pair<RecordHeader, std::vector<Record>> read_records(std::istream& is,
                                                          const std::string& source,
                                                          const char* values_key,
                                                          MakeRecord&& make) {
    std::optional<RecordHeader> header;
    std::vector<Record> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where, std::string("malformed JSON: ") + e.what());
        }
        if (!header) {
            header = header_from_json(j, where);
            continue;
        }
        try {
            auto values = j.at(values_key).get<std::vector<double>>();
            if (values.size() != header->entries()) {
                throw ParseError(where, std::string(values_key) + " has " +
                                            std::to_string(values.size()) + " entries, header declares " +
                                            std::to_string(header->entries()));
            }
            records.push_back(make(j.at("image_id").get<ImageId>(), box_from_json(j.at("box"), where),
                                   std::move(values)));
        } catch (const json::exception& e) {
            throw ParseError(where, std::string("bad record: ") + e.what());
        }
    }
    if (!header) {
        throw ParseError(source, "empty file: header line missing");
    }
    return {std::move(*header), std::move(records)};
}

}  // namespace

ClassId RecordHeader::class_at(std::size_t k) const {
    return class_ids.empty() ? static_cast<ClassId>(k) : class_ids.at(k);
}

json weights_to_json(const CalibrationWeights& w, const json& classes, ScoreMode mode,
                     const json& extra_header) {
    json doc = extra_header.is_object() ? extra_header : json::object();
    doc["format"] = kWeightsFormat;
    doc["beta"] = w.beta();
    doc["lambda"] = w.lambda();
    doc["mode"] = to_string(mode);
    doc["background_convention"] = mode == ScoreMode::softmax ? "last" : "none";

    json table = json::object();
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        const auto key = std::to_string(w.class_ids()[k]);
        json entry = classes.is_object() && classes.contains(key) ? classes.at(key) : json::object();
        entry["n"] = w.counts()[k];
        entry["phi"] = w.phi()[k];
        table[key] = std::move(entry);
    }
    doc["classes"] = std::move(table);

    if (!w.grids().empty()) {
        json priors = json::object();
        for (std::size_t g : w.grids()) {
            json per_class = json::object();
            const auto& counts = w.grid_counts(g);
            for (std::size_t k = 0; k < w.num_classes(); ++k) {
                per_class[std::to_string(w.class_ids()[k])] = counts[k];
            }
            priors[std::to_string(g)] = std::move(per_class);
        }
        doc["grid_priors"] = std::move(priors);
    }
    return doc;
}

WeightsFile weights_from_json(const json& doc, const std::string& source) {
    if (!doc.is_object() || !doc.contains("classes") || !doc.at("classes").is_object()) {
        throw ParseError(source, "weights file needs a 'classes' object");
    }
    if (doc.contains("format") && doc.at("format") != kWeightsFormat) {
        throw ParseError(source, "not a weights file (format " + doc.at("format").dump() + ")");
    }
    try {
        const double beta = doc.value("beta", kDefaultBeta);
        const double lambda = doc.value("lambda", kDefaultLambda);
        const ScoreMode mode = score_mode_from_string(doc.value("mode", std::string("softmax")));

        std::vector<ClassId> ids;
        std::vector<std::uint64_t> counts;
        std::vector<double> phi;
        for (const auto& [id, entry] : numeric_entries(doc.at("classes"), source)) {
            const std::string where = source + ": classes[" + std::to_string(id) + "]";
            if (!entry->contains("n") || !entry->contains("phi")) {
                throw ParseError(where, "class entry needs 'n' and 'phi'");
            }
            ids.push_back(id);
            counts.push_back(entry->at("n").get<std::uint64_t>());
            phi.push_back(entry->at("phi").get<double>());
        }
        CalibrationWeights w(ids, counts, phi, beta, lambda);

        if (doc.contains("grid_priors")) {
            for (const auto& [grid, per_class] : numeric_entries(doc.at("grid_priors"), source)) {
                if (grid < 1) throw ParseError(source, "grid_priors keys must be positive");
                std::vector<std::vector<std::uint64_t>> cells;
                for (ClassId id : ids) {
                    const auto key = std::to_string(id);
                    if (!per_class->contains(key)) {
                        throw ParseError(source, "grid_priors[" + std::to_string(grid) +
                                                     "] lacks class " + key);
                    }
                    cells.push_back(per_class->at(key).get<std::vector<std::uint64_t>>());
                }
                w.set_grid_counts(static_cast<std::size_t>(grid), std::move(cells));
            }
        }
        return WeightsFile{std::move(w), mode, doc.at("classes")};
    } catch (const json::exception& e) {
        throw ParseError(source, std::string("bad weights file: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError(source, e.what());
    }
}

WeightsFile load_weights(const std::filesystem::path& path) {
    auto in = open_input(path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), std::string("malformed JSON: ") + e.what());
    }
    return weights_from_json(doc, path.string());
}

void save_json(const json& doc, const std::filesystem::path& path) {
    auto out = open_output(path);
    out << doc.dump(2) << '\n';
}

std::map<ClassId, FrequencyGroup> groups_from_classes(const json& classes) {
    std::map<ClassId, FrequencyGroup> out;
    for (const auto& [id, entry] : numeric_entries(classes, "classes")) {
        if (entry->contains("group")) {
            out[id] = group_from_string(entry->at("group").get<std::string>());
        } else if (entry->contains("image_count")) {
            out[id] = group_for_image_count(entry->at("image_count").get<std::size_t>());
        }
    }
    return out;
}

void write_logits(std::ostream& os, const LogitsFile& file) {
    os << header_to_json(file.header, kLogitsFormat).dump() << '\n';
    for (const auto& r : file.records) {
        json j = {{"image_id", r.image_id},
                  {"box", {r.box.cx, r.box.cy, r.box.w, r.box.h}},
                  {"logits", r.logits}};
        os << j.dump() << '\n';
    }
}

void write_scores(std::ostream& os, const ScoresFile& file) {
    os << header_to_json(file.header, kScoresFormat).dump() << '\n';
    for (const auto& r : file.records) {
        json j = {{"image_id", r.image_id},
                  {"box", {r.box.cx, r.box.cy, r.box.w, r.box.h}},
                  {"scores", r.scores}};
        os << j.dump() << '\n';
    }
}

LogitsFile read_logits(std::istream& is, const std::string& source) {
    auto [header, records] = read_records<LogitRecord>(
        is, source, "logits", [](ImageId id, Box box, std::vector<double> v) {
            return LogitRecord{id, box, std::move(v)};
        });
    return {std::move(header), std::move(records)};
}

ScoresFile read_scores(std::istream& is, const std::string& source) {
    auto [header, records] = read_records<ScoredRecord>(
        is, source, "scores", [](ImageId id, Box box, std::vector<double> v) {
            return ScoredRecord{id, box, std::move(v)};
        });
    return {std::move(header), std::move(records)};
}

LogitsFile load_logits(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_logits(in, path.string());
}

ScoresFile load_scores(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_scores(in, path.string());
}

void save_logits(const LogitsFile& file, const std::filesystem::path& path) {
    auto out = open_output(path);
    write_logits(out, file);
}

void save_scores(const ScoresFile& file, const std::filesystem::path& path) {
    auto out = open_output(path);
    write_scores(out, file);
}

}  // namespace fracal
