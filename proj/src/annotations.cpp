#include "fracal/annotations.hpp"

#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "fracal/error.hpp"

namespace fracal {

using nlohmann::json;

std::vector<ClassId> Dataset::class_ids() const {
    std::vector<ClassId> ids;
    ids.reserve(categories.size());
    for (const auto& [id, name] : categories) {
        ids.push_back(id);
    }
    return ids;
}

std::vector<Point> Dataset::centers_of(ClassId cls) const {
    std::vector<Point> pts;
    for (const auto& inst : instances) {
        if (inst.class_id == cls) {
            pts.push_back(inst.center);
        }
    }
    return pts;
}

const char* to_string(FrequencyGroup g) {
    switch (g) {
        case FrequencyGroup::rare: return "rare";
        case FrequencyGroup::common: return "common";
        case FrequencyGroup::frequent: return "frequent";
    }
    return "rare";
}

FrequencyGroup group_from_string(const std::string& s) {
    if (s == "rare") return FrequencyGroup::rare;
    if (s == "common") return FrequencyGroup::common;
    if (s == "frequent") return FrequencyGroup::frequent;
    throw InvalidArgument("unknown frequency group '" + s + "'");
}

FrequencyGroup group_for_image_count(std::size_t image_count) {
    if (image_count < 10) return FrequencyGroup::rare;
    if (image_count <= 100) return FrequencyGroup::common;
    return FrequencyGroup::frequent;
}

std::uint64_t SpatialHistogram::total() const {
    std::uint64_t sum = 0;
    for (const auto& row : counts) {
        for (auto c : row) sum += c;
    }
    return sum;
}

namespace {

std::string record_name(const char* array, std::size_t index, const json& rec) {
    std::ostringstream os;
    os << array << '[' << index << ']';
    if (rec.is_object() && rec.contains("id")) {
        os << " (id " << rec["id"].dump() << ')';
    }
    return os.str();
}

template <typename T>
T require(const json& rec, const char* key, const std::string& where) {
    if (!rec.is_object() || !rec.contains(key)) {
        throw ParseError(where, std::string("missing field '") + key + "'");
    }
    try {
        return rec.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where, std::string("bad field '") + key + "': " + e.what());
    }
}

const json& require_array(const json& doc, const char* key, const std::string& source) {
    if (!doc.is_object() || !doc.contains(key) || !doc.at(key).is_array()) {
        throw ParseError(source, std::string("top-level array '") + key + "' missing");
    }
    return doc.at(key);
}

}  // namespace

Dataset parse_annotations(const json& doc, const std::string& source) {
    Dataset ds;
    const auto prefix = [&](const std::string& rec) {
        return source.empty() ? rec : source + ": " + rec;
    };

    const json& images = require_array(doc, "images", source);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto where = prefix(record_name("images", i, images[i]));
        const auto id = require<ImageId>(images[i], "id", where);
        ImageInfo info{require<double>(images[i], "width", where),
                       require<double>(images[i], "height", where)};
        if (!(info.width > 0.0) || !(info.height > 0.0)) {
            throw ParseError(where, "image width and height must be positive");
        }
        if (!ds.images.emplace(id, info).second) {
            throw ParseError(where, "duplicate image id");
        }
    }

    const json& categories = require_array(doc, "categories", source);
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const auto where = prefix(record_name("categories", i, categories[i]));
        const auto id = require<ClassId>(categories[i], "id", where);
        auto name = categories[i].contains("name") ? require<std::string>(categories[i], "name", where)
                                                   : std::to_string(id);
        if (!ds.categories.emplace(id, std::move(name)).second) {
            throw ParseError(where, "duplicate category id");
        }
    }

    const json& anns = require_array(doc, "annotations", source);
    ds.instances.reserve(anns.size());
    for (std::size_t i = 0; i < anns.size(); ++i) {
        const json& a = anns[i];
        const auto where = prefix(record_name("annotations", i, a));
        const auto image_id = require<ImageId>(a, "image_id", where);
        const auto class_id = require<ClassId>(a, "category_id", where);
        const auto bbox = require<std::vector<double>>(a, "bbox", where);
        if (bbox.size() != 4) {
            throw ParseError(where, "bbox must have 4 entries [x, y, w, h]");
        }
        const auto img = ds.images.find(image_id);
        if (img == ds.images.end()) {
            throw ParseError(where, "unknown image_id " + std::to_string(image_id));
        }
        if (!ds.categories.contains(class_id)) {
            throw ParseError(where, "unknown category_id " + std::to_string(class_id));
        }
        bool crowd = false;
        if (a.contains("iscrowd") && !a["iscrowd"].is_null()) {
            const json& flag = a["iscrowd"];
            crowd = flag.is_boolean() ? flag.get<bool>() : flag.get<double>() != 0.0;
        }
        if (crowd) {
            ++ds.crowd_skipped;
            continue;
        }
        if (!(bbox[2] > 0.0) || !(bbox[3] > 0.0)) {
            ++ds.degenerate_skipped;
            continue;
        }
        const double W = img->second.width;
        const double H = img->second.height;
        ObjectInstance inst;
        inst.annotation_id = a.contains("id") ? require<std::int64_t>(a, "id", where)
                                              : static_cast<std::int64_t>(i);
        inst.class_id = class_id;
        inst.image_id = image_id;
        const double cx = (bbox[0] + bbox[2] / 2.0) / W;
        const double cy = (bbox[1] + bbox[3] / 2.0) / H;
        inst.box = Box{cx, cy, bbox[2] / W, bbox[3] / H};
        // Boxes hanging over the image border still contribute an in-grid center.
        inst.center = {std::clamp(cx, 0.0, 1.0), std::clamp(cy, 0.0, 1.0)};
        ds.instances.push_back(inst);
    }
    return ds;
}

Dataset load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string(), "cannot open annotation file");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), std::string("malformed JSON: ") + e.what());
    }
    return parse_annotations(doc, path.string());
}

json to_coco_json(const Dataset& ds) {
    json images = json::array();
    for (const auto& [id, info] : ds.images) {
        images.push_back({{"id", id}, {"width", info.width}, {"height", info.height}});
    }
    json cats = json::array();
    for (const auto& [id, name] : ds.categories) {
        cats.push_back({{"id", id}, {"name", name}});
    }
    json anns = json::array();
    for (const auto& inst : ds.instances) {
        const auto& info = ds.images.at(inst.image_id);
        const Box& b = inst.box;
        anns.push_back({{"id", inst.annotation_id},
                        {"image_id", inst.image_id},
                        {"category_id", inst.class_id},
                        {"bbox", {b.x0() * info.width, b.y0() * info.height, b.w * info.width,
                                  b.h * info.height}},
                        {"iscrowd", 0}});
    }
    return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

void save_annotations(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParseError(path.string(), "cannot open for writing");
    }
    out << to_coco_json(ds).dump() << '\n';
}

FrequencyTable compute_class_frequencies(const Dataset& ds) {
    FrequencyTable table;
    for (const auto& [id, name] : ds.categories) {
        table[id] = ClassFrequency{id, 0, 0, FrequencyGroup::rare};
    }
    std::map<ClassId, std::set<ImageId>> images_per_class;
    for (const auto& inst : ds.instances) {
        auto& f = table[inst.class_id];
        f.class_id = inst.class_id;
        ++f.instance_count;
        images_per_class[inst.class_id].insert(inst.image_id);
    }
    for (auto& [id, f] : table) {
        const auto it = images_per_class.find(id);
        f.image_count = it == images_per_class.end() ? 0 : it->second.size();
        f.group = group_for_image_count(f.image_count);
    }
    return table;
}

SpatialHistogram spatial_histogram(const Dataset& ds, std::optional<ClassId> class_filter,
                                   std::size_t grid_size) {
    if (grid_size == 0) {
        throw InvalidArgument("grid size must be at least 1");
    }
    SpatialHistogram hist{grid_size, std::vector<std::vector<std::uint64_t>>(
                                         grid_size, std::vector<std::uint64_t>(grid_size, 0))};
    for (const auto& inst : ds.instances) {
        if (class_filter && inst.class_id != *class_filter) {
            continue;
        }
        const auto i = cell_index(inst.center.x, grid_size);
        const auto j = cell_index(inst.center.y, grid_size);
        ++hist.counts[j][i];
    }
    return hist;
}

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace

void write_frequency_csv(std::ostream& os, const Dataset& ds, const FrequencyTable& freq) {
    os << "class_id,name,instance_count,image_count,group\n";
    for (const auto& [id, f] : freq) {
        const auto name = ds.categories.contains(id) ? ds.categories.at(id) : std::to_string(id);
        os << id << ',' << csv_escape(name) << ',' << f.instance_count << ',' << f.image_count
           << ',' << to_string(f.group) << '\n';
    }
}

void write_histogram_csv(std::ostream& os, const SpatialHistogram& hist) {
    for (const auto& row : hist.counts) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << (i ? "," : "") << row[i];
        }
        os << '\n';
    }
}

json histogram_to_json(const SpatialHistogram& hist) {
    return {{"grid_size", hist.grid_size}, {"counts", hist.counts}, {"total", hist.total()}};
}

}  // namespace fracal
