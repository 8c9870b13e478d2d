#include "fracal/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "fracal/error.hpp"

namespace fracal {

double Rng::normal() {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
}

const char* to_string(PointProcessKind k) {
    switch (k) {
        case PointProcessKind::uniform: return "uniform";
        case PointProcessKind::line: return "line";
        case PointProcessKind::gaussian_cluster: return "gaussian_cluster";
        case PointProcessKind::sierpinski: return "sierpinski";
        case PointProcessKind::single_cell: return "single_cell";
    }
    return "uniform";
}

PointProcessKind point_process_from_string(const std::string& s) {
    if (s == "uniform") return PointProcessKind::uniform;
    if (s == "line") return PointProcessKind::line;
    if (s == "gaussian_cluster" || s == "cluster") return PointProcessKind::gaussian_cluster;
    if (s == "sierpinski") return PointProcessKind::sierpinski;
    if (s == "single_cell") return PointProcessKind::single_cell;
    throw InvalidArgument("unknown point process '" + s + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ (stream * 0xD1B54A32D192ED03ULL)) + index);
}

std::vector<double> params_or(const PointProcessSpec& spec, std::vector<double> defaults) {
    if (spec.params.empty()) return defaults;
    if (spec.params.size() != defaults.size()) {
        throw InvalidArgument(std::string(to_string(spec.kind)) + " expects " +
                              std::to_string(defaults.size()) + " parameters");
    }
    return spec.params;
}

Point single_cell_location(const PointProcessSpec& spec) {
    const auto p = params_or(spec, {0.0, 0.0, 1.0});
    const double g = p[2];
    if (g < 1.0 || p[0] < 0.0 || p[1] < 0.0 || p[0] >= g || p[1] >= g) {
        throw InvalidArgument("single_cell needs 0 <= i, j < G");
    }
    return {(std::floor(p[0]) + 0.5) / std::floor(g), (std::floor(p[1]) + 0.5) / std::floor(g)};
}

double segment_distance(const Point& u, const Point& a, const Point& b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((u.x - a.x) * dx + (u.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(u.x - (a.x + t * dx), u.y - (a.y + t * dy));
}

constexpr double kLineWidth = 0.1;

}  // namespace

std::vector<Point> generate_points(const PointProcessSpec& spec) {
    if (spec.count == 0) {
        throw InvalidArgument("point process count must be at least 1");
    }
    Rng rng(spec.seed);
    std::vector<Point> pts;
    pts.reserve(spec.count);
    switch (spec.kind) {
        case PointProcessKind::uniform:
            for (std::size_t i = 0; i < spec.count; ++i) {
                const double x = rng.uniform();
                pts.push_back({x, rng.uniform()});
            }
            break;
        case PointProcessKind::line: {
            const auto p = params_or(spec, {0.0, 0.0, 1.0, 1.0});
            for (double v : p) {
                if (v < 0.0 || v > 1.0) throw InvalidArgument("line endpoints must lie in [0, 1]^2");
            }
            for (std::size_t i = 0; i < spec.count; ++i) {
                const double t = rng.uniform();
                pts.push_back({p[0] + t * (p[2] - p[0]), p[1] + t * (p[3] - p[1])});
            }
            break;
        }
        case PointProcessKind::gaussian_cluster: {
            const auto p = params_or(spec, {0.5, 0.5, 0.1});
            if (!(p[2] > 0.0)) throw InvalidArgument("cluster sigma must be positive");
            for (std::size_t i = 0; i < spec.count; ++i) {
                Point q{-1.0, -1.0};
                // Rejection keeps the sample inside the unit square.
                for (int tries = 0; tries < 1000 && !(q.x >= 0.0 && q.x <= 1.0 && q.y >= 0.0 && q.y <= 1.0); ++tries) {
                    const double x = p[0] + p[2] * rng.normal();
                    q = {x, p[1] + p[2] * rng.normal()};
                }
                pts.push_back({std::clamp(q.x, 0.0, 1.0), std::clamp(q.y, 0.0, 1.0)});
            }
            break;
        }
        case PointProcessKind::sierpinski: {
            constexpr Point vertices[3] = {{0.0, 0.0}, {1.0, 0.0}, {0.5, std::numbers::sqrt3 / 2.0}};
            const double x = rng.uniform();
            Point q{x, rng.uniform()};
            for (std::size_t i = 0; i < kChaosGameBurnIn + spec.count; ++i) {
                const Point& v = vertices[rng.index(3)];
                q = {(q.x + v.x) / 2.0, (q.y + v.y) / 2.0};
                if (i >= kChaosGameBurnIn) pts.push_back(q);
            }
            break;
        }
        case PointProcessKind::single_cell:
            pts.assign(spec.count, single_cell_location(spec));
            break;
    }
    return pts;
}

double spatial_affinity(const PointProcessSpec& spec, const Point& u) {
    switch (spec.kind) {
        case PointProcessKind::uniform:
        case PointProcessKind::sierpinski:
            return 1.0;
        case PointProcessKind::line: {
            const auto p = params_or(spec, {0.0, 0.0, 1.0, 1.0});
            const double d = segment_distance(u, {p[0], p[1]}, {p[2], p[3]});
            return std::exp(-d * d / (2.0 * kLineWidth * kLineWidth));
        }
        case PointProcessKind::gaussian_cluster: {
            const auto p = params_or(spec, {0.5, 0.5, 0.1});
            const double d2 = (u.x - p[0]) * (u.x - p[0]) + (u.y - p[1]) * (u.y - p[1]);
            return std::exp(-d2 / (2.0 * p[2] * p[2]));
        }
        case PointProcessKind::single_cell: {
            const Point c = single_cell_location(spec);
            const double g = params_or(spec, {0.0, 0.0, 1.0})[2];
            const double s = 0.5 / g;
            const double d2 = (u.x - c.x) * (u.x - c.x) + (u.y - c.y) * (u.y - c.y);
            return std::exp(-d2 / (2.0 * s * s));
        }
    }
    return 1.0;
}

ScenarioSpec ScenarioSpec::standard() { return ScenarioSpec{}; }

ScenarioSpec ScenarioSpec::sparse() {
    ScenarioSpec spec;
    spec.num_classes = 60;
    spec.power_exponent = 1.4;
    spec.max_count = 3000;
    spec.train_images = 2000;
    spec.test_images = 400;
    spec.test_displacement = 0.0;
    spec.spatial_law = {PointProcessKind::uniform};
    spec.bias.spatial = 0.0;
    spec.seed = 11;
    return spec;
}

std::vector<std::size_t> ScenarioSpec::frequency_schedule() const {
    std::vector<std::size_t> n(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double v = static_cast<double>(max_count) *
                         std::pow(static_cast<double>(k + 1), -power_exponent);
        n[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
    }
    return n;
}

namespace {

constexpr double kImageWidth = 640.0;
constexpr double kImageHeight = 480.0;
constexpr double kEdgeMargin = 1e-3;

PointProcessSpec class_law(const ScenarioSpec& spec, std::size_t k) {
    Rng rng(derive_seed(spec.seed, 1, k));
    PointProcessSpec law;
    law.kind = spec.spatial_law.empty() ? PointProcessKind::uniform
                                        : spec.spatial_law[k % spec.spatial_law.size()];
    switch (law.kind) {
        case PointProcessKind::gaussian_cluster: {
            const auto [lo, hi] = spec.cluster_center_range;
            const double mx = rng.uniform(lo, hi);
            const double my = rng.uniform(lo, hi);
            law.params = {mx, my, rng.uniform(spec.cluster_sigma_range.first, spec.cluster_sigma_range.second)};
            break;
        }
        case PointProcessKind::line: {
            // Long segment through the middle region, so even a handful of
            // samples spans more than one quadrant.
            const double mx = rng.uniform(0.4, 0.6);
            const double my = rng.uniform(0.4, 0.6);
            const double angle = rng.uniform(0.0, std::numbers::pi);
            const double half = rng.uniform(0.3, 0.4);
            const double dx = half * std::cos(angle);
            const double dy = half * std::sin(angle);
            law.params = {std::clamp(mx - dx, 0.0, 1.0), std::clamp(my - dy, 0.0, 1.0),
                          std::clamp(mx + dx, 0.0, 1.0), std::clamp(my + dy, 0.0, 1.0)};
            break;
        }
        case PointProcessKind::single_cell: {
            const double g = 4.0;
            const double i = static_cast<double>(rng.index(4));
            law.params = {i, static_cast<double>(rng.index(4)), g};
            break;
        }
        default: break;
    }
    return law;
}

// Box around a center that stays inside the unit square.
Box object_box(const Point& c, Rng& rng) {
    const double cx = std::clamp(c.x, kEdgeMargin, 1.0 - kEdgeMargin);
    const double cy = std::clamp(c.y, kEdgeMargin, 1.0 - kEdgeMargin);
    const double w = std::min(rng.uniform(0.04, 0.16), 2.0 * std::min(cx, 1.0 - cx));
    const double h = std::min(rng.uniform(0.04, 0.16), 2.0 * std::min(cy, 1.0 - cy));
    return {cx, cy, w, h};
}

Box jittered(const Box& gt, Rng& rng) {
    Box b{gt.cx + 0.05 * gt.w * rng.uniform(-1.0, 1.0), gt.cy + 0.05 * gt.h * rng.uniform(-1.0, 1.0),
          gt.w * rng.uniform(0.9, 1.1), gt.h * rng.uniform(0.9, 1.1)};
    const double x0 = std::clamp(b.x0(), 0.0, 1.0);
    const double y0 = std::clamp(b.y0(), 0.0, 1.0);
    const double x1 = std::clamp(b.x1(), 0.0, 1.0);
    const double y1 = std::clamp(b.y1(), 0.0, 1.0);
    b = {(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
    return iou(b, gt) >= 0.5 ? b : gt;
}

Dataset make_split(const ScenarioSpec& spec, const std::vector<PointProcessSpec>& laws,
                   const std::vector<std::size_t>& counts, std::size_t images, std::uint64_t stream,
                   double displaced) {
    Dataset ds;
    for (std::size_t img = 1; img <= images; ++img) {
        ds.images[static_cast<ImageId>(img)] = {kImageWidth, kImageHeight};
    }
    std::int64_t ann_id = 1;
    for (std::size_t k = 0; k < laws.size(); ++k) {
        const auto class_id = static_cast<ClassId>(k + 1);
        ds.categories[class_id] = "class_" + std::to_string(k + 1);
        if (counts[k] == 0) continue;
        PointProcessSpec law = laws[k];
        law.count = counts[k];
        law.seed = derive_seed(spec.seed, stream, k);
        Rng rng(derive_seed(spec.seed, stream + 100, k));
        const std::size_t group = std::max<std::size_t>(1, spec.instances_per_image);
        std::size_t placed = 0;
        ImageId image = 1;
        for (auto c : generate_points(law)) {
            if (placed++ % group == 0) image = static_cast<ImageId>(1 + rng.index(images));
            if (displaced > 0.0 && rng.uniform() < displaced) {
                c.x = rng.uniform();
                c.y = rng.uniform();
            }
            ObjectInstance inst;
            inst.annotation_id = ann_id++;
            inst.class_id = class_id;
            inst.image_id = image;
            inst.box = object_box(c, rng);
            inst.center = inst.box.center();
            ds.instances.push_back(inst);
        }
    }
    return ds;
}

}  // namespace

SimulatedBatch simulate_scenario(const ScenarioSpec& spec) {
    if (spec.num_classes == 0 || spec.train_images == 0 || spec.test_images == 0) {
        throw InvalidArgument("scenario needs classes and images");
    }
    if (spec.clutter_rate < 0.0 || spec.bias.noise < 0.0) {
        throw InvalidArgument("clutter rate and noise must be non-negative");
    }
    if (spec.test_displacement < 0.0 || spec.test_displacement > 1.0) {
        throw InvalidArgument("test displacement must lie in [0, 1]");
    }
    const auto train_counts = spec.frequency_schedule();
    std::vector<PointProcessSpec> laws;
    for (std::size_t k = 0; k < spec.num_classes; ++k) laws.push_back(class_law(spec, k));

    std::vector<std::size_t> test_counts(spec.num_classes);
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const auto scaled = static_cast<std::size_t>(
            std::llround(spec.test_ratio * static_cast<double>(train_counts[k])));
        test_counts[k] = std::max(spec.min_test_per_class, scaled);
    }

    SimulatedBatch batch;
    batch.class_laws = laws;
    batch.train = make_split(spec, laws, train_counts, spec.train_images, 2, 0.0);
    batch.ground_truth = make_split(spec, laws, test_counts, spec.test_images, 3, spec.test_displacement);
    batch.header.mode = ScoreMode::softmax;
    batch.header.num_classes = spec.num_classes;
    batch.header.class_ids = batch.train.class_ids();
    batch.header.extra = {{"rng", Rng::kAlgorithm}, {"seed", spec.seed}};

    const std::size_t C = spec.num_classes;
    std::vector<double> freq_term(C);
    for (std::size_t k = 0; k < C; ++k) {
        freq_term[k] = spec.bias.frequency * std::log(static_cast<double>(train_counts[k]) + 1.0);
    }

    Rng rng(derive_seed(spec.seed, 4, 0));
    const auto logits_at = [&](const Point& u, std::optional<std::size_t> true_class, double bg) {
        std::vector<double> z(C + 1);
        for (std::size_t k = 0; k < C; ++k) {
            z[k] = freq_term[k] + spec.bias.spatial * spatial_affinity(laws[k], u) +
                   spec.bias.noise * rng.normal();
            if (true_class && *true_class == k) z[k] += spec.bias.separation;
        }
        z[C] = bg + spec.bias.noise * rng.normal();
        return z;
    };

    const auto& gts = batch.ground_truth.instances;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const auto& gt = gts[i];
        const Box box = jittered(gt.box, rng);
        batch.proposals.push_back(
            {gt.image_id, box,
             logits_at(box.center(), static_cast<std::size_t>(gt.class_id - 1),
                       spec.bias.object_background)});
        batch.truth_link.emplace_back(i);
    }
    const auto whole = static_cast<std::size_t>(spec.clutter_rate);
    const double frac = spec.clutter_rate - static_cast<double>(whole);
    for (std::size_t img = 1; img <= spec.test_images; ++img) {
        const std::size_t n = whole + (rng.uniform() < frac ? 1 : 0);
        for (std::size_t c = 0; c < n; ++c) {
            Point center{rng.uniform(), 0.0};
            center.y = rng.uniform();
            const Box box = object_box(center, rng);
            batch.proposals.push_back({static_cast<ImageId>(img), box,
                                       logits_at(box.center(), std::nullopt,
                                                 spec.bias.clutter_background)});
            batch.truth_link.emplace_back(std::nullopt);
        }
    }
    return batch;
}

}  // namespace fracal
