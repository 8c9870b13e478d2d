#include "fracal/fractal.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "fracal/error.hpp"

namespace fracal {

using nlohmann::json;

const char* to_string(DimensionVariant v) {
    switch (v) {
        case DimensionVariant::box: return "box";
        case DimensionVariant::info: return "info";
        case DimensionVariant::smooth_info: return "smooth-info";
    }
    return "box";
}

DimensionVariant variant_from_string(const std::string& s) {
    if (s == "box") return DimensionVariant::box;
    if (s == "info") return DimensionVariant::info;
    if (s == "smooth-info" || s == "smooth_info") return DimensionVariant::smooth_info;
    throw InvalidArgument("unknown dimension variant '" + s + "'");
}

std::size_t quadratic_threshold(std::size_t n) {
    auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (r * r > n) --r;
    while ((r + 1) * (r + 1) <= n) ++r;
    return r;
}

namespace {

constexpr std::size_t kBitmapCellLimit = std::size_t{1} << 24;

std::size_t count_occupied(std::span<const Point> points, std::size_t grid,
                           std::vector<std::uint8_t>& scratch) {
    const std::size_t cells = grid * grid;
    if (cells <= kBitmapCellLimit) {
        scratch.assign(cells, 0);
        std::size_t occupied = 0;
        for (const auto& p : points) {
            auto& slot = scratch[cell_index(p.y, grid) * grid + cell_index(p.x, grid)];
            occupied += slot == 0;
            slot = 1;
        }
        return occupied;
    }
    std::vector<std::size_t> keys;
    keys.reserve(points.size());
    for (const auto& p : points) {
        keys.push_back(cell_index(p.y, grid) * grid + cell_index(p.x, grid));
    }
    std::sort(keys.begin(), keys.end());
    return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

double ols_slope(std::span<const double> xs, std::span<const double> ys) {
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

FractalEstimate fallback_estimate(ClassId class_id, std::size_t n, DimensionVariant variant) {
    FractalEstimate est;
    est.class_id = class_id;
    est.phi = kFallbackPhi;
    est.raw_slope = 0.0;
    est.variant = variant;
    est.t = quadratic_threshold(n);
    est.pair_count = 0;
    est.instance_count = n;
    est.fallback = true;
    return est;
}

template <typename SeriesBuilder>
FractalEstimate estimate_with(ClassId class_id, std::span<const Point> points,
                              const EstimateOptions& options, SeriesBuilder&& build) {
    if (options.t_cap && *options.t_cap < 2) {
        throw InvalidArgument("t_cap must be at least 2");
    }
    const std::size_t n = points.size();
    if (n < kMinInstancesForFit) {
        return fallback_estimate(class_id, n, options.variant);
    }
    std::size_t t = quadratic_threshold(n);
    if (options.t_cap) {
        t = std::min(t, *options.t_cap);
    }
    auto est = fit_dimension(build(points, t, class_id), options.variant,
                             FitOptions{options.shift_info});
    est.instance_count = n;
    return est;
}

std::map<ClassId, std::vector<Point>> centers_by_class(const Dataset& ds) {
    std::map<ClassId, std::vector<Point>> by_class;
    for (const auto& [id, name] : ds.categories) {
        by_class[id];
    }
    for (const auto& inst : ds.instances) {
        by_class[inst.class_id].push_back(inst.center);
    }
    return by_class;
}

}  // namespace

BoxCountSeries build_box_count_series(std::span<const Point> points, std::size_t max_grid,
                                      ClassId class_id) {
    if (points.empty()) {
        throw InvalidArgument("box counting needs at least one point");
    }
    if (max_grid == 0) {
        throw InvalidArgument("box counting needs a positive grid threshold");
    }
    BoxCountSeries series{class_id, {}};
    series.pairs.reserve(max_grid);
    std::vector<std::uint8_t> scratch;
    for (std::size_t g = 1; g <= max_grid; ++g) {
        series.pairs.push_back({g, count_occupied(points, g, scratch)});
    }
    return series;
}

FractalEstimate fit_dimension(const BoxCountSeries& series, DimensionVariant variant,
                              FitOptions options) {
    if (series.pairs.size() < 2) {
        throw InsufficientData("fitting a dimension needs at least two (G, nu) pairs");
    }
    std::vector<double> xs;
    std::vector<double> ys;
    xs.reserve(series.pairs.size());
    ys.reserve(series.pairs.size());
    for (const auto& [grid, occupied] : series.pairs) {
        if (grid == 0 || occupied == 0) {
            throw InvalidArgument("box-count pairs must be positive");
        }
        const double g = static_cast<double>(grid);
        const double nu = static_cast<double>(occupied);
        xs.push_back(std::log(g));
        switch (variant) {
            case DimensionVariant::box:
                ys.push_back(std::log(nu));
                break;
            case DimensionVariant::info:
                ys.push_back(std::log(nu / (g * g)));
                break;
            case DimensionVariant::smooth_info:
                // sum over cells of (1 + indicator) is G^2 + nu
                ys.push_back(1.0 + std::log((g * g + nu) / (g * g)));
                break;
        }
    }
    FractalEstimate est;
    est.class_id = series.class_id;
    est.variant = variant;
    est.raw_slope = ols_slope(xs, ys);
    double slope = est.raw_slope;
    if (variant != DimensionVariant::box && options.shift_info) {
        slope += 2.0;
    }
    est.phi = std::clamp(slope, 0.0, 2.0);
    est.t = series.pairs.size();
    est.pair_count = series.pairs.size();
    est.fallback = false;
    return est;
}

FractalEstimate estimate_class(ClassId class_id, std::span<const Point> points,
                               const EstimateOptions& options) {
    return estimate_with(class_id, points, options,
                         [](std::span<const Point> p, std::size_t t, ClassId c) {
                             return build_box_count_series(p, t, c);
                         });
}

std::map<ClassId, FractalEstimate> estimate_all(const Dataset& ds, const EstimateOptions& options) {
    const auto by_class = centers_by_class(ds);
    std::vector<const std::pair<const ClassId, std::vector<Point>>*> work;
    work.reserve(by_class.size());
    for (const auto& entry : by_class) {
        work.push_back(&entry);
    }
    std::vector<FractalEstimate> results(work.size());
    const auto count = static_cast<std::ptrdiff_t>(work.size());

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        results[i] = estimate_class(work[i]->first, work[i]->second, options);
    }

    std::map<ClassId, FractalEstimate> out;
    for (auto& est : results) {
        out.emplace(est.class_id, est);
    }
    return out;
}

double pearson_correlation(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw InvalidArgument("correlation inputs must have equal length");
    }
    if (xs.size() < 2) {
        throw InvalidArgument("correlation needs at least two samples");
    }
    // Single-pass co-moment update (Welford).
    double mean_x = 0.0;
    double mean_y = 0.0;
    double m2x = 0.0;
    double m2y = 0.0;
    double cxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double k = static_cast<double>(i + 1);
        const double dx = xs[i] - mean_x;
        const double dy = ys[i] - mean_y;
        mean_x += dx / k;
        mean_y += dy / k;
        m2x += dx * (xs[i] - mean_x);
        m2y += dy * (ys[i] - mean_y);
        cxy += dx * (ys[i] - mean_y);
    }
    if (!(m2x > 0.0) || !(m2y > 0.0)) {
        throw UndefinedCorrelation("correlation undefined for zero-variance input");
    }
    return std::clamp(cxy / std::sqrt(m2x * m2y), -1.0, 1.0);
}

double phi_frequency_correlation(const std::map<ClassId, FractalEstimate>& estimates) {
    std::vector<double> log_n;
    std::vector<double> phi;
    for (const auto& [id, est] : estimates) {
        if (est.instance_count == 0) continue;
        log_n.push_back(std::log(static_cast<double>(est.instance_count)));
        phi.push_back(est.phi);
    }
    return pearson_correlation(log_n, phi);
}

json export_weights_json(const Dataset& ds, const FrequencyTable& freq,
                         const std::map<ClassId, FractalEstimate>& estimates) {
    json classes = json::object();
    for (const auto& [id, est] : estimates) {
        const auto f = freq.find(id);
        const std::size_t images = f == freq.end() ? 0 : f->second.image_count;
        const auto group = f == freq.end() ? group_for_image_count(0) : f->second.group;
        const auto name = ds.categories.contains(id) ? ds.categories.at(id) : std::to_string(id);
        classes[std::to_string(id)] = {
            {"name", name},
            {"n", est.instance_count},
            {"image_count", images},
            {"group", to_string(group)},
            {"phi", est.phi},
            {"variant", to_string(est.variant)},
            {"fallback", est.fallback},
            {"t", est.t},
        };
    }
    return classes;
}

void write_series_csv(std::ostream& os, const Dataset& ds,
                      const std::map<ClassId, FractalEstimate>& estimates,
                      std::size_t min_grid_to_plot) {
    os << "class_id,G,nu,used\n";
    const auto by_class = centers_by_class(ds);
    for (const auto& [id, points] : by_class) {
        if (points.empty()) continue;
        const auto est = estimates.find(id);
        const std::size_t used = est == estimates.end() || est->second.fallback ? 0 : est->second.pair_count;
        const std::size_t max_grid = std::max({used, min_grid_to_plot, std::size_t{1}});
        for (const auto& [g, nu] : build_box_count_series(points, max_grid, id).pairs) {
            os << id << ',' << g << ',' << nu << ',' << (g <= used ? 1 : 0) << '\n';
        }
    }
}

namespace reference {

BoxCountSeries build_box_count_series(std::span<const Point> points, std::size_t max_grid,
                                      ClassId class_id) {
    if (points.empty()) {
        throw InvalidArgument("box counting needs at least one point");
    }
    BoxCountSeries series{class_id, {}};
    for (std::size_t g = 1; g <= max_grid; ++g) {
        std::set<std::pair<std::size_t, std::size_t>> cells;
        for (const auto& p : points) {
            cells.emplace(cell_index(p.x, g), cell_index(p.y, g));
        }
        series.pairs.push_back({g, cells.size()});
    }
    return series;
}

std::map<ClassId, FractalEstimate> estimate_all(const Dataset& ds, const EstimateOptions& options) {
    std::map<ClassId, FractalEstimate> out;
    for (const auto& [id, points] : centers_by_class(ds)) {
        out.emplace(id, estimate_with(id, points, options,
                                      [](std::span<const Point> p, std::size_t t, ClassId c) {
                                          return reference::build_box_count_series(p, t, c);
                                      }));
    }
    return out;
}

}  // namespace reference

}  // namespace fracal
