#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fracal/annotations.hpp"
#include "fracal/geometry.hpp"

namespace fracal {

enum class DimensionVariant { box, info, smooth_info };

const char* to_string(DimensionVariant v);
// Accepts "box", "info", "smooth-info" and "smooth_info".
DimensionVariant variant_from_string(const std::string& s);

struct BoxCountPair {
    std::size_t grid = 0;      // G
    std::size_t occupied = 0;  // number of cells holding at least one center
};

struct BoxCountSeries {
    ClassId class_id = 0;
    std::vector<BoxCountPair> pairs;  // G = 1, 2, ..., in order
};

struct FractalEstimate {
    ClassId class_id = 0;
    double phi = 1.0;
    double raw_slope = 0.0;  // OLS slope before shifting and clamping
    DimensionVariant variant = DimensionVariant::box;
    std::size_t t = 0;
    std::size_t pair_count = 0;
    std::size_t instance_count = 0;
    bool fallback = true;
};

struct FitOptions {
    // Info and smooth-info slopes sit two below the box slope; shift them back
    // so every variant lands in [0, 2].
    bool shift_info = true;
};

struct EstimateOptions {
    DimensionVariant variant = DimensionVariant::box;
    std::optional<std::size_t> t_cap;
    bool shift_info = true;
};

inline constexpr std::size_t kMinInstancesForFit = 4;
inline constexpr double kFallbackPhi = 1.0;

// floor(sqrt(n)) computed exactly on integers.
std::size_t quadratic_threshold(std::size_t n);

// Occupied-cell counts for G = 1..max_grid using the spatial_histogram cell rule.
BoxCountSeries build_box_count_series(std::span<const Point> points, std::size_t max_grid,
                                      ClassId class_id = 0);

// Least-squares line (with intercept) through (ln G, y(G)); the slope is the
// dimension. Throws InsufficientData for fewer than two pairs.
FractalEstimate fit_dimension(const BoxCountSeries& series, DimensionVariant variant,
                              FitOptions options = {});

// One class: threshold t = floor(sqrt(n)) (bounded by t_cap), fallback to
// phi = 1 below four instances.
FractalEstimate estimate_class(ClassId class_id, std::span<const Point> points,
                               const EstimateOptions& options = {});

// Every category of the dataset, classes processed in parallel.
std::map<ClassId, FractalEstimate> estimate_all(const Dataset& ds,
                                                const EstimateOptions& options = {});

// Sample Pearson correlation. Throws UndefinedCorrelation on zero variance and
// InvalidArgument on mismatched or too-short inputs.
double pearson_correlation(std::span<const double> xs, std::span<const double> ys);

// Correlation of phi against ln(n_y) over classes with at least one instance.
double phi_frequency_correlation(const std::map<ClassId, FractalEstimate>& estimates);

// class_id -> {name, n, image_count, group, phi, variant, fallback}
nlohmann::json export_weights_json(const Dataset& ds, const FrequencyTable& freq,
                                   const std::map<ClassId, FractalEstimate>& estimates);

// class_id,G,nu,used rows for plotting; pairs beyond each class's t are marked used = 0.
void write_series_csv(std::ostream& os, const Dataset& ds,
                      const std::map<ClassId, FractalEstimate>& estimates,
                      std::size_t min_grid_to_plot = 0);

namespace reference {

// Serial, set-based counterparts of the parallel kernels above.
BoxCountSeries build_box_count_series(std::span<const Point> points, std::size_t max_grid,
                                      ClassId class_id = 0);
std::map<ClassId, FractalEstimate> estimate_all(const Dataset& ds,
                                                const EstimateOptions& options = {});

}  // namespace reference

}  // namespace fracal
