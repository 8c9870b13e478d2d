#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fracal/annotations.hpp"
#include "fracal/calibration.hpp"
#include "fracal/geometry.hpp"
#include "fracal/io.hpp"

namespace fracal {

// Engine plus the two derived draws used by every generator. Both derived
// draws are written out here (not std:: distributions) so a seed reproduces
// the same stream on every standard library.
class Rng {
public:
    static constexpr const char* kAlgorithm = "mt19937_64/u53/box-muller";

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) {
        return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
    }
    double normal();

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

enum class PointProcessKind { uniform, line, gaussian_cluster, sierpinski, single_cell };

const char* to_string(PointProcessKind k);
PointProcessKind point_process_from_string(const std::string& s);

// params by kind:
//   line:             x0, y0, x1, y1        (default 0, 0, 1, 1)
//   gaussian_cluster: mean_x, mean_y, sigma (default 0.5, 0.5, 0.1)
//   single_cell:      i, j, G               (default 0, 0, 1); all points at the cell center
//   uniform, sierpinski: none
struct PointProcessSpec {
    PointProcessKind kind = PointProcessKind::uniform;
    std::size_t count = 1;
    std::uint64_t seed = 0;
    std::vector<double> params;
};

inline constexpr std::size_t kChaosGameBurnIn = 20;

std::vector<Point> generate_points(const PointProcessSpec& spec);

// Affinity in [0, 1] of location u to a class's generating distribution.
double spatial_affinity(const PointProcessSpec& spec, const Point& u);

struct DetectorBias {
    double frequency = 0.8;    // a: weight of ln(n_y + 1) on every logit
    double spatial = 3.0;      // b: weight of spatial_affinity(y, u)
    double separation = 4.0;   // s: true-class logit margin
    double noise = 1.0;        // Gaussian logit noise
    double object_background = 0.0;   // background logit on object proposals
    double clutter_background = 4.0;  // background logit on clutter proposals
};

struct ScenarioSpec {
    std::size_t num_classes = 80;
    double power_exponent = 1.3;  // n_y = max(1, round(max_count * (k + 1)^-exponent))
    std::size_t max_count = 5000;
    std::size_t train_images = 3000;
    std::size_t test_images = 500;
    double test_ratio = 0.2;            // test count per class relative to n_y
    std::size_t min_test_per_class = 5;
    // Instances of a class arrive in groups sharing one image.
    std::size_t instances_per_image = 3;
    std::vector<PointProcessKind> spatial_law{PointProcessKind::uniform,
                                              PointProcessKind::gaussian_cluster,
                                              PointProcessKind::line};
    // Cluster centers are drawn from [lo, hi]^2 and sigmas from [lo, hi].
    std::pair<double, double> cluster_center_range{0.35, 0.65};
    std::pair<double, double> cluster_sigma_range{0.12, 0.22};
    // Fraction of test objects placed uniformly instead of by their class law.
    double test_displacement = 0.5;
    DetectorBias bias;
    double clutter_rate = 5.0;  // background proposals per test image
    std::uint64_t seed = 7;

    // Long-tailed schedule with rare, common and frequent groups present.
    static ScenarioSpec standard();
    // Uniformly spread classes with a handful of training instances each,
    // so per-cell priors thin out quickly as the grid gets finer.
    static ScenarioSpec sparse();

    std::vector<std::size_t> frequency_schedule() const;
};

struct SimulatedBatch {
    Dataset train;
    Dataset ground_truth;  // test split the proposals are scored against
    RecordHeader header;   // softmax mode, background last
    std::vector<LogitRecord> proposals;
    // Index into ground_truth.instances, or nullopt for clutter.
    std::vector<std::optional<std::size_t>> truth_link;
    std::vector<PointProcessSpec> class_laws;
};

SimulatedBatch simulate_scenario(const ScenarioSpec& spec);

}  // namespace fracal
