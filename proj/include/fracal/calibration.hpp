#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fracal/annotations.hpp"
#include "fracal/geometry.hpp"

namespace fracal {

// softmax: C foreground logits followed by the background logit.
// sigmoid: C independent foreground logits, no background entry.
enum class ScoreMode { softmax, sigmoid };

const char* to_string(ScoreMode m);
ScoreMode score_mode_from_string(const std::string& s);

inline constexpr double kDefaultBeta = 10.0;
inline constexpr double kDefaultLambda = 2.0;
inline constexpr double kPhiFloor = 1e-3;
inline constexpr double kGridPriorFloor = 1e-12;

struct LogitRecord {
    ImageId image_id = 0;
    Box box;
    std::vector<double> logits;
};

struct ScoredRecord {
    ImageId image_id = 0;
    Box box;
    std::vector<double> scores;
};

// Frozen per-class statistics plus the two calibration hyperparameters.
// Index k of every per-class vector corresponds to class_ids()[k], which is
// also the k-th logit of a record.
class CalibrationWeights {
public:
    CalibrationWeights(std::vector<ClassId> class_ids, std::vector<std::uint64_t> counts,
                       std::vector<double> phi, double beta = kDefaultBeta,
                       double lambda = kDefaultLambda);

    std::size_t num_classes() const { return class_ids_.size(); }
    const std::vector<ClassId>& class_ids() const { return class_ids_; }
    const std::vector<std::uint64_t>& counts() const { return counts_; }
    const std::vector<double>& phi() const { return phi_; }
    std::uint64_t total_count() const { return total_; }
    double beta() const { return beta_; }
    double lambda() const { return lambda_; }

    // n_y / sum(n), with the stored count.
    double prior(std::size_t k) const;
    // Same ratio with n_y := 1 for empty classes, so its logarithm is finite.
    double log_prior_argument(std::size_t k) const;
    // max(phi, kPhiFloor)
    double guarded_phi(std::size_t k) const;

    std::vector<ClassId> zero_frequency_classes() const;
    std::vector<ClassId> floored_phi_classes() const;

    CalibrationWeights with_beta(double beta) const;
    CalibrationWeights with_lambda(double lambda) const;
    CalibrationWeights with_phi(std::vector<double> phi) const;

    // Per-class cell counts n_y(u) at grid G, row-major (index j * G + i).
    void set_grid_counts(std::size_t grid, std::vector<std::vector<std::uint64_t>> counts);
    bool has_grid(std::size_t grid) const { return grid_counts_.contains(grid); }
    std::vector<std::size_t> grids() const;
    const std::vector<std::vector<std::uint64_t>>& grid_counts(std::size_t grid) const;
    // p_s(y, u) = n_y(u) / sum(n)
    double grid_prior(std::size_t grid, std::size_t k, std::size_t cell) const;

private:
    std::vector<ClassId> class_ids_;
    std::vector<std::uint64_t> counts_;
    std::vector<double> phi_;
    std::uint64_t total_ = 0;
    double beta_;
    double lambda_;
    std::map<std::size_t, std::vector<std::vector<std::uint64_t>>> grid_counts_;
};

// Builds weights from a training dataset: counts and per-cell counts for the
// requested grids come from the annotations, phi from the estimates.
CalibrationWeights make_weights(const Dataset& train, const std::map<ClassId, double>& phi,
                                double beta = kDefaultBeta, double lambda = kDefaultLambda,
                                std::span<const std::size_t> grids = {});

std::vector<double> softmax(std::span<const double> logits);
double sigmoid(double z);

// Plain activation of the raw logits: softmax or element-wise sigmoid.
std::vector<double> activate(std::span<const double> logits, ScoreMode mode);

std::vector<double> class_calibrate(std::span<const double> logits, ScoreMode mode,
                                    const CalibrationWeights& w);

std::vector<double> grid_calibrate(std::span<const double> logits, ScoreMode mode,
                                   const Point& center, const CalibrationWeights& w,
                                   std::size_t grid);

// probs laid out as C foreground entries then background.
std::vector<double> space_calibrate(std::span<const double> probs, const CalibrationWeights& w);

std::vector<double> fracal(std::span<const double> logits, const CalibrationWeights& w);
std::vector<double> fracal_opposite(std::span<const double> logits, const CalibrationWeights& w);
std::vector<double> fracal_binary(std::span<const double> logits, const CalibrationWeights& w);

struct Baseline {
    enum class Kind { la, iif, pcsa, norcal };
    Kind kind = Kind::la;
    double param = 1.0;  // tau for la, gamma for norcal
};

std::vector<double> baseline_calibrate(std::span<const double> logits, ScoreMode mode,
                                       const CalibrationWeights& w, const Baseline& baseline);

// NorCal on probabilities: p_y / n_y^gamma, every entry divided by
// p_bg + sum_y p_y / n_y^gamma.
std::vector<double> norcal_probabilities(std::span<const double> probs,
                                         const CalibrationWeights& w, double gamma);

enum class MethodKind {
    none,
    class_only,
    grid,
    fracal,
    fracal_binary,
    opposite,
    la,
    iif,
    pcsa,
    norcal,
};

struct Method {
    MethodKind kind = MethodKind::fracal;
    double tau = 1.0;
    double gamma = 1.0;
    std::size_t grid = 1;

    std::string name() const;
};

// Accepts e.g. "fracal", "grid(4)", "la(0.5)", "norcal(1)"; parenthesized
// values override the supplied defaults.
Method parse_method(const std::string& text, const Method& defaults = {});

// Raises ModeMismatch when the method cannot run on logits of this mode.
void check_method_mode(const Method& method, ScoreMode mode);

std::vector<double> apply_method(const LogitRecord& record, ScoreMode mode,
                                 const CalibrationWeights& w, const Method& method);

// Record-parallel batch calibration; output order matches input order.
std::vector<ScoredRecord> calibrate_batch(std::span<const LogitRecord> records, ScoreMode mode,
                                          const CalibrationWeights& w, const Method& method);

namespace reference {
std::vector<ScoredRecord> calibrate_batch(std::span<const LogitRecord> records, ScoreMode mode,
                                          const CalibrationWeights& w, const Method& method);
}  // namespace reference

}  // namespace fracal
