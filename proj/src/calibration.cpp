#include "fracal/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fracal/error.hpp"

namespace fracal {

const char* to_string(ScoreMode m) {
    return m == ScoreMode::softmax ? "softmax" : "sigmoid";
}

ScoreMode score_mode_from_string(const std::string& s) {
    if (s == "softmax") return ScoreMode::softmax;
    if (s == "sigmoid") return ScoreMode::sigmoid;
    throw InvalidArgument("unknown score mode '" + s + "'");
}

CalibrationWeights::CalibrationWeights(std::vector<ClassId> class_ids,
                                       std::vector<std::uint64_t> counts, std::vector<double> phi,
                                       double beta, double lambda)
    : class_ids_(std::move(class_ids)),
      counts_(std::move(counts)),
      phi_(std::move(phi)),
      beta_(beta),
      lambda_(lambda) {
    if (class_ids_.empty()) {
        throw InvalidArgument("calibration weights need at least one class");
    }
    if (counts_.size() != class_ids_.size() || phi_.size() != class_ids_.size()) {
        throw InvalidArgument("class ids, counts and phi must have equal length");
    }
    if (!(beta_ > 1.0) || !std::isfinite(beta_)) {
        throw InvalidArgument("logarithm base beta must be > 1");
    }
    if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) {
        throw InvalidArgument("lambda must be >= 0");
    }
    for (double p : phi_) {
        if (!(p >= 0.0 && p <= 2.0)) {
            throw InvalidArgument("fractal dimensions must lie in [0, 2]");
        }
    }
    total_ = std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
    if (total_ == 0) {
        throw InvalidArgument("class counts sum to zero; priors undefined");
    }
}

double CalibrationWeights::prior(std::size_t k) const {
    return static_cast<double>(counts_.at(k)) / static_cast<double>(total_);
}

double CalibrationWeights::log_prior_argument(std::size_t k) const {
    return static_cast<double>(std::max<std::uint64_t>(counts_.at(k), 1)) /
           static_cast<double>(total_);
}

double CalibrationWeights::guarded_phi(std::size_t k) const {
    return std::max(phi_.at(k), kPhiFloor);
}

std::vector<ClassId> CalibrationWeights::zero_frequency_classes() const {
    std::vector<ClassId> out;
    for (std::size_t k = 0; k < counts_.size(); ++k) {
        if (counts_[k] == 0) out.push_back(class_ids_[k]);
    }
    return out;
}

std::vector<ClassId> CalibrationWeights::floored_phi_classes() const {
    std::vector<ClassId> out;
    for (std::size_t k = 0; k < phi_.size(); ++k) {
        if (phi_[k] < kPhiFloor) out.push_back(class_ids_[k]);
    }
    return out;
}

CalibrationWeights CalibrationWeights::with_beta(double beta) const {
    auto copy = *this;
    if (!(beta > 1.0) || !std::isfinite(beta)) {
        throw InvalidArgument("logarithm base beta must be > 1");
    }
    copy.beta_ = beta;
    return copy;
}

CalibrationWeights CalibrationWeights::with_lambda(double lambda) const {
    auto copy = *this;
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw InvalidArgument("lambda must be >= 0");
    }
    copy.lambda_ = lambda;
    return copy;
}

CalibrationWeights CalibrationWeights::with_phi(std::vector<double> phi) const {
    CalibrationWeights copy(class_ids_, counts_, std::move(phi), beta_, lambda_);
    copy.grid_counts_ = grid_counts_;
    return copy;
}

void CalibrationWeights::set_grid_counts(std::size_t grid,
                                         std::vector<std::vector<std::uint64_t>> counts) {
    if (grid == 0) {
        throw InvalidArgument("grid size must be at least 1");
    }
    if (counts.size() != num_classes()) {
        throw InvalidArgument("grid counts must cover every class");
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k].size() != grid * grid) {
            throw InvalidArgument("grid counts must have G*G cells per class");
        }
        if (std::accumulate(counts[k].begin(), counts[k].end(), std::uint64_t{0}) != counts_[k]) {
            throw InvalidArgument("grid counts of class " + std::to_string(class_ids_[k]) +
                                  " do not sum to its instance count");
        }
    }
    grid_counts_[grid] = std::move(counts);
}

std::vector<std::size_t> CalibrationWeights::grids() const {
    std::vector<std::size_t> out;
    for (const auto& [g, c] : grid_counts_) out.push_back(g);
    return out;
}

const std::vector<std::vector<std::uint64_t>>& CalibrationWeights::grid_counts(std::size_t grid) const {
    const auto it = grid_counts_.find(grid);
    if (it == grid_counts_.end()) {
        throw InvalidArgument("weights carry no spatial priors at grid " + std::to_string(grid));
    }
    return it->second;
}

double CalibrationWeights::grid_prior(std::size_t grid, std::size_t k, std::size_t cell) const {
    return static_cast<double>(grid_counts(grid).at(k).at(cell)) / static_cast<double>(total_);
}

CalibrationWeights make_weights(const Dataset& train, const std::map<ClassId, double>& phi,
                                double beta, double lambda, std::span<const std::size_t> grids) {
    const auto freq = compute_class_frequencies(train);
    std::vector<ClassId> ids;
    std::vector<std::uint64_t> counts;
    std::vector<double> dims;
    for (const auto& [id, f] : freq) {
        ids.push_back(id);
        counts.push_back(f.instance_count);
        const auto it = phi.find(id);
        dims.push_back(it == phi.end() ? 1.0 : it->second);
    }
    CalibrationWeights w(ids, counts, dims, beta, lambda);
    for (std::size_t g : grids) {
        std::vector<std::vector<std::uint64_t>> cells;
        cells.reserve(ids.size());
        for (ClassId id : ids) {
            const auto hist = spatial_histogram(train, id, g);
            std::vector<std::uint64_t> flat;
            flat.reserve(g * g);
            for (const auto& row : hist.counts) flat.insert(flat.end(), row.begin(), row.end());
            cells.push_back(std::move(flat));
        }
        w.set_grid_counts(g, std::move(cells));
    }
    return w;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<double> activate(std::span<const double> logits, ScoreMode mode) {
    if (mode == ScoreMode::softmax) {
        return softmax(logits);
    }
    std::vector<double> out(logits.size());
    std::transform(logits.begin(), logits.end(), out.begin(), sigmoid);
    return out;
}

namespace {

double log_base(double x, double beta) { return std::log(x) / std::log(beta); }

void check_length(std::span<const double> v, ScoreMode mode, const CalibrationWeights& w) {
    const std::size_t expected = w.num_classes() + (mode == ScoreMode::softmax ? 1 : 0);
    if (v.size() != expected) {
        std::ostringstream os;
        os << to_string(mode) << " mode expects " << expected << " entries, got " << v.size();
        throw InvalidArgument(os.str());
    }
}

void check_beta(const CalibrationWeights& w) {
    if (!(w.beta() > 1.0)) {
        throw InvalidArgument("logarithm base beta must be > 1");
    }
}

std::vector<double> space_reweight(std::span<const double> probs, const CalibrationWeights& w,
                                   bool opposite) {
    check_length(probs, ScoreMode::softmax, w);
    std::vector<double> out(probs.begin(), probs.end());
    if (w.lambda() == 0.0) {
        return out;
    }
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        const double weight = std::pow(w.guarded_phi(k), w.lambda());
        out[k] = opposite ? out[k] * weight : out[k] / weight;
    }
    return out;
}

std::vector<double> normalized(std::vector<double> v) {
    const double sum = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= sum;
    return v;
}

}  // namespace

std::vector<double> class_calibrate(std::span<const double> logits, ScoreMode mode,
                                    const CalibrationWeights& w) {
    check_beta(w);
    check_length(logits, mode, w);
    std::vector<double> out(logits.begin(), logits.end());
    const double target = log_base(1.0 / static_cast<double>(w.num_classes()), w.beta());
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        out[k] = out[k] - log_base(w.log_prior_argument(k), w.beta()) + target;
    }
    return out;
}

std::vector<double> grid_calibrate(std::span<const double> logits, ScoreMode mode,
                                   const Point& center, const CalibrationWeights& w,
                                   std::size_t grid) {
    check_beta(w);
    check_length(logits, mode, w);
    if (!w.has_grid(grid)) {
        throw InvalidArgument("weights carry no spatial priors at grid " + std::to_string(grid));
    }
    const std::size_t cell = cell_index(center.y, grid) * grid + cell_index(center.x, grid);
    const double cells = static_cast<double>(grid * grid);
    const double target = log_base(1.0 / (static_cast<double>(w.num_classes()) * cells), w.beta());
    std::vector<double> out(logits.begin(), logits.end());
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        double p = w.grid_prior(grid, k, cell);
        if (p == 0.0) p = kGridPriorFloor;
        out[k] = out[k] - log_base(p, w.beta()) + target;
    }
    return out;
}

std::vector<double> space_calibrate(std::span<const double> probs, const CalibrationWeights& w) {
    return space_reweight(probs, w, false);
}

std::vector<double> fracal(std::span<const double> logits, const CalibrationWeights& w) {
    const auto probs = softmax(class_calibrate(logits, ScoreMode::softmax, w));
    return normalized(space_reweight(probs, w, false));
}

std::vector<double> fracal_opposite(std::span<const double> logits, const CalibrationWeights& w) {
    const auto probs = softmax(class_calibrate(logits, ScoreMode::softmax, w));
    return normalized(space_reweight(probs, w, true));
}

std::vector<double> fracal_binary(std::span<const double> logits, const CalibrationWeights& w) {
    const auto calibrated = class_calibrate(logits, ScoreMode::sigmoid, w);
    const std::size_t C = w.num_classes();
    std::vector<double> weights(C);
    double total = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
        weights[k] = std::pow(w.guarded_phi(k), w.lambda());
        total += weights[k];
    }
    const double target = log_base(1.0 / static_cast<double>(C), w.beta());
    std::vector<double> out(C);
    for (std::size_t k = 0; k < C; ++k) {
        const double adjusted = calibrated[k] - log_base(weights[k] / total, w.beta()) + target;
        out[k] = sigmoid(adjusted) * sigmoid(logits[k]);
    }
    return out;
}

std::vector<double> norcal_probabilities(std::span<const double> probs,
                                         const CalibrationWeights& w, double gamma) {
    if (!(gamma >= 0.0)) {
        throw InvalidArgument("NorCal gamma must be >= 0");
    }
    check_length(probs, ScoreMode::softmax, w);
    std::vector<double> out(probs.begin(), probs.end());
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        const auto n = static_cast<double>(std::max<std::uint64_t>(w.counts()[k], 1));
        out[k] /= std::pow(n, gamma);
    }
    return normalized(std::move(out));
}

std::vector<double> baseline_calibrate(std::span<const double> logits, ScoreMode mode,
                                       const CalibrationWeights& w, const Baseline& baseline) {
    check_length(logits, mode, w);
    if (!(baseline.param >= 0.0)) {
        throw InvalidArgument(baseline.kind == Baseline::Kind::norcal ? "NorCal gamma must be >= 0"
                                                                      : "LA tau must be >= 0");
    }
    if (baseline.kind == Baseline::Kind::norcal) {
        if (mode != ScoreMode::softmax) {
            throw ModeMismatch("NorCal needs softmax logits with a background entry");
        }
        return norcal_probabilities(softmax(logits), w, baseline.param);
    }
    std::vector<double> z(logits.begin(), logits.end());
    const double log_target = std::log(1.0 / static_cast<double>(w.num_classes()));
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        const double log_prior = std::log(w.log_prior_argument(k));
        switch (baseline.kind) {
            case Baseline::Kind::la: z[k] -= baseline.param * log_prior; break;
            case Baseline::Kind::iif: z[k] = -z[k] * log_prior; break;
            case Baseline::Kind::pcsa: z[k] = z[k] - log_prior + log_target; break;
            case Baseline::Kind::norcal: break;
        }
    }
    return activate(z, mode);
}

namespace {

std::string format_param(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::string Method::name() const {
    switch (kind) {
        case MethodKind::none: return "none";
        case MethodKind::class_only: return "class_only";
        case MethodKind::grid: return "grid(" + std::to_string(grid) + ")";
        case MethodKind::fracal: return "fracal";
        case MethodKind::fracal_binary: return "fracal_binary";
        case MethodKind::opposite: return "opposite";
        case MethodKind::la: return "la(" + format_param(tau) + ")";
        case MethodKind::iif: return "iif";
        case MethodKind::pcsa: return "pcsa";
        case MethodKind::norcal: return "norcal(" + format_param(gamma) + ")";
    }
    return "none";
}

Method parse_method(const std::string& text, const Method& defaults) {
    std::string name = text;
    std::string arg;
    const auto open = text.find('(');
    if (open != std::string::npos) {
        if (text.back() != ')') {
            throw InvalidArgument("malformed method '" + text + "'");
        }
        name = text.substr(0, open);
        arg = text.substr(open + 1, text.size() - open - 2);
    }
    std::replace(name.begin(), name.end(), '-', '_');

    Method m = defaults;
    if (name == "none") m.kind = MethodKind::none;
    else if (name == "class_only" || name == "class") m.kind = MethodKind::class_only;
    else if (name == "grid") m.kind = MethodKind::grid;
    else if (name == "fracal") m.kind = MethodKind::fracal;
    else if (name == "fracal_binary") m.kind = MethodKind::fracal_binary;
    else if (name == "opposite" || name == "fracal_opposite") m.kind = MethodKind::opposite;
    else if (name == "la") m.kind = MethodKind::la;
    else if (name == "iif") m.kind = MethodKind::iif;
    else if (name == "pcsa") m.kind = MethodKind::pcsa;
    else if (name == "norcal") m.kind = MethodKind::norcal;
    else throw InvalidArgument("unknown calibration method '" + text + "'");

    if (!arg.empty()) {
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), value);
        if (ec != std::errc() || ptr != arg.data() + arg.size()) {
            throw InvalidArgument("bad method parameter in '" + text + "'");
        }
        switch (m.kind) {
            case MethodKind::grid:
                if (value < 1.0 || value != std::floor(value)) {
                    throw InvalidArgument("grid size must be a positive integer");
                }
                m.grid = static_cast<std::size_t>(value);
                break;
            case MethodKind::la: m.tau = value; break;
            case MethodKind::norcal: m.gamma = value; break;
            default: throw InvalidArgument("method '" + name + "' takes no parameter");
        }
    }
    if (m.kind == MethodKind::la && m.tau < 0.0) throw InvalidArgument("LA tau must be >= 0");
    if (m.kind == MethodKind::norcal && m.gamma < 0.0) throw InvalidArgument("NorCal gamma must be >= 0");
    if (m.kind == MethodKind::grid && m.grid == 0) throw InvalidArgument("grid size must be at least 1");
    return m;
}

void check_method_mode(const Method& method, ScoreMode mode) {
    switch (method.kind) {
        case MethodKind::fracal:
        case MethodKind::opposite:
        case MethodKind::norcal:
            if (mode != ScoreMode::softmax) {
                throw ModeMismatch("method " + method.name() +
                                   " needs softmax logits with a trailing background entry; "
                                   "use fracal_binary for sigmoid detectors");
            }
            break;
        case MethodKind::fracal_binary:
            if (mode != ScoreMode::sigmoid) {
                throw ModeMismatch("method fracal_binary needs sigmoid logits; use fracal for "
                                   "softmax detectors");
            }
            break;
        default: break;
    }
}

std::vector<double> apply_method(const LogitRecord& record, ScoreMode mode,
                                 const CalibrationWeights& w, const Method& method) {
    check_method_mode(method, mode);
    const std::span<const double> z = record.logits;
    switch (method.kind) {
        case MethodKind::none:
            check_length(z, mode, w);
            return activate(z, mode);
        case MethodKind::class_only: return activate(class_calibrate(z, mode, w), mode);
        case MethodKind::grid:
            return activate(grid_calibrate(z, mode, record.box.center(), w, method.grid), mode);
        case MethodKind::fracal: return fracal(z, w);
        case MethodKind::fracal_binary: return fracal_binary(z, w);
        case MethodKind::opposite: return fracal_opposite(z, w);
        case MethodKind::la: return baseline_calibrate(z, mode, w, {Baseline::Kind::la, method.tau});
        case MethodKind::iif: return baseline_calibrate(z, mode, w, {Baseline::Kind::iif, 0.0});
        case MethodKind::pcsa: return baseline_calibrate(z, mode, w, {Baseline::Kind::pcsa, 0.0});
        case MethodKind::norcal:
            return baseline_calibrate(z, mode, w, {Baseline::Kind::norcal, method.gamma});
    }
    return {};
}

std::vector<ScoredRecord> calibrate_batch(std::span<const LogitRecord> records, ScoreMode mode,
                                          const CalibrationWeights& w, const Method& method) {
    check_method_mode(method, mode);
    std::vector<ScoredRecord> out(records.size());
    const auto count = static_cast<std::ptrdiff_t>(records.size());
    // Exceptions must not leave the parallel region; one captured failure is rethrown.
    std::exception_ptr failure;

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            const auto& rec = records[i];
            out[i] = ScoredRecord{rec.image_id, rec.box, apply_method(rec, mode, w, method)};
        } catch (...) {
#pragma omp critical(fracal_calibrate_failure)
            if (!failure) failure = std::current_exception();
        }
    }

    if (failure) std::rethrow_exception(failure);
    return out;
}

namespace reference {

std::vector<ScoredRecord> calibrate_batch(std::span<const LogitRecord> records, ScoreMode mode,
                                          const CalibrationWeights& w, const Method& method) {
    check_method_mode(method, mode);
    std::vector<ScoredRecord> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        out.push_back({rec.image_id, rec.box, apply_method(rec, mode, w, method)});
    }
    return out;
}

}  // namespace reference

}  // namespace fracal
