// fracal: spatial-statistics weights, logit calibration and evaluation for
// long-tailed detection outputs.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fracal/annotations.hpp"
#include "fracal/calibration.hpp"
#include "fracal/error.hpp"
#include "fracal/evalharness.hpp"
#include "fracal/fractal.hpp"
#include "fracal/io.hpp"
#include "fracal/pipeline.hpp"
#include "fracal/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fracal;

namespace {

void require_readable(const std::string& path) {
    if (!fs::is_regular_file(path)) {
        throw ParseError(path, "no such file");
    }
}

void warn_skipped(const Dataset& ds, const std::string& path) {
    if (ds.degenerate_skipped > 0) {
        std::cerr << path << ": skipped " << ds.degenerate_skipped
                  << " annotations with non-positive width or height\n";
    }
    if (ds.crowd_skipped > 0) {
        std::cerr << path << ": skipped " << ds.crowd_skipped << " crowd annotations\n";
    }
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// ---- stats -----------------------------------------------------------------

struct StatsArgs {
    std::string annotations;
    std::string out;
    std::string heatmap;
    std::size_t grid = 8;
    std::optional<ClassId> class_id;
};

int run_stats(const StatsArgs& a) {
    require_readable(a.annotations);
    const auto ds = load_annotations(a.annotations);
    warn_skipped(ds, a.annotations);
    const auto freq = compute_class_frequencies(ds);

    std::size_t groups[3] = {0, 0, 0};
    for (const auto& [id, f] : freq) ++groups[static_cast<int>(f.group)];
    std::cout << "images " << ds.images.size() << ", instances " << ds.instances.size()
              << ", categories " << ds.categories.size() << '\n'
              << "rare " << groups[0] << ", common " << groups[1] << ", frequent " << groups[2]
              << '\n';

    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw ParseError(a.out, "cannot open file for writing");
        write_frequency_csv(out, ds, freq);
    } else {
        write_frequency_csv(std::cout, ds, freq);
    }

    if (!a.heatmap.empty()) {
        const auto hist = spatial_histogram(ds, a.class_id, a.grid);
        std::ofstream out(a.heatmap);
        if (!out) throw ParseError(a.heatmap, "cannot open file for writing");
        if (fs::path(a.heatmap).extension() == ".json") {
            auto j = histogram_to_json(hist);
            j["class_id"] = a.class_id ? json(*a.class_id) : json(nullptr);
            out << j.dump() << '\n';
        } else {
            write_histogram_csv(out, hist);
        }
    }
    return 0;
}

// ---- weights ---------------------------------------------------------------

struct WeightsArgs {
    std::string annotations;
    std::string out;
    std::string series_csv;
    std::string variant = "box";
    std::optional<std::size_t> t_cap;
    double beta = kDefaultBeta;
    double lambda = kDefaultLambda;
    std::vector<std::size_t> grids;
    bool no_shift = false;
    std::string mode = "softmax";
};

void print_weight_summary(const FrequencyTable& freq, const std::map<ClassId, FractalEstimate>& est) {
    std::size_t groups[3] = {0, 0, 0};
    for (const auto& [id, f] : freq) ++groups[static_cast<int>(f.group)];
    std::size_t bins[4] = {0, 0, 0, 0};
    std::size_t fallback = 0;
    for (const auto& [id, e] : est) {
        ++bins[std::min<std::size_t>(3, static_cast<std::size_t>(e.phi / 0.5))];
        fallback += e.fallback ? 1 : 0;
    }
    std::cout << "classes " << est.size() << " (rare " << groups[0] << ", common " << groups[1]
              << ", frequent " << groups[2] << "), fallback phi=1: " << fallback << '\n'
              << "phi histogram [0,0.5) " << bins[0] << "  [0.5,1) " << bins[1] << "  [1,1.5) "
              << bins[2] << "  [1.5,2] " << bins[3] << '\n';
    try {
        std::cout << "pearson(phi, ln n) = " << std::fixed << std::setprecision(4)
                  << phi_frequency_correlation(est) << '\n';
    } catch (const std::exception& e) {
        std::cout << "pearson(phi, ln n) undefined: " << e.what() << '\n';
    }
}

int run_weights(const WeightsArgs& a) {
    require_readable(a.annotations);
    const auto ds = load_annotations(a.annotations);
    warn_skipped(ds, a.annotations);
    const ScoreMode mode = score_mode_from_string(a.mode);

    EstimateOptions options;
    options.variant = variant_from_string(a.variant);
    options.t_cap = a.t_cap;
    options.shift_info = !a.no_shift;

    const auto start = std::chrono::steady_clock::now();
    const auto stats = train_statistics(ds, options, a.beta, a.lambda, a.grids);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json header = {{"variant", to_string(options.variant)},
                   {"shift_info", options.shift_info},
                   {"t_cap", a.t_cap ? json(*a.t_cap) : json(nullptr)}};
    const auto classes = export_weights_json(ds, stats.frequencies, stats.estimates);
    save_json(weights_to_json(stats.weights, classes, mode, header), a.out);
    if (!a.series_csv.empty()) {
        std::ofstream out(a.series_csv);
        if (!out) throw ParseError(a.series_csv, "cannot open file for writing");
        write_series_csv(out, ds, stats.estimates);
    }
    print_weight_summary(stats.frequencies, stats.estimates);
    std::cerr << "weights computed in " << std::setprecision(3) << seconds << " s\n";
    return 0;
}

// ---- calibrate -------------------------------------------------------------

struct CalibrateArgs {
    std::string logits;
    std::string weights;
    std::string out;
    std::string method = "fracal";
    std::optional<double> beta;
    std::optional<double> lambda;
    double gamma = 1.0;
    double tau = 1.0;
    std::size_t grid = 1;
};

int run_calibrate(const CalibrateArgs& a) {
    require_readable(a.logits);
    require_readable(a.weights);
    Method defaults;
    defaults.gamma = a.gamma;
    defaults.tau = a.tau;
    defaults.grid = a.grid;
    const Method method = parse_method(a.method, defaults);

    auto wf = load_weights(a.weights);
    CalibrationWeights w = wf.weights;
    if (a.beta) w = w.with_beta(*a.beta);
    if (a.lambda) w = w.with_lambda(*a.lambda);

    const auto logits = load_logits(a.logits);
    check_method_mode(method, logits.header.mode);
    if (logits.header.num_classes != w.num_classes()) {
        throw InvalidArgument("logits declare " + std::to_string(logits.header.num_classes) +
                              " classes but the weights hold " + std::to_string(w.num_classes()));
    }
    if (!logits.header.class_ids.empty() && logits.header.class_ids != w.class_ids()) {
        throw InvalidArgument("class ids of logits and weights differ");
    }

    ScoresFile out;
    out.header = logits.header;
    if (out.header.class_ids.empty()) out.header.class_ids = w.class_ids();
    out.header.extra["method"] = method.name();
    out.header.extra["beta"] = w.beta();
    out.header.extra["lambda"] = w.lambda();
    out.header.extra["zero_frequency_classes"] = w.zero_frequency_classes();
    out.header.extra["phi_floored_classes"] = w.floored_phi_classes();
    out.records = calibrate_batch(logits.records, logits.header.mode, w, method);
    save_scores(out, a.out);
    if (!w.zero_frequency_classes().empty()) {
        std::cerr << "note: " << w.zero_frequency_classes().size()
                  << " classes have no training instances; n_y = 1 used in their priors\n";
    }
    if (!w.floored_phi_classes().empty() && w.lambda() > 0.0) {
        std::cerr << "note: " << w.floored_phi_classes().size() << " classes have phi below "
                  << kPhiFloor << "; floored\n";
    }
    std::cerr << "calibrated " << out.records.size() << " records with " << method.name() << '\n';
    return 0;
}

// ---- nms / eval ------------------------------------------------------------

struct PostArgs {
    double nms_iou = kDefaultNmsIou;
    double score_thr = 0.0;
    std::size_t max_per_image = kDefaultMaxPerImage;
    bool class_agnostic = false;

    PostprocessOptions options() const {
        return {nms_iou, !class_agnostic, score_thr, max_per_image};
    }
};

bool looks_like_scores(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            return j.is_object() && j.contains("mode") && j.contains("num_classes");
        } catch (const json::exception&) {
            return false;
        }
    }
    return false;
}

std::vector<Detection> load_candidates(const std::string& path) {
    require_readable(path);
    if (looks_like_scores(path)) {
        return expand_scores(load_scores(path));
    }
    return load_detections(path);
}

struct NmsArgs {
    std::string input;
    std::string out;
    PostArgs post;
};

int run_nms(const NmsArgs& a) {
    const auto candidates = load_candidates(a.input);
    const auto res = postprocess(candidates, a.post.options());
    save_detections(res.detections, a.out);
    std::cerr << "input " << res.input << ", below threshold " << res.below_threshold
              << ", suppressed " << res.suppressed << ", over cap " << res.over_cap << ", kept "
              << res.detections.size() << '\n';
    return 0;
}

struct EvalArgs {
    std::string input;
    std::string annotations;
    std::string weights;
    std::string out;
    double iou_match = kDefaultMatchIou;
    bool no_timestamp = false;
    PostArgs post;
};

int run_eval(const EvalArgs& a) {
    require_readable(a.annotations);
    const auto candidates = load_candidates(a.input);
    const auto gts = load_annotations(a.annotations);
    warn_skipped(gts, a.annotations);
    std::map<ClassId, FrequencyGroup> groups;
    if (!a.weights.empty()) {
        require_readable(a.weights);
        groups = groups_from_classes(load_weights(a.weights).classes);
    }
    const auto processed = postprocess(candidates, a.post.options());
    auto report = evaluate(processed.detections, gts, groups, a.iou_match);
    report.detections_suppressed = processed.suppressed + processed.over_cap;

    print_report(std::cout, report);
    if (!a.out.empty()) {
        auto j = report_to_json(report);
        j["metadata"] = {{"nms_iou", a.post.nms_iou},
                         {"iou_match", a.iou_match},
                         {"max_per_image", a.post.max_per_image},
                         {"score_threshold", a.post.score_thr}};
        if (!a.no_timestamp) j["metadata"]["generated_at"] = utc_timestamp();
        save_json(j, a.out);
    }
    return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
    std::string out_dir;
    std::string preset = "standard";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> classes;
    std::optional<double> clutter;
    std::optional<double> frequency_bias;
    std::optional<double> spatial_bias;
    std::optional<double> noise;
};

int run_simulate(const SimulateArgs& a) {
    ScenarioSpec spec;
    if (a.preset == "standard") spec = ScenarioSpec::standard();
    else if (a.preset == "sparse") spec = ScenarioSpec::sparse();
    else throw InvalidArgument("unknown preset '" + a.preset + "'");
    if (a.seed) spec.seed = *a.seed;
    if (a.classes) spec.num_classes = *a.classes;
    if (a.clutter) spec.clutter_rate = *a.clutter;
    if (a.frequency_bias) spec.bias.frequency = *a.frequency_bias;
    if (a.spatial_bias) spec.bias.spatial = *a.spatial_bias;
    if (a.noise) spec.bias.noise = *a.noise;

    const auto batch = simulate_scenario(spec);
    fs::create_directories(a.out_dir);
    const fs::path dir(a.out_dir);
    save_annotations(batch.train, dir / "train.json");
    save_annotations(batch.ground_truth, dir / "test.json");
    save_logits({batch.header, batch.proposals}, dir / "logits.jsonl");
    std::cout << "train instances " << batch.train.instances.size() << ", test instances "
              << batch.ground_truth.instances.size() << ", proposals " << batch.proposals.size()
              << '\n'
              << "wrote " << (dir / "train.json").string() << ", " << (dir / "test.json").string()
              << ", " << (dir / "logits.jsonl").string() << '\n';
    return 0;
}

// ---- correlate -------------------------------------------------------------

int run_correlate(const std::string& weights_path) {
    require_readable(weights_path);
    const auto wf = load_weights(weights_path);
    const auto& w = wf.weights;
    std::vector<double> log_n;
    std::vector<double> phi;
    for (std::size_t k = 0; k < w.num_classes(); ++k) {
        if (w.counts()[k] == 0) continue;
        log_n.push_back(std::log(static_cast<double>(w.counts()[k])));
        phi.push_back(w.phi()[k]);
    }
    std::cout << "classes " << phi.size() << "\npearson(phi, ln n) = " << std::fixed
              << std::setprecision(4) << pearson_correlation(log_n, phi) << '\n';
    return 0;
}

void add_post_flags(CLI::App* cmd, PostArgs& post) {
    cmd->add_option("--nms-iou", post.nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--score-thr", post.score_thr, "drop scores below this before NMS");
    cmd->add_option("--max-per-image", post.max_per_image, "per-image detection cap (0 = none)");
    cmd->add_flag("--class-agnostic", post.class_agnostic, "suppress across classes");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fracal: fractal-dimension weights and post-hoc logit calibration for detectors"};
    app.require_subcommand(1);

    StatsArgs stats;
    auto* cmd_stats = app.add_subcommand("stats", "per-class frequency table and location heatmap");
    cmd_stats->add_option("annotations", stats.annotations, "COCO/LVIS annotation JSON")->required();
    cmd_stats->add_option("--out", stats.out, "CSV output (default: stdout)");
    cmd_stats->add_option("--grid", stats.grid, "heatmap grid size")->check(CLI::PositiveNumber);
    cmd_stats->add_option("--class", stats.class_id, "restrict the heatmap to one class");
    cmd_stats->add_option("--heatmap", stats.heatmap, "heatmap output (.csv or .json)");

    WeightsArgs weights;
    auto* cmd_weights = app.add_subcommand("weights", "estimate per-class fractal dimensions");
    cmd_weights->add_option("annotations", weights.annotations, "training annotations")->required();
    cmd_weights->add_option("--out", weights.out, "weights JSON")->required();
    cmd_weights->add_option("--variant", weights.variant, "box, info or smooth-info")
        ->check(CLI::IsMember({"box", "info", "smooth-info", "smooth_info"}));
    cmd_weights->add_option("--t-cap", weights.t_cap, "upper bound on the fit threshold")
        ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
    cmd_weights->add_option("--beta", weights.beta, "logarithm base")->check(CLI::Range(1.0, 1e300));
    cmd_weights->add_option("--lambda", weights.lambda, "fractal exponent")->check(CLI::NonNegativeNumber);
    cmd_weights->add_option("--grid", weights.grids, "store per-cell priors at these grid sizes")
        ->check(CLI::PositiveNumber);
    cmd_weights->add_option("--mode", weights.mode, "detector head: softmax or sigmoid")
        ->check(CLI::IsMember({"softmax", "sigmoid"}));
    cmd_weights->add_flag("--no-shift", weights.no_shift, "keep raw info/smooth-info slopes");
    cmd_weights->add_option("--series-csv", weights.series_csv, "write (G, nu) series per class");

    CalibrateArgs cal;
    auto* cmd_cal = app.add_subcommand("calibrate", "apply a calibration to a logits file");
    cmd_cal->add_option("logits", cal.logits, "logits JSON Lines")->required();
    cmd_cal->add_option("--weights", cal.weights, "weights JSON")->required();
    cmd_cal->add_option("--out", cal.out, "calibrated scores JSON Lines")->required();
    cmd_cal->add_option("--method", cal.method,
                        "fracal, fracal_binary, opposite, class_only, grid(G), la(tau), iif, pcsa, "
                        "norcal(gamma), none");
    cmd_cal->add_option("--beta", cal.beta, "override the weights' logarithm base");
    cmd_cal->add_option("--lambda", cal.lambda, "override the weights' fractal exponent");
    cmd_cal->add_option("--gamma", cal.gamma, "NorCal exponent")->check(CLI::NonNegativeNumber);
    cmd_cal->add_option("--tau", cal.tau, "LA temperature")->check(CLI::NonNegativeNumber);
    cmd_cal->add_option("--grid", cal.grid, "grid size for --method grid")->check(CLI::PositiveNumber);

    NmsArgs nms_args;
    auto* cmd_nms = app.add_subcommand("nms", "turn scores into detections (class-wise NMS)");
    cmd_nms->add_option("input", nms_args.input, "scores or detections JSON Lines")->required();
    cmd_nms->add_option("--out", nms_args.out, "detections JSON Lines")->required();
    add_post_flags(cmd_nms, nms_args.post);

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "NMS then per-class and grouped AP");
    cmd_eval->add_option("input", eval.input, "scores or detections JSON Lines")->required();
    cmd_eval->add_option("--annotations", eval.annotations, "ground-truth annotations")->required();
    cmd_eval->add_option("--weights", eval.weights, "weights JSON supplying training groups");
    cmd_eval->add_option("--out", eval.out, "report JSON");
    cmd_eval->add_option("--iou-match", eval.iou_match, "IoU for a true positive")
        ->check(CLI::Range(1e-9, 1.0));
    cmd_eval->add_flag("--no-timestamp", eval.no_timestamp, "omit generated_at from the report");
    add_post_flags(cmd_eval, eval.post);

    SimulateArgs sim;
    auto* cmd_sim = app.add_subcommand("simulate", "synthetic long-tailed scenario");
    cmd_sim->add_option("--out", sim.out_dir, "output directory")->required();
    cmd_sim->add_option("--preset", sim.preset, "standard or sparse")
        ->check(CLI::IsMember({"standard", "sparse"}));
    cmd_sim->add_option("--seed", sim.seed, "random seed");
    cmd_sim->add_option("--classes", sim.classes, "number of classes")->check(CLI::PositiveNumber);
    cmd_sim->add_option("--clutter", sim.clutter, "background proposals per image")
        ->check(CLI::NonNegativeNumber);
    cmd_sim->add_option("--frequency-bias", sim.frequency_bias, "logit weight of ln(n+1)");
    cmd_sim->add_option("--spatial-bias", sim.spatial_bias, "logit weight of spatial affinity");
    cmd_sim->add_option("--noise", sim.noise, "logit noise sigma")->check(CLI::NonNegativeNumber);

    std::string correlate_path;
    auto* cmd_corr = app.add_subcommand("correlate", "Pearson correlation of phi and ln(n)");
    cmd_corr->add_option("weights", correlate_path, "weights JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_stats) return run_stats(stats);
        if (*cmd_weights) return run_weights(weights);
        if (*cmd_cal) return run_calibrate(cal);
        if (*cmd_nms) return run_nms(nms_args);
        if (*cmd_eval) return run_eval(eval);
        if (*cmd_sim) return run_simulate(sim);
        if (*cmd_corr) return run_correlate(correlate_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
