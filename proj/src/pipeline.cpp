#include "fracal/pipeline.hpp"

namespace fracal {

std::map<ClassId, FrequencyGroup> TrainStatistics::groups() const {
    std::map<ClassId, FrequencyGroup> out;
    for (const auto& [id, f] : frequencies) out[id] = f.group;
    return out;
}

TrainStatistics train_statistics(const Dataset& train, const EstimateOptions& options, double beta,
                                 double lambda, std::span<const std::size_t> grids) {
    auto frequencies = compute_class_frequencies(train);
    auto estimates = estimate_all(train, options);
    std::map<ClassId, double> phi;
    for (const auto& [id, est] : estimates) phi[id] = est.phi;
    auto weights = make_weights(train, phi, beta, lambda, grids);
    return {std::move(frequencies), std::move(estimates), std::move(weights)};
}

MethodResult run_method(std::span<const LogitRecord> proposals, const RecordHeader& header,
                        const Dataset& ground_truth, const CalibrationWeights& weights,
                        const std::map<ClassId, FrequencyGroup>& groups, const Method& method,
                        const PostprocessOptions& post, double iou_match) {
    ScoresFile scores{header, calibrate_batch(proposals, header.mode, weights, method)};
    const auto candidates = expand_scores(scores);
    auto processed = postprocess(candidates, post);
    auto report = evaluate(processed.detections, ground_truth, groups, iou_match);
    report.detections_suppressed = processed.suppressed;
    return {std::move(report), std::move(processed)};
}

MethodResult run_method(const SimulatedBatch& batch, const TrainStatistics& stats,
                        const Method& method, const PostprocessOptions& post, double iou_match) {
    return run_method(batch.proposals, batch.header, batch.ground_truth, stats.weights,
                      stats.groups(), method, post, iou_match);
}

}  // namespace fracal
