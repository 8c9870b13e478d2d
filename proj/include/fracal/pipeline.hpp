#pragma once

#include <cstddef>
#include <map>
#include <span>

#include "fracal/annotations.hpp"
#include "fracal/calibration.hpp"
#include "fracal/evalharness.hpp"
#include "fracal/fractal.hpp"
#include "fracal/synthetic.hpp"

namespace fracal {

// Training-split statistics: frequencies, fractal dimensions and the
// calibration weights built from them.
struct TrainStatistics {
    FrequencyTable frequencies;
    std::map<ClassId, FractalEstimate> estimates;
    CalibrationWeights weights;

    std::map<ClassId, FrequencyGroup> groups() const;
};

TrainStatistics train_statistics(const Dataset& train, const EstimateOptions& options = {},
                                 double beta = kDefaultBeta, double lambda = kDefaultLambda,
                                 std::span<const std::size_t> grids = {});

struct MethodResult {
    EvalReport report;
    PostprocessResult postprocess;
};

// calibrate -> expand -> threshold / NMS / cap -> evaluate
MethodResult run_method(std::span<const LogitRecord> proposals, const RecordHeader& header,
                        const Dataset& ground_truth, const CalibrationWeights& weights,
                        const std::map<ClassId, FrequencyGroup>& groups, const Method& method,
                        const PostprocessOptions& post = {}, double iou_match = kDefaultMatchIou);

MethodResult run_method(const SimulatedBatch& batch, const TrainStatistics& stats,
                        const Method& method, const PostprocessOptions& post = {},
                        double iou_match = kDefaultMatchIou);

}  // namespace fracal
