#pragma once

#include "tdmr/data.hpp"
#include "tdmr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tdmr::metrics {

enum class Mode { kStandard, kSpurious, kDynamicContext };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

struct ScoredPrediction {
    double start = 0.0;
    double end = 0.0;
    double confidence = 0.0;
};

// One query's ranked predictions and its ground truth.
struct QueryResult {
    std::int64_t qid = 0;
    std::vector<ScoredPrediction> predictions;  // sorted desc by confidence
    std::vector<data::Window> gts;
};

struct MetricsReport {
    Mode mode = Mode::kStandard;
    // key -> percent, e.g. "R1@0.50", "mAP@0.75", "mAP@avg"
    std::map<std::string, double> values;

    std::string to_text() const;
    std::string to_json() const;
};

// Percent of queries whose top prediction reaches IoU >= tau with some
// GT window. Queries without predictions count as misses.
double recall_at_1(const std::vector<QueryResult>& results, double tau);

// Exact area under the step precision-recall curve, greedy one-to-one
// GT matching at IoU >= tau. Predictions must be pre-sorted.
double average_precision(const std::vector<ScoredPrediction>& preds,
                         const std::vector<data::Window>& gts, double tau);

double mean_average_precision(const std::vector<QueryResult>& results, double tau);

// Sort desc by confidence (ties: earlier start, then original index)
// and cap at max_predictions.
void rank_predictions(std::vector<ScoredPrediction>& preds, std::size_t max_predictions = 10);

MetricsReport compute_report(const std::vector<QueryResult>& results, Mode mode);

// Eval-mode model predictions over a dataset; spurious / dynamic-context
// modes apply the corresponding dataset surgery first (seeded).
std::vector<QueryResult> predict_dataset(model::TdDetr& m, const data::Dataset& ds, Mode mode,
                                         std::uint64_t seed);

MetricsReport evaluate(model::TdDetr& m, const data::Dataset& ds, Mode mode, std::uint64_t seed);

// Line-delimited JSON prediction dump: {"qid":..,"spans":[[s,e,conf],..]}
void dump_predictions(const std::vector<QueryResult>& results, const std::filesystem::path& path);
std::vector<QueryResult> load_predictions(const std::filesystem::path& path,
                                          const data::Dataset& ds);

}  // namespace tdmr::metrics
