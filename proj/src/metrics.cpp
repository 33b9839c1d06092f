#include "tdmr/metrics.hpp"

#include "tdmr/objectives.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tdmr::metrics {

using nlohmann::json;

namespace {

const std::vector<double> kAvgMapThresholds = {0.5,  0.55, 0.6,  0.65, 0.7,
                                               0.75, 0.8,  0.85, 0.9,  0.95};

std::string key(const char* name, double tau) {
    std::ostringstream os;
    os << name << "@" << std::fixed;
    os.precision(2);
    os << tau;
    return os.str();
}

}  // namespace

Mode mode_from_string(const std::string& s) {
    if (s == "standard") return Mode::kStandard;
    if (s == "spurious") return Mode::kSpurious;
    if (s == "dynamic-context") return Mode::kDynamicContext;
    throw ValidationError("unknown evaluation mode '" + s + "'");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::kStandard: return "standard";
        case Mode::kSpurious: return "spurious";
        case Mode::kDynamicContext: return "dynamic-context";
    }
    return "?";
}

void rank_predictions(std::vector<ScoredPrediction>& preds, std::size_t max_predictions) {
    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a].confidence != preds[b].confidence) {
            return preds[a].confidence > preds[b].confidence;
        }
        if (preds[a].start != preds[b].start) return preds[a].start < preds[b].start;
        return a < b;
    });
    std::vector<ScoredPrediction> sorted;
    sorted.reserve(std::min(order.size(), max_predictions));
    for (std::size_t i = 0; i < order.size() && i < max_predictions; ++i) {
        sorted.push_back(preds[order[i]]);
    }
    preds = std::move(sorted);
}

double recall_at_1(const std::vector<QueryResult>& results, double tau) {
    if (results.empty()) throw ValidationError("recall_at_1: empty result set");
    std::size_t hits = 0;
    for (const QueryResult& r : results) {
        if (r.predictions.empty() || r.gts.empty()) continue;  // scored as miss
        const ScoredPrediction& top = r.predictions.front();
        for (const data::Window& g : r.gts) {
            if (objectives::interval_iou(top.start, top.end, g.start, g.end) >= tau) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double average_precision(const std::vector<ScoredPrediction>& preds,
                         const std::vector<data::Window>& gts, double tau) {
    if (gts.empty()) return 0.0;
    std::vector<char> taken(gts.size(), 0);
    double ap = 0.0;
    std::size_t matched = 0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j]) continue;
            const double iou = objectives::interval_iou(preds[k].start, preds[k].end,
                                                        gts[j].start, gts[j].end);
            if (iou >= tau && iou > best_iou) {
                best = static_cast<int>(j);
                best_iou = iou;
            }
        }
        if (best < 0) continue;
        taken[best] = 1;
        ++matched;
        const double recall = static_cast<double>(matched) / static_cast<double>(gts.size());
        const double precision = static_cast<double>(matched) / static_cast<double>(k + 1);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double mean_average_precision(const std::vector<QueryResult>& results, double tau) {
    if (results.empty()) throw ValidationError("mean_average_precision: empty result set");
    double sum = 0.0;
    for (const QueryResult& r : results) sum += average_precision(r.predictions, r.gts, tau);
    return 100.0 * sum / static_cast<double>(results.size());
}

MetricsReport compute_report(const std::vector<QueryResult>& results, Mode mode) {
    MetricsReport rep;
    rep.mode = mode;
    const bool spurious = mode == Mode::kSpurious;
    const std::vector<double> r1_taus = spurious ? std::vector<double>{0.7, 0.9}
                                                 : std::vector<double>{0.5, 0.7};
    for (double tau : r1_taus) rep.values[key("R1", tau)] = recall_at_1(results, tau);
    if (spurious) {
        rep.values[key("mAP", 0.75)] = mean_average_precision(results, 0.75);
    } else {
        rep.values[key("mAP", 0.5)] = mean_average_precision(results, 0.5);
        rep.values[key("mAP", 0.75)] = mean_average_precision(results, 0.75);
    }
    double avg = 0.0;
    for (double tau : kAvgMapThresholds) avg += mean_average_precision(results, tau);
    rep.values["mAP@avg"] = avg / static_cast<double>(kAvgMapThresholds.size());
    return rep;
}

std::vector<QueryResult> predict_dataset(model::TdDetr& m, const data::Dataset& ds, Mode mode,
                                         std::uint64_t seed) {
    if (ds.size() == 0) throw ValidationError("predict_dataset: empty dataset");
    const data::Dataset* eval_ds = &ds;
    data::Dataset surgered;
    RngStream rng(seed);
    if (mode == Mode::kDynamicContext) {
        surgered = data::build_dynamic_context_split(ds, rng);
        eval_ds = &surgered;
    }
    std::vector<QueryResult> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const data::QueryAnnotation& q = eval_ds->queries[i];
        data::ClipFeatureSequence video = eval_ds->video_for(i);
        if (mode == Mode::kSpurious) {
            RngStream mask_rng = rng.derive(i);
            video = data::mask_target_moment(video, q, mask_rng);
        }
        model::MomentPrediction pred = m.predict(video.clips, q.query_tokens);
        QueryResult r;
        r.qid = q.qid;
        r.gts = q.relevant_windows;  // original windows in every mode
        for (Index k = 0; k < pred.spans.rows(); ++k) {
            const double c = pred.spans(k, 0) * q.duration;
            const double w = pred.spans(k, 1) * q.duration;
            ScoredPrediction s;
            s.start = std::clamp(c - w / 2.0, 0.0, q.duration);
            s.end = std::clamp(c + w / 2.0, 0.0, q.duration);
            if (s.end <= s.start) s.end = std::min(q.duration, s.start + 1e-6);
            s.confidence = pred.fg_probs[k];
            r.predictions.push_back(s);
        }
        rank_predictions(r.predictions);
        out.push_back(std::move(r));
    }
    return out;
}

MetricsReport evaluate(model::TdDetr& m, const data::Dataset& ds, Mode mode,
                       std::uint64_t seed) {
    return compute_report(predict_dataset(m, ds, mode, seed), mode);
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << "mode: " << metrics::to_string(mode) << "\n";
    for (const auto& [k, v] : values) {
        os << "  " << k << "  " << std::fixed;
        os.precision(2);
        os << v << "\n";
    }
    return os.str();
}

std::string MetricsReport::to_json() const {
    json j;
    j["mode"] = metrics::to_string(mode);
    json metrics_arr = json::array();
    for (const auto& [k, v] : values) {
        const auto at = k.find('@');
        json e;
        e["metric"] = k.substr(0, at);
        e["threshold"] = k.substr(at + 1);
        e["value"] = v;
        metrics_arr.push_back(e);
    }
    j["metrics"] = metrics_arr;
    return j.dump(2);
}

void dump_predictions(const std::vector<QueryResult>& results,
                      const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write predictions: " + path.string());
    for (const QueryResult& r : results) {
        json j;
        j["qid"] = r.qid;
        json spans = json::array();
        for (const ScoredPrediction& p : r.predictions) {
            spans.push_back({p.start, p.end, p.confidence});
        }
        j["spans"] = spans;
        out << j.dump() << '\n';
    }
}

std::vector<QueryResult> load_predictions(const std::filesystem::path& path,
                                          const data::Dataset& ds) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open predictions: " + path.string());
    std::map<std::int64_t, std::vector<ScoredPrediction>> by_qid;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        std::vector<ScoredPrediction> preds;
        for (const auto& s : j.at("spans")) {
            preds.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
        }
        by_qid[j.at("qid").get<std::int64_t>()] = std::move(preds);
    }
    std::vector<QueryResult> out;
    for (const data::QueryAnnotation& q : ds.queries) {
        QueryResult r;
        r.qid = q.qid;
        r.gts = q.relevant_windows;
        auto it = by_qid.find(q.qid);
        if (it != by_qid.end()) r.predictions = it->second;
        rank_predictions(r.predictions);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace tdmr::metrics
