#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "tdmr/data.hpp"
#include "tdmr/metrics.hpp"
#include "tdmr/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <unistd.h>
#include <vector>

using namespace tdmr;
using namespace tdmr::metrics;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tdmr_metrics_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

double oracle_iou(double s1, double e1, double s2, double e2) {
    const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
    const double uni = (e1 - s1) + (e2 - s2) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// Direct PR-curve AP, structured differently from the implementation.
double oracle_ap(const std::vector<ScoredPrediction>& preds,
                 const std::vector<data::Window>& gts, double tau) {
    std::vector<bool> used(gts.size(), false);
    std::size_t tp = 0;
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        double best_iou = -1.0;
        int best = -1;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (used[j]) continue;
            const double iou = oracle_iou(preds[k].start, preds[k].end, gts[j].start, gts[j].end);
            if (iou >= tau && iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0) {
            used[best] = true;
            ++tp;
            const double recall = static_cast<double>(tp) / static_cast<double>(gts.size());
            ap += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(k + 1));
            prev_recall = recall;
        }
    }
    return ap;
}

}  // namespace

TEST_CASE("interval iou via recall_at_1: threshold arithmetic") {
    std::vector<QueryResult> results(1);
    results[0].qid = 1;
    results[0].gts = {{10.0, 20.0}};
    results[0].predictions = {{12.0, 22.0, 0.9}};  // IoU = 8/12 = 0.667
    CHECK(recall_at_1(results, 0.5) == doctest::Approx(100.0));
    CHECK(recall_at_1(results, 0.7) == doctest::Approx(0.0));
}

TEST_CASE("recall_at_1: perfect predictions, missing predictions count as misses") {
    std::vector<QueryResult> results(2);
    results[0].gts = {{0.0, 10.0}};
    results[0].predictions = {{0.0, 10.0, 1.0}};
    results[1].gts = {{5.0, 15.0}};  // no predictions
    CHECK(recall_at_1(results, 0.5) == doctest::Approx(50.0));
}

TEST_CASE("recall_at_1: exhaustive per-query oracle on random suites") {
    RngStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<QueryResult> results;
        for (int q = 0; q < 10; ++q) {
            QueryResult r;
            r.qid = q;
            const int ng = 1 + static_cast<int>(rng.uniform_int(0, 2));
            for (int j = 0; j < ng; ++j) {
                const double s = 50.0 * rng.uniform();
                r.gts.push_back({s, s + 2.0 + 20.0 * rng.uniform()});
            }
            const int np = static_cast<int>(rng.uniform_int(0, 4));
            for (int k = 0; k < np; ++k) {
                const double s = 50.0 * rng.uniform();
                r.predictions.push_back({s, s + 2.0 + 20.0 * rng.uniform(), rng.uniform()});
            }
            rank_predictions(r.predictions);
            results.push_back(std::move(r));
        }
        for (double tau : {0.3, 0.5, 0.7}) {
            int hits = 0;
            for (const auto& r : results) {
                if (r.predictions.empty()) continue;
                for (const auto& g : r.gts) {
                    if (oracle_iou(r.predictions[0].start, r.predictions[0].end, g.start, g.end) >=
                        tau) {
                        ++hits;
                        break;
                    }
                }
            }
            const double expect = 100.0 * hits / static_cast<double>(results.size());
            CHECK(recall_at_1(results, tau) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("average_precision: single match is 1.0; rank-1 miss rank-2 hit is 0.5") {
    std::vector<data::Window> gts = {{10.0, 20.0}};
    std::vector<ScoredPrediction> hit = {{10.0, 20.0, 0.9}};
    CHECK(average_precision(hit, gts, 0.5) == doctest::Approx(1.0));

    std::vector<ScoredPrediction> two = {{50.0, 60.0, 0.9}, {10.0, 20.0, 0.8}};
    // precision at the hit is 1/2, covering all recall
    CHECK(average_precision(two, gts, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("average_precision: 1000 fuzzed instances match the PR-curve oracle exactly") {
    RngStream rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<data::Window> gts;
        const int ng = 1 + static_cast<int>(rng.uniform_int(0, 4));
        for (int j = 0; j < ng; ++j) {
            const double s = 100.0 * rng.uniform();
            gts.push_back({s, s + 1.0 + 20.0 * rng.uniform()});
        }
        std::vector<ScoredPrediction> preds;
        const int np = static_cast<int>(rng.uniform_int(0, 20));
        for (int k = 0; k < np; ++k) {
            const double s = 100.0 * rng.uniform();
            preds.push_back({s, s + 1.0 + 20.0 * rng.uniform(), rng.uniform()});
        }
        rank_predictions(preds, 100);
        for (double tau : {0.3, 0.5, 0.7, 0.9}) {
            CHECK(average_precision(preds, gts, tau) ==
                  doctest::Approx(oracle_ap(preds, gts, tau)).epsilon(1e-12));
        }
    }
}

TEST_CASE("mAP monotone nonincreasing in the IoU threshold") {
    RngStream rng(11);
    std::vector<QueryResult> results;
    for (int q = 0; q < 20; ++q) {
        QueryResult r;
        r.qid = q;
        const double s = 50.0 * rng.uniform();
        r.gts.push_back({s, s + 5.0 + 10.0 * rng.uniform()});
        for (int k = 0; k < 5; ++k) {
            const double ps = 50.0 * rng.uniform();
            r.predictions.push_back({ps, ps + 5.0 + 10.0 * rng.uniform(), rng.uniform()});
        }
        rank_predictions(r.predictions);
        results.push_back(std::move(r));
    }
    double prev = 101.0;
    for (double tau = 0.5; tau <= 0.951; tau += 0.05) {
        const double v = mean_average_precision(results, tau);
        CHECK(v <= prev + 1e-9);
        prev = v;
    }
}

TEST_CASE("rank_predictions: confidence desc, ties by earlier start then index, cap applies") {
    std::vector<ScoredPrediction> preds = {
        {5.0, 6.0, 0.5}, {1.0, 2.0, 0.9}, {3.0, 4.0, 0.9}, {0.5, 1.5, 0.5},
    };
    rank_predictions(preds, 3);
    REQUIRE(preds.size() == 3);
    CHECK(preds[0].start == 1.0);   // 0.9, earlier start
    CHECK(preds[1].start == 3.0);   // 0.9, later start
    CHECK(preds[2].start == 0.5);   // 0.5, earlier start wins over index
}

TEST_CASE("compute_report: mode-specific keys and percent ranges") {
    std::vector<QueryResult> results(1);
    results[0].gts = {{0.0, 10.0}};
    results[0].predictions = {{0.0, 10.0, 1.0}};

    auto std_report = compute_report(results, Mode::kStandard);
    CHECK(std_report.values.count("R1@0.50"));
    CHECK(std_report.values.count("R1@0.70"));
    CHECK(std_report.values.count("mAP@0.50"));
    CHECK(std_report.values.count("mAP@0.75"));
    CHECK(std_report.values.count("mAP@avg"));
    CHECK(std_report.values.at("R1@0.50") == doctest::Approx(100.0));

    auto spur = compute_report(results, Mode::kSpurious);
    CHECK(spur.values.count("R1@0.70"));
    CHECK(spur.values.count("R1@0.90"));
    CHECK(spur.values.count("mAP@0.75"));
    CHECK(spur.values.count("mAP@avg"));
    for (const auto& [k, v] : spur.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
    }

    // report serializations parse and carry the mode
    auto j = nlohmann::json::parse(std_report.to_json());
    CHECK(j.at("mode") == "standard");
    CHECK_FALSE(std_report.to_text().empty());
}

TEST_CASE("mode strings round trip") {
    for (auto m : {Mode::kStandard, Mode::kSpurious, Mode::kDynamicContext}) {
        CHECK(mode_from_string(to_string(m)) == m);
    }
    CHECK_THROWS_AS(mode_from_string("bogus"), ValidationError);
}

TEST_CASE("prediction dump: JSONL round trip reproduces the exact report") {
    RngStream rng(13);
    data::SynthConfig cfg;
    cfg.num_samples = 6;
    cfg.feature_dim = 8;
    cfg.text_dim = 8;
    data::Dataset ds = data::generate_synthetic(cfg, RngStream(5));

    std::vector<QueryResult> results;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        QueryResult r;
        r.qid = ds.queries[i].qid;
        for (const auto& w : ds.queries[i].relevant_windows) r.gts.push_back(w);
        for (int k = 0; k < 4; ++k) {
            const double s = ds.queries[i].duration * rng.uniform() * 0.8;
            r.predictions.push_back({s, s + 2.0, rng.uniform()});
        }
        rank_predictions(r.predictions);
        results.push_back(std::move(r));
    }

    TempDir tmp;
    const fs::path p = tmp.path / "preds.jsonl";
    dump_predictions(results, p);
    auto loaded = load_predictions(p, ds);
    REQUIRE(loaded.size() == results.size());

    auto a = compute_report(results, Mode::kStandard);
    auto b = compute_report(loaded, Mode::kStandard);
    for (const auto& [k, v] : a.values) CHECK(b.values.at(k) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("evaluate: untrained model produces a full report; spurious GTs equal standard GTs") {
    data::SynthConfig cfg;
    cfg.num_samples = 5;
    cfg.feature_dim = 8;
    cfg.text_dim = 8;
    data::Dataset ds = data::generate_synthetic(cfg, RngStream(17));

    model::ModelConfig mc;
    mc.video_dim = 8;
    mc.text_dim = 8;
    mc.hidden = 8;
    mc.depth = 1;
    mc.num_queries = 3;
    mc.heads = 2;
    mc.dynamics_layers = 1;
    model::TdDetr m(mc);
    RngStream init(19);
    m.init(init);

    auto std_results = predict_dataset(m, ds, Mode::kStandard, 7);
    auto spur_results = predict_dataset(m, ds, Mode::kSpurious, 7);
    REQUIRE(std_results.size() == spur_results.size());
    for (std::size_t i = 0; i < std_results.size(); ++i) {
        // only features change under masking; the GT windows are shared
        REQUIRE(std_results[i].gts.size() == spur_results[i].gts.size());
        for (std::size_t w = 0; w < std_results[i].gts.size(); ++w) {
            CHECK(std_results[i].gts[w].start == spur_results[i].gts[w].start);
            CHECK(std_results[i].gts[w].end == spur_results[i].gts[w].end);
        }
        CHECK(std_results[i].predictions.size() <= 10);
        for (const auto& p : std_results[i].predictions) CHECK(p.start < p.end);
    }

    // deterministic given seed
    auto again = predict_dataset(m, ds, Mode::kSpurious, 7);
    for (std::size_t i = 0; i < again.size(); ++i) {
        REQUIRE(again[i].predictions.size() == spur_results[i].predictions.size());
        for (std::size_t k = 0; k < again[i].predictions.size(); ++k) {
            CHECK(again[i].predictions[k].start == spur_results[i].predictions[k].start);
            CHECK(again[i].predictions[k].confidence == spur_results[i].predictions[k].confidence);
        }
    }

    auto report = evaluate(m, ds, Mode::kDynamicContext, 7);
    CHECK(report.mode == Mode::kDynamicContext);
    CHECK_FALSE(report.values.empty());

    CHECK_THROWS_AS(evaluate(m, data::Dataset{}, Mode::kStandard, 7), ValidationError);
}

TEST_CASE("evaluate: oracle-style results score 100, far-off constant predictor scores 0") {
    data::SynthConfig cfg;
    cfg.num_samples = 6;
    cfg.feature_dim = 8;
    cfg.text_dim = 8;
    data::Dataset ds = data::generate_synthetic(cfg, RngStream(23));

    std::vector<QueryResult> oracle, constant;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        QueryResult r;
        r.qid = ds.queries[i].qid;
        for (const auto& w : ds.queries[i].relevant_windows) r.gts.push_back(w);
        QueryResult c = r;
        for (const auto& w : r.gts) r.predictions.push_back({w.start, w.end, 1.0});
        c.predictions.push_back({0.0, 0.01 * ds.queries[i].duration, 1.0});
        oracle.push_back(std::move(r));
        constant.push_back(std::move(c));
    }
    auto perfect = compute_report(oracle, Mode::kStandard);
    for (const auto& [k, v] : perfect.values) CHECK(v == doctest::Approx(100.0));
    auto zero = compute_report(constant, Mode::kStandard);
    for (const auto& [k, v] : zero.values) CHECK(v == doctest::Approx(0.0));
}
