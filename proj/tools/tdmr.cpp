// Command-line surface: dataset generation, training, evaluation, pair
// auditing and the invariant battery.
#include "tdmr/checkpoint.hpp"
#include "tdmr/data.hpp"
#include "tdmr/metrics.hpp"
#include "tdmr/model.hpp"
#include "tdmr/objectives.hpp"
#include "tdmr/trainer.hpp"
#include "tdmr/types.hpp"
#include "tdmr/verify.hpp"
#include "tdmr/vsdc.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tdmr;

namespace {

// Exit codes; 0 is success.
enum ExitCode {
    kExitUsage = 2,
    kExitIo = 3,
    kExitValidation = 4,
    kExitDivergence = 5,
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("TDMR_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

// ---- run configuration ------------------------------------------------
//
// All training knobs live in one ordered key -> value map. Defaults are
// serialized first, then a config file overlays them, then flags overlay
// that; the final map is both the provenance record and the hash input.
using Settings = std::map<std::string, std::string>;

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

Settings default_settings() {
    model::ModelConfig mc;
    trainer::TrainConfig tc;
    Settings s;
    s["model.video_dim"] = std::to_string(mc.video_dim);
    s["model.text_dim"] = std::to_string(mc.text_dim);
    s["model.hidden"] = std::to_string(mc.hidden);
    s["model.depth"] = std::to_string(mc.depth);
    s["model.num_queries"] = std::to_string(mc.num_queries);
    s["model.heads"] = std::to_string(mc.heads);
    s["model.ffn_dim"] = std::to_string(mc.ffn_dim);
    s["model.dropout_transformer"] = fmt_double(mc.dropout_transformer);
    s["model.dropout_input"] = fmt_double(mc.dropout_input);
    s["model.beta"] = fmt_double(mc.beta);
    s["model.dynamics_layers"] = std::to_string(mc.dynamics_layers);
    s["train.batch_size"] = std::to_string(tc.batch_size);
    s["train.learning_rate"] = fmt_double(tc.learning_rate);
    s["train.weight_decay"] = fmt_double(tc.weight_decay);
    s["train.epochs"] = std::to_string(tc.epochs);
    s["train.lr_decay_factor"] = fmt_double(tc.lr_decay_factor);
    s["train.lr_decay_every_epochs"] = std::to_string(tc.lr_decay_every_epochs);
    s["train.seed"] = std::to_string(tc.seed);
    s["train.grad_clip_norm"] = fmt_double(tc.grad_clip_norm);
    s["train.synthesis_enabled"] = tc.synthesis_enabled ? "1" : "0";
    s["train.include_originals"] = tc.include_originals ? "1" : "0";
    s["train.checkpoint_every_epochs"] = std::to_string(tc.checkpoint_every_epochs);
    s["train.eval_every_epochs"] = std::to_string(tc.eval_every_epochs);
    s["train.max_steps"] = "0";
    s["train.clip_duration"] = fmt_double(2.0);
    s["synthesis.alpha"] = fmt_double(tc.synthesis.alpha);
    s["synthesis.length_bias_frac"] = fmt_double(tc.synthesis.length_bias_frac);
    s["synthesis.placement"] = vsdc::to_string(tc.synthesis.placement);
    s["synthesis.random_pairing"] = tc.synthesis.random_pairing ? "1" : "0";
    s["loss.l1"] = fmt_double(tc.loss_weights.l1);
    s["loss.iou"] = fmt_double(tc.loss_weights.iou);
    s["loss.cls"] = fmt_double(tc.loss_weights.cls);
    s["loss.margin"] = fmt_double(tc.loss_weights.margin);
    s["loss.cont"] = fmt_double(tc.loss_weights.cont);
    s["loss.neg"] = fmt_double(tc.loss_weights.neg);
    s["loss.background_weight"] = fmt_double(tc.loss_weights.background_weight);
    s["loss.margin_delta"] = fmt_double(tc.loss_weights.margin_delta);
    s["loss.tau"] = fmt_double(tc.loss_weights.tau);
    s["cost.l1"] = fmt_double(tc.cost_weights.l1);
    s["cost.iou"] = fmt_double(tc.cost_weights.iou);
    s["cost.cls"] = fmt_double(tc.cost_weights.cls);
    return s;
}

void set_setting(Settings& s, const std::string& key, const std::string& value) {
    auto it = s.find(key);
    if (it == s.end()) throw ValidationError("unknown config key: " + key);
    it->second = value;
}

void overlay_config_file(Settings& s, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key=value");
        }
        auto strip = [](std::string v) {
            const auto a = v.find_first_not_of(" \t");
            const auto b = v.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
        };
        set_setting(s, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

void overlay_assignments(Settings& s, const std::vector<std::string>& kvs) {
    for (const auto& kv : kvs) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got: " + kv);
        set_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

std::int64_t to_int(const Settings& s, const std::string& key) {
    return std::stoll(s.at(key));
}
double to_dbl(const Settings& s, const std::string& key) { return std::stod(s.at(key)); }
bool to_bool(const Settings& s, const std::string& key) {
    const std::string& v = s.at(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ValidationError("boolean config key " + key + " must be 0/1/true/false, got: " + v);
}

model::ModelConfig model_config_from(const Settings& s) {
    model::ModelConfig mc;
    mc.video_dim = to_int(s, "model.video_dim");
    mc.text_dim = to_int(s, "model.text_dim");
    mc.hidden = to_int(s, "model.hidden");
    mc.depth = static_cast<int>(to_int(s, "model.depth"));
    mc.num_queries = static_cast<int>(to_int(s, "model.num_queries"));
    mc.heads = static_cast<int>(to_int(s, "model.heads"));
    mc.ffn_dim = to_int(s, "model.ffn_dim");
    mc.dropout_transformer = to_dbl(s, "model.dropout_transformer");
    mc.dropout_input = to_dbl(s, "model.dropout_input");
    mc.beta = to_dbl(s, "model.beta");
    mc.dynamics_layers = static_cast<int>(to_int(s, "model.dynamics_layers"));
    mc.validate();
    return mc;
}

trainer::TrainConfig train_config_from(const Settings& s) {
    trainer::TrainConfig tc;
    tc.batch_size = static_cast<int>(to_int(s, "train.batch_size"));
    tc.learning_rate = to_dbl(s, "train.learning_rate");
    tc.weight_decay = to_dbl(s, "train.weight_decay");
    tc.epochs = static_cast<int>(to_int(s, "train.epochs"));
    tc.lr_decay_factor = to_dbl(s, "train.lr_decay_factor");
    tc.lr_decay_every_epochs = static_cast<int>(to_int(s, "train.lr_decay_every_epochs"));
    tc.seed = static_cast<std::uint64_t>(to_int(s, "train.seed"));
    tc.grad_clip_norm = to_dbl(s, "train.grad_clip_norm");
    tc.synthesis_enabled = to_bool(s, "train.synthesis_enabled");
    tc.include_originals = to_bool(s, "train.include_originals");
    tc.checkpoint_every_epochs = static_cast<int>(to_int(s, "train.checkpoint_every_epochs"));
    tc.eval_every_epochs = static_cast<int>(to_int(s, "train.eval_every_epochs"));
    tc.synthesis.alpha = to_dbl(s, "synthesis.alpha");
    tc.synthesis.length_bias_frac = to_dbl(s, "synthesis.length_bias_frac");
    tc.synthesis.placement = vsdc::placement_from_string(s.at("synthesis.placement"));
    tc.synthesis.random_pairing = to_bool(s, "synthesis.random_pairing");
    tc.loss_weights.l1 = to_dbl(s, "loss.l1");
    tc.loss_weights.iou = to_dbl(s, "loss.iou");
    tc.loss_weights.cls = to_dbl(s, "loss.cls");
    tc.loss_weights.margin = to_dbl(s, "loss.margin");
    tc.loss_weights.cont = to_dbl(s, "loss.cont");
    tc.loss_weights.neg = to_dbl(s, "loss.neg");
    tc.loss_weights.background_weight = to_dbl(s, "loss.background_weight");
    tc.loss_weights.margin_delta = to_dbl(s, "loss.margin_delta");
    tc.loss_weights.tau = to_dbl(s, "loss.tau");
    tc.cost_weights.l1 = to_dbl(s, "cost.l1");
    tc.cost_weights.iou = to_dbl(s, "cost.iou");
    tc.cost_weights.cls = to_dbl(s, "cost.cls");
    tc.validate();
    return tc;
}

std::string settings_dump(const Settings& s) {
    std::ostringstream os;
    for (const auto& [k, v] : s) os << k << " = " << v << '\n';
    return os.str();
}

std::string settings_hash(const Settings& s) {
    // FNV-1a over the canonical dump; names the per-run directory so
    // identical configs deliberately collide.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : settings_dump(s)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---- subcommands ------------------------------------------------------

struct SynthDataArgs {
    std::string out;
    int n = 64;
    std::uint64_t seed = default_seed();
    data::SynthConfig sc;
};

int cmd_synth_data(const SynthDataArgs& a) {
    data::SynthConfig sc = a.sc;
    sc.num_samples = a.n;
    sc.validate();
    data::Dataset ds = data::generate_synthetic(sc, RngStream(a.seed));
    fs::create_directories(a.out);
    data::save_dataset(ds, a.out);
    std::cout << "wrote " << ds.size() << " samples (video dim " << sc.feature_dim << ", text dim "
              << sc.text_dim << ", seed " << a.seed << ") to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config_file;
    std::string resume;
    std::vector<std::string> assignments;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
    Settings s = default_settings();
    if (!a.config_file.empty()) overlay_config_file(s, a.config_file);
    overlay_assignments(s, a.assignments);
    if (a.seed) s["train.seed"] = std::to_string(*a.seed);
    else if (a.seed == std::nullopt && std::getenv("TDMR_SEED") &&
             s["train.seed"] == "0") {
        s["train.seed"] = std::to_string(default_seed());
    }

    model::ModelConfig mc = model_config_from(s);
    trainer::TrainConfig tc = train_config_from(s);
    const std::uint64_t max_steps = static_cast<std::uint64_t>(to_int(s, "train.max_steps"));
    const double clip_duration = to_dbl(s, "train.clip_duration");

    data::Dataset ds = data::load_dataset(a.data, clip_duration);

    const fs::path run_dir = fs::path(a.out) / settings_hash(s);
    fs::create_directories(run_dir);
    {
        std::ofstream cfg(run_dir / "config.txt");
        cfg << settings_dump(s);
    }

    std::optional<checkpoint::CheckpointData> resume;
    if (!a.resume.empty()) resume = checkpoint::load(a.resume);

    std::ofstream log(run_dir / "train_log.jsonl", resume ? std::ios::app : std::ios::out);
    auto hook = [&](std::uint64_t step, const objectives::LossReport& r) {
        json j{{"step", step},     {"total", r.total},   {"l1", r.l1},  {"giou", r.giou},
               {"cls", r.cls},     {"margin", r.margin}, {"cont", r.cont},
               {"neg", r.neg},     {"saliency_skipped", r.saliency_skipped}};
        log << j.dump() << "\n";
    };

    auto result = trainer::fit(ds, mc, tc, run_dir, resume, hook,
                               max_steps ? std::optional<std::uint64_t>(max_steps) : std::nullopt);
    std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
    if (!result.step_reports.empty()) {
        std::cout << "final loss: " << result.step_reports.back().total << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string mode = "standard";
    std::string out;
    std::string dump_preds;
    std::string preds;  // score-only: read this dump instead of running a model
    std::uint64_t seed = default_seed();
    double clip_duration = 2.0;
};

int cmd_eval(const EvalArgs& a) {
    data::Dataset ds = data::load_dataset(a.data, a.clip_duration);
    const metrics::Mode mode = metrics::mode_from_string(a.mode);

    std::vector<metrics::QueryResult> results;
    if (!a.preds.empty()) {
        results = metrics::load_predictions(a.preds, ds);
    } else {
        if (a.ckpt.empty()) throw ValidationError("eval needs --ckpt or --preds");
        checkpoint::CheckpointData ck = checkpoint::load(a.ckpt);
        model::TdDetr m(ck.config);
        checkpoint::restore_model(m, ck);
        results = metrics::predict_dataset(m, ds, mode, a.seed);
    }
    metrics::MetricsReport report = metrics::compute_report(results, mode);

    std::cout << report.to_text();
    if (!a.out.empty()) {
        fs::create_directories(fs::path(a.out));
        const std::string stem = "eval_" + a.mode;
        std::ofstream(fs::path(a.out) / (stem + ".json")) << report.to_json() << "\n";
        std::ofstream(fs::path(a.out) / (stem + ".txt")) << report.to_text();
    }
    if (!a.dump_preds.empty()) metrics::dump_predictions(results, a.dump_preds);
    return 0;
}

struct DumpPairsArgs {
    std::string data;
    std::string out;
    std::uint64_t seed = default_seed();
    double alpha = 0.7;
    double length_bias_frac = 0.1;
    std::string placement = "split";
    bool random_pairing = false;
    double clip_duration = 2.0;
};

int cmd_dump_pairs(const DumpPairsArgs& a) {
    data::Dataset ds = data::load_dataset(a.data, a.clip_duration);
    if (ds.size() < 2) throw ValidationError("pair audit needs at least two samples");

    vsdc::SynthesisConfig sc;
    sc.alpha = a.alpha;
    sc.length_bias_frac = a.length_bias_frac;
    sc.placement = vsdc::placement_from_string(a.placement);
    sc.random_pairing = a.random_pairing;

    RngStream rng(a.seed);
    vsdc::PairPlan plan;
    if (sc.random_pairing) {
        RngStream pairing = rng.derive(0);
        plan = vsdc::select_pairs_random(ds.size(), pairing);
    } else {
        plan = vsdc::select_pairs(vsdc::batch_similarity(ds.videos));
    }

    std::vector<data::IndexSpan> gts;
    std::vector<std::vector<int>> saliency;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        gts.push_back(data::gt_span(ds.queries[i], ds.videos[i]));
        saliency.push_back(ds.queries[i].saliency_labels);
    }
    auto synth = vsdc::synthesize_batch(ds.videos, gts, saliency, plan, sc, rng.derive(1));

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out);
        if (!file) throw IoError("cannot open " + a.out + " for writing");
        out = &file;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        json prov = json::array();
        for (const auto& p : synth[i].provenance) {
            prov.push_back({p.source == vsdc::TokenSource::kSelf ? "self" : "partner", p.index});
        }
        json j{{"index", i},
               {"vid", ds.videos[i].vid},
               {"partner", plan.partner[i]},
               {"partner_vid", ds.videos[plan.partner[i]].vid},
               {"similarity", plan.similarity[i]},
               {"gt_span", {synth[i].gt_span.first, synth[i].gt_span.last}},
               {"length", synth[i].tokens.rows()},
               {"provenance", prov}};
        (*out) << j.dump() << "\n";
    }
    return 0;
}

struct VerifyArgs {
    std::string suite;
    std::uint64_t seed = default_seed();
    bool inject_giou_flip = false;
};

int cmd_verify(const VerifyArgs& a) {
    objectives::test_flip_giou_sign = a.inject_giou_flip;
    std::vector<verify::SuiteResult> results;
    if (a.suite.empty()) {
        results = verify::run_all(a.seed);
    } else {
        results.push_back(verify::run_suite(a.suite, a.seed));
    }
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moment-retrieval pipeline: synthesis, training, evaluation"};
    app.require_subcommand(1);

    SynthDataArgs sd;
    auto* synth = app.add_subcommand("synth-data", "generate a planted-moment dataset");
    synth->add_option("--out", sd.out, "output directory")->required();
    synth->add_option("--n", sd.n, "number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--seed", sd.seed, "rng seed (env TDMR_SEED fallback)");
    synth->add_option("--length-min", sd.sc.length_min);
    synth->add_option("--length-max", sd.sc.length_max);
    synth->add_option("--feature-dim", sd.sc.feature_dim);
    synth->add_option("--text-dim", sd.sc.text_dim);
    synth->add_option("--words", sd.sc.words_per_query);
    synth->add_option("--moment-min", sd.sc.moment_length_min);
    synth->add_option("--moment-max", sd.sc.moment_length_max);
    synth->add_option("--signal", sd.sc.signal_strength);
    synth->add_option("--noise", sd.sc.noise_scale);
    synth->add_option("--clip-duration", sd.sc.clip_duration);

    TrainArgs ta;
    std::uint64_t train_seed = 0;
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--data", ta.data, "manifest path")->required();
    train->add_option("--out", ta.out, "output base directory")->required();
    train->add_option("--config", ta.config_file, "key=value config file");
    train->add_option("--resume", ta.resume, "checkpoint to resume from");
    train->add_option("--set", ta.assignments, "config override key=value (repeatable)");
    auto* seed_opt = train->add_option("--seed", train_seed, "rng seed (env TDMR_SEED fallback)");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a prediction dump");
    eval->add_option("--ckpt", ea.ckpt, "checkpoint path");
    eval->add_option("--data", ea.data, "manifest path")->required();
    eval->add_option("--mode", ea.mode, "standard | spurious | dynamic-context");
    eval->add_option("--out", ea.out, "directory for report files");
    eval->add_option("--dump-preds", ea.dump_preds, "write ranked predictions as JSONL");
    eval->add_option("--preds", ea.preds, "score an existing prediction dump (no model)");
    eval->add_option("--seed", ea.seed, "rng seed for spurious/dynamic-context surgery");
    eval->add_option("--clip-duration", ea.clip_duration);

    DumpPairsArgs da;
    auto* pairs = app.add_subcommand("dump-pairs", "audit pair selection and synthesis provenance");
    pairs->add_option("--data", da.data, "manifest path")->required();
    pairs->add_option("--out", da.out, "output JSONL (default stdout)");
    pairs->add_option("--seed", da.seed, "rng seed");
    pairs->add_option("--alpha", da.alpha, "self-token keep probability");
    pairs->add_option("--length-bias-frac", da.length_bias_frac);
    pairs->add_option("--placement", da.placement, "append | prepend | split");
    pairs->add_flag("--random-pairing", da.random_pairing, "ignore similarity, pair at random");
    pairs->add_option("--clip-duration", da.clip_duration);

    VerifyArgs va;
    auto* ver = app.add_subcommand("verify", "run the invariant battery");
    ver->add_option("--suite", va.suite, "run only this suite");
    ver->add_option("--seed", va.seed, "rng seed");
    ver->add_flag("--inject-giou-flip", va.inject_giou_flip,
                  "fault hook: flip the overlap-loss sign (must make verify fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(sd);
        if (train->parsed()) {
            if (seed_opt->count() > 0) ta.seed = train_seed;
            return cmd_train(ta);
        }
        if (eval->parsed()) return cmd_eval(ea);
        if (pairs->parsed()) return cmd_dump_pairs(da);
        if (ver->parsed()) return cmd_verify(va);
    } catch (const DivergenceError& e) {
        std::cerr << "error (divergence): " << e.what() << "\n";
        return kExitDivergence;
    } catch (const NumericError& e) {
        std::cerr << "error (numeric): " << e.what() << "\n";
        return kExitDivergence;
    } catch (const ValidationError& e) {
        std::cerr << "error (validation): " << e.what() << "\n";
        return kExitValidation;
    } catch (const DimensionError& e) {
        std::cerr << "error (dimension): " << e.what() << "\n";
        return kExitValidation;
    } catch (const FormatError& e) {
        std::cerr << "error (format): " << e.what() << "\n";
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
