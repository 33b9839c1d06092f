#include "tdmr/trainer.hpp"

#include <cmath>
#include <fstream>

namespace tdmr::trainer {

namespace {

// Stream purposes; every stochastic choice is replayable in isolation
// from (seed, purpose, counter).
enum StreamPurpose : std::uint64_t {
    kInitStream = 0,
    kShuffleStream = 1,
    kSynthesisStream = 2,
    kDropoutStream = 3,
    kMarginStream = 4,
    kPairingStream = 5,
};

RngStream stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t counter) {
    return RngStream(seed).derive(purpose).derive(counter);
}

// One training sample after (optional) synthesis.
struct PreparedSample {
    Mat tokens;
    const Mat* text = nullptr;
    std::vector<objectives::Span> gts;  // normalized (center, width)
    std::vector<int> saliency_labels;
    std::vector<bool> in_gt;
};

objectives::Span window_to_norm_span(const data::Window& w, double duration) {
    return {(w.start + w.end) / 2.0 / duration, (w.end - w.start) / duration};
}

PreparedSample prepare_original(const data::Dataset& ds, std::size_t idx) {
    const data::QueryAnnotation& q = ds.queries[idx];
    const data::ClipFeatureSequence& v = ds.video_for(idx);
    PreparedSample s;
    s.tokens = v.clips;
    s.text = &q.query_tokens;
    for (const data::Window& w : q.relevant_windows) {
        s.gts.push_back(window_to_norm_span(w, q.duration));
    }
    s.saliency_labels = q.saliency_labels;
    s.in_gt = data::gt_mask(q, v);
    return s;
}

PreparedSample prepare_synthesized(const vsdc::SynthesisResult& r,
                                   const data::QueryAnnotation& q, double clip_duration) {
    PreparedSample s;
    s.tokens = r.tokens;
    s.text = &q.query_tokens;
    const double duration = static_cast<double>(r.tokens.rows()) * clip_duration;
    data::Window w = data::span_to_window(r.gt_span, clip_duration);
    s.gts.push_back(window_to_norm_span(w, duration));
    s.saliency_labels = r.saliency_labels;
    s.in_gt.assign(r.tokens.rows(), false);
    for (Index i = r.gt_span.first; i <= r.gt_span.last; ++i) s.in_gt[i] = true;
    return s;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (learning_rate < 0.0) throw ValidationError("train config: learning rate must be >= 0");
    if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
    if (weight_decay < 0.0 || grad_clip_norm < 0.0) {
        throw ValidationError("train config: negative decay/clip");
    }
    cost_weights.validate();
    loss_weights.validate();
}

TrainState::TrainState(const model::ModelConfig& mc, std::uint64_t seed_)
    : model(mc), seed(seed_) {
    RngStream init_rng = stream(seed_, kInitStream, 0);
    model.init(init_rng);
    for (const auto& [name, p] : model.registry().items) {
        opt_m.push_back(Mat::Zero(p->rows(), p->cols()));
        opt_v.push_back(Mat::Zero(p->rows(), p->cols()));
    }
}

double scheduled_lr(const TrainConfig& cfg, std::uint64_t epoch) {
    if (cfg.lr_decay_every_epochs <= 0) return cfg.learning_rate;
    const auto k = epoch / static_cast<std::uint64_t>(cfg.lr_decay_every_epochs);
    return cfg.learning_rate * std::pow(cfg.lr_decay_factor, static_cast<double>(k));
}

void adamw_step(TrainState& st, const TrainConfig& cfg) {
    const auto& items = st.model.registry().items;
    if (cfg.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, p] : items) sq += p->grad.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip_norm) {
            const double s = cfg.grad_clip_norm / norm;
            for (const auto& [name, p] : items) p->grad *= s;
        }
    }
    ++st.step;
    const double lr = scheduled_lr(cfg, st.epoch);
    const double t = static_cast<double>(st.step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t i = 0; i < items.size(); ++i) {
        Parameter& p = *items[i].second;
        Mat& m = st.opt_m[i];
        Mat& v = st.opt_v[i];
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * p.grad;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * p.grad.cwiseProduct(p.grad);
        const Mat m_hat = m / bc1;
        const Mat v_hat = v / bc2;
        // decoupled weight decay: applied to the weights directly
        p.value -= lr * (m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() +
                                             Mat::Constant(v_hat.rows(), v_hat.cols(),
                                                           cfg.adam_eps)) +
                         cfg.weight_decay * p.value);
        p.zero_grad();
    }
}

objectives::LossReport train_step(TrainState& st, const data::Dataset& ds,
                                  const std::vector<std::size_t>& batch_indices,
                                  const TrainConfig& cfg) {
    cfg.validate();
    if (batch_indices.empty()) throw ValidationError("train_step: empty batch");
    const std::size_t b = batch_indices.size();

    std::vector<PreparedSample> samples;
    const bool synth = cfg.synthesis_enabled && b >= 2;
    if (synth) {
        std::vector<data::ClipFeatureSequence> videos;
        std::vector<data::IndexSpan> spans;
        std::vector<std::vector<int>> saliency;
        for (std::size_t idx : batch_indices) {
            videos.push_back(ds.video_for(idx));
            spans.push_back(data::gt_span(ds.queries[idx], ds.video_for(idx)));
            saliency.push_back(ds.queries[idx].saliency_labels);
        }
        vsdc::PairPlan plan;
        if (cfg.synthesis.random_pairing) {
            RngStream pair_rng = stream(st.seed, kPairingStream, st.step);
            plan = vsdc::select_pairs_random(videos.size(), pair_rng);
        } else {
            plan = vsdc::select_pairs(vsdc::batch_similarity(videos));
        }
        RngStream synth_rng = stream(st.seed, kSynthesisStream, st.step);
        std::vector<vsdc::SynthesisResult> results =
            vsdc::synthesize_batch(videos, spans, saliency, plan, cfg.synthesis, synth_rng);
        for (std::size_t k = 0; k < results.size(); ++k) {
            samples.push_back(prepare_synthesized(results[k], ds.queries[batch_indices[k]],
                                                  videos[k].clip_duration));
        }
        if (cfg.include_originals) {
            for (std::size_t idx : batch_indices) samples.push_back(prepare_original(ds, idx));
        }
    } else {
        for (std::size_t idx : batch_indices) samples.push_back(prepare_original(ds, idx));
    }

    num::Tape tape;
    RngStream dropout_rng = stream(st.seed, kDropoutStream, st.step);
    RngStream margin_rng = stream(st.seed, kMarginStream, st.step);

    num::Node loss_sum = tape.constant(Mat::Zero(1, 1));
    objectives::LossReport agg;
    const std::size_t n = samples.size();
    for (std::size_t k = 0; k < n; ++k) {
        const PreparedSample& s = samples[k];
        model::ForwardNodes fwd =
            st.model.forward(tape, s.tokens, *s.text, true, &dropout_rng);

        // matching on detached values
        Mat logits = tape.value(fwd.cls_logits);
        std::vector<double> fg(logits.rows());
        for (Index i = 0; i < logits.rows(); ++i) {
            const double m = std::max(logits(i, 0), logits(i, 1));
            const double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
            fg[i] = e0 / (e0 + e1);
        }
        auto assignment = objectives::match(tape.value(fwd.spans), fg, s.gts, cfg.cost_weights);
        auto mloss = objectives::moment_loss(tape, fwd.spans, fwd.cls_logits, s.gts, assignment,
                                             cfg.loss_weights.background_weight);

        // negative pair: this video against the next sample's text
        num::Node neg_logit = fwd.neg_logit;
        if (cfg.loss_weights.neg > 0.0 && n > 1) {
            const PreparedSample& other = samples[(k + 1) % n];
            model::ForwardNodes neg_fwd =
                st.model.forward(tape, s.tokens, *other.text, true, &dropout_rng);
            neg_logit = neg_fwd.neg_logit;
        }
        auto sloss = objectives::saliency_losses(tape, fwd.saliency, s.saliency_labels, s.in_gt,
                                                 neg_logit, cfg.loss_weights.tau,
                                                 cfg.loss_weights.margin_delta, margin_rng);
        auto tl = objectives::total_loss(tape, mloss, sloss, cfg.loss_weights);
        loss_sum = num::add(tape, loss_sum, tl.total);
        agg.l1 += tl.report.l1;
        agg.giou += tl.report.giou;
        agg.cls += tl.report.cls;
        agg.margin += tl.report.margin;
        agg.cont += tl.report.cont;
        agg.neg += tl.report.neg;
        agg.total += tl.report.total;
        agg.saliency_skipped = agg.saliency_skipped || tl.report.saliency_skipped;
    }
    const double inv = 1.0 / static_cast<double>(n);
    num::Node batch_loss = num::scale(tape, loss_sum, inv);
    agg.l1 *= inv;
    agg.giou *= inv;
    agg.cls *= inv;
    agg.margin *= inv;
    agg.cont *= inv;
    agg.neg *= inv;
    agg.total *= inv;
    if (!std::isfinite(agg.total)) {
        throw DivergenceError("train_step: non-finite loss at step " + std::to_string(st.step));
    }

    st.model.registry().zero_grads();
    tape.backward(batch_loss);
    adamw_step(st, cfg);
    return agg;
}

checkpoint::CheckpointData to_checkpoint(const TrainState& st) {
    checkpoint::CheckpointData data;
    data.config = st.model.config();
    for (const auto& [name, p] : st.model.registry().items) {
        data.params.emplace_back(name, p->value);
    }
    data.opt_m = st.opt_m;
    data.opt_v = st.opt_v;
    data.step = st.step;
    data.epoch = st.epoch;
    data.rng_state = std::to_string(st.seed);
    return data;
}

TrainState from_checkpoint(const checkpoint::CheckpointData& data) {
    TrainState st(data.config, std::stoull(data.rng_state));
    checkpoint::restore_model(st.model, data);
    if (!data.opt_m.empty()) {
        st.opt_m = data.opt_m;
        st.opt_v = data.opt_v;
    }
    st.step = data.step;
    st.epoch = data.epoch;
    return st;
}

FitResult fit(const data::Dataset& ds, const model::ModelConfig& mc, const TrainConfig& cfg,
              const std::filesystem::path& out_dir,
              std::optional<checkpoint::CheckpointData> resume, const StepHook& hook,
              std::optional<std::uint64_t> max_steps) {
    cfg.validate();
    if (ds.size() == 0) throw ValidationError("fit: empty dataset");
    std::filesystem::create_directories(out_dir);

    TrainState st = resume ? from_checkpoint(*resume) : TrainState(mc, cfg.seed);
    FitResult result;

    const std::size_t n = ds.size();
    const std::uint64_t steps_per_epoch =
        (n + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size;

    bool done = false;
    for (std::uint64_t epoch = st.epoch; epoch < static_cast<std::uint64_t>(cfg.epochs) && !done;
         ++epoch) {
        st.epoch = epoch;
        // per-epoch shuffle from the seeded stream, replayable on resume
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        RngStream shuffle_rng = stream(st.seed, kShuffleStream, epoch);
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        const std::uint64_t epoch_start_step = epoch * steps_per_epoch;
        for (std::uint64_t bidx = 0; bidx < steps_per_epoch; ++bidx) {
            if (epoch_start_step + bidx < st.step) continue;  // already done (resume)
            const std::size_t lo = static_cast<std::size_t>(bidx) * cfg.batch_size;
            const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch(order.begin() + lo, order.begin() + hi);
            objectives::LossReport rep = train_step(st, ds, batch, cfg);
            result.step_reports.push_back(rep);
            if (hook) hook(st.step, rep);
            if (max_steps && st.step >= *max_steps) {
                done = true;
                break;
            }
        }
        if (!done) st.epoch = epoch + 1;
        if (cfg.checkpoint_every_epochs > 0 && !done &&
            (epoch + 1) % static_cast<std::uint64_t>(cfg.checkpoint_every_epochs) == 0) {
            checkpoint::save(out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".tdck"),
                             to_checkpoint(st));
        }
        if (cfg.eval_every_epochs > 0 &&
            (epoch + 1) % static_cast<std::uint64_t>(cfg.eval_every_epochs) == 0) {
            metrics::MetricsReport rep =
                metrics::evaluate(st.model, ds, metrics::Mode::kStandard, st.seed);
            std::ofstream out(out_dir / ("eval_epoch" + std::to_string(epoch + 1) + ".json"));
            out << rep.to_json() << '\n';
        }
    }

    result.checkpoint_path = out_dir / "checkpoint.tdck";
    checkpoint::save(result.checkpoint_path, to_checkpoint(st));
    return result;
}

}  // namespace tdmr::trainer
