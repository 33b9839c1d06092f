#include "tdmr/model.hpp"

namespace tdmr::model {

void ModelConfig::validate() const {
    if (hidden < 1 || hidden % heads != 0) {
        throw ValidationError("model config: hidden must be positive and divisible by heads");
    }
    if (num_queries < 1) throw ValidationError("model config: num_queries must be >= 1");
    if (depth < 0) throw ValidationError("model config: depth must be >= 0");
    if (video_dim < 1 || text_dim < 1) throw ValidationError("model config: bad input dims");
    if (dynamics_layers < 1) throw ValidationError("model config: dynamics_layers must be >= 1");
    if (beta < 0.0 || beta > 1.0) throw ValidationError("model config: beta outside [0,1]");
}

TdDetr::TdDetr(const ModelConfig& cfg)
    : cfg_(cfg),
      video_in_(cfg.video_dim, cfg.hidden),
      text_in_(cfg.text_dim, cfg.hidden),
      enhancer_(cfg.video_dim, cfg.hidden, cfg.heads, cfg.ffn(), cfg.dynamics_layers, cfg.beta),
      queries_(cfg.num_queries, cfg.hidden),
      saliency_head_(cfg.hidden, 1),
      negative_head_(cfg.hidden, 1),
      span_fc1_(cfg.hidden, cfg.hidden),
      span_fc2_(cfg.hidden, cfg.hidden),
      span_fc3_(cfg.hidden, 2),
      class_head_(cfg.hidden, 2) {
    cfg.validate();
    for (int i = 0; i < cfg.depth; ++i) {
        encoder_.emplace_back(cfg.hidden, cfg.heads, cfg.ffn());
        decoder_.emplace_back(cfg.hidden, cfg.heads, cfg.ffn());
    }
    video_in_.reg(registry_, "video_in");
    text_in_.reg(registry_, "text_in");
    enhancer_.reg(registry_, "tdem");
    for (int i = 0; i < cfg.depth; ++i) {
        encoder_[i].reg(registry_, "encoder" + std::to_string(i));
    }
    registry_.add("queries", queries_);
    for (int i = 0; i < cfg.depth; ++i) {
        decoder_[i].reg(registry_, "decoder" + std::to_string(i));
    }
    saliency_head_.reg(registry_, "saliency_head");
    negative_head_.reg(registry_, "negative_head");
    span_fc1_.reg(registry_, "span_fc1");
    span_fc2_.reg(registry_, "span_fc2");
    span_fc3_.reg(registry_, "span_fc3");
    class_head_.reg(registry_, "class_head");
}

void TdDetr::init(RngStream& rng) {
    video_in_.init(rng);
    text_in_.init(rng);
    enhancer_.init(rng);
    for (auto& l : encoder_) l.init(rng);
    nn::gaussian_init(queries_, rng, 0.02);
    for (auto& l : decoder_) l.init(rng);
    saliency_head_.init(rng);
    negative_head_.init(rng);
    span_fc1_.init(rng);
    span_fc2_.init(rng);
    span_fc3_.init(rng);
    class_head_.init(rng);
}

std::pair<Node, Node> TdDetr::embed_inputs(Tape& t, const Mat& video, const Mat& text,
                                           const ForwardCtx& ctx) {
    if (video.cols() != cfg_.video_dim) {
        throw DimensionError("embed_inputs: video dim " + std::to_string(video.cols()) +
                             " != config " + std::to_string(cfg_.video_dim));
    }
    if (text.cols() != cfg_.text_dim) {
        throw DimensionError("embed_inputs: text dim " + std::to_string(text.cols()) +
                             " != config " + std::to_string(cfg_.text_dim));
    }
    if (text.rows() == 0) throw ValidationError("embed_inputs: empty text");
    Node v = ctx.drop(t, video_in_.apply(t, t.constant(video)), ctx.dropout_input);
    v = num::add(t, v, t.constant(nn::sinusoidal_position_encoding(video.rows(), cfg_.hidden)));
    Node q = ctx.drop(t, text_in_.apply(t, t.constant(text)), ctx.dropout_input);
    return {v, q};
}

std::pair<Node, Node> TdDetr::encode(Tape& t, Node fused, const ForwardCtx& ctx) {
    Node x = fused;
    for (auto& l : encoder_) x = l.apply(t, x, ctx);
    Node saliency = saliency_head_.apply(t, x);
    return {x, saliency};
}

Node TdDetr::decode(Tape& t, Node memory, const ForwardCtx& ctx) {
    Node q = t.param(queries_);
    for (auto& l : decoder_) q = l.apply(t, q, memory, ctx);
    return q;
}

ForwardNodes TdDetr::predict_heads(Tape& t, Node decoder_out, Node memory,
                                   const ForwardCtx& ctx) {
    ForwardNodes out;
    Node h = num::relu(t, span_fc1_.apply(t, decoder_out));
    h = num::relu(t, span_fc2_.apply(t, h));
    out.spans = num::sigmoid(t, span_fc3_.apply(t, h));
    out.cls_logits = class_head_.apply(t, decoder_out);
    out.saliency = saliency_head_.apply(t, memory);
    out.neg_logit = negative_head_.apply(t, num::mean_rows(t, memory));
    return out;
}

ForwardNodes TdDetr::forward(Tape& t, const Mat& video, const Mat& text, bool training,
                             RngStream* dropout_rng) {
    ForwardCtx ctx;
    ctx.training = training;
    ctx.rng = dropout_rng;
    ctx.dropout_transformer = cfg_.dropout_transformer;
    ctx.dropout_input = cfg_.dropout_input;
    if (training && dropout_rng == nullptr) {
        throw ValidationError("forward: training mode requires a dropout stream");
    }

    auto [v_emb, t_emb] = embed_inputs(t, video, text, ctx);
    Node fused = enhancer_.apply(t, t.constant(video), v_emb, t_emb, ctx);
    auto [memory, saliency] = encode(t, fused, ctx);
    Node dec = decode(t, memory, ctx);
    ForwardNodes out = predict_heads(t, dec, memory, ctx);
    out.saliency = saliency;
    return out;
}

MomentPrediction TdDetr::predict(const Mat& video, const Mat& text) {
    Tape t;
    ForwardNodes n = forward(t, video, text, false, nullptr);
    MomentPrediction out;
    out.spans = t.value(n.spans);
    {
        num::Node sm = num::softmax_rows(t, n.cls_logits);
        const Mat& pm = t.value(sm);
        out.fg_probs.resize(pm.rows());
        for (Index i = 0; i < pm.rows(); ++i) out.fg_probs[i] = pm(i, 0);
    }
    const Mat& sal = t.value(n.saliency);
    out.saliency.resize(sal.rows());
    for (Index i = 0; i < sal.rows(); ++i) out.saliency[i] = sal(i, 0);
    out.neg_logit = t.value(n.neg_logit)(0, 0);
    return out;
}

}  // namespace tdmr::model
