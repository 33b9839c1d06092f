#pragma once

#include "tdmr/rng.hpp"
#include "tdmr/tape.hpp"
#include "tdmr/types.hpp"

#include <string>
#include <vector>

namespace tdmr::nn {

using num::Node;
using num::Tape;

// Named view over every parameter of a model; drives checkpointing,
// optimizer state and gradient checks. Registration order is fixed.
struct ParamRegistry {
    std::vector<std::pair<std::string, Parameter*>> items;

    void add(const std::string& name, Parameter& p) { items.emplace_back(name, &p); }
    std::vector<Parameter*> params() const {
        std::vector<Parameter*> out;
        out.reserve(items.size());
        for (const auto& [name, p] : items) out.push_back(p);
        return out;
    }
    void zero_grads() const {
        for (const auto& [name, p] : items) p->zero_grad();
    }
};

void xavier_init(Parameter& p, RngStream& rng);
void gaussian_init(Parameter& p, RngStream& rng, double sigma);

struct Linear {
    Parameter weight;  // in x out
    Parameter bias;    // 1 x out

    Linear() = default;
    Linear(Index in, Index out) : weight(in, out), bias(1, out) {}

    void init(RngStream& rng) { xavier_init(weight, rng); }
    Node apply(Tape& t, Node x) {
        return num::affine(t, x, t.param(weight), t.param(bias));
    }
    void reg(ParamRegistry& r, const std::string& prefix) {
        r.add(prefix + ".weight", weight);
        r.add(prefix + ".bias", bias);
    }
};

struct LayerNorm {
    Parameter gain;  // 1 x d
    Parameter bias;  // 1 x d

    LayerNorm() = default;
    explicit LayerNorm(Index d) : gain(1, d), bias(1, d) { gain.value.setOnes(); }

    Node apply(Tape& t, Node x) {
        return num::layer_norm(t, x, t.param(gain), t.param(bias));
    }
    void reg(ParamRegistry& r, const std::string& prefix) {
        r.add(prefix + ".gain", gain);
        r.add(prefix + ".bias", bias);
    }
};

// Shared context for a forward pass: dropout stream and train/eval mode.
struct ForwardCtx {
    RngStream* rng = nullptr;
    bool training = false;
    double dropout_transformer = 0.1;
    double dropout_input = 0.5;

    Node drop(Tape& t, Node x, double rate) const {
        if (!training || rate == 0.0 || rng == nullptr) return x;
        return num::dropout(t, x, rate, *rng, true);
    }
};

struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(Index d, int heads_)
        : wq(d, d), wk(d, d), wv(d, d), wo(d, d), heads(heads_) {
        if (d % heads_ != 0) throw ValidationError("attention: d not divisible by heads");
    }

    // queries from q_in, keys/values from kv_in
    Node apply(Tape& t, Node q_in, Node kv_in);

    void init(RngStream& rng);
    void reg(ParamRegistry& r, const std::string& prefix);
};

struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(Index d, Index hidden) : fc1(d, hidden), fc2(hidden, d) {}

    Node apply(Tape& t, Node x) { return fc2.apply(t, num::relu(t, fc1.apply(t, x))); }
    void init(RngStream& rng) {
        fc1.init(rng);
        fc2.init(rng);
    }
    void reg(ParamRegistry& r, const std::string& prefix) {
        fc1.reg(r, prefix + ".fc1");
        fc2.reg(r, prefix + ".fc2");
    }
};

// Pre-norm self-attention encoder layer.
struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    EncoderLayer() = default;
    EncoderLayer(Index d, int heads, Index ffn_dim)
        : ln1(d), ln2(d), attn(d, heads), ffn(d, ffn_dim) {}

    Node apply(Tape& t, Node x, const ForwardCtx& ctx);
    void init(RngStream& rng);
    void reg(ParamRegistry& r, const std::string& prefix);
};

// Pre-norm cross-attention block: attends q_in to a context sequence,
// then a feed-forward, both with residuals.
struct CrossAttnBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    CrossAttnBlock() = default;
    CrossAttnBlock(Index d, int heads, Index ffn_dim)
        : ln1(d), ln2(d), attn(d, heads), ffn(d, ffn_dim) {}

    Node apply(Tape& t, Node x, Node context, const ForwardCtx& ctx);
    void init(RngStream& rng);
    void reg(ParamRegistry& r, const std::string& prefix);
};

// Pre-norm decoder layer: query self-attention, cross-attention to the
// encoder memory, feed-forward.
struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    MultiHeadAttention self_attn, cross_attn;
    FeedForward ffn;

    DecoderLayer() = default;
    DecoderLayer(Index d, int heads, Index ffn_dim)
        : ln1(d), ln2(d), ln3(d), self_attn(d, heads), cross_attn(d, heads), ffn(d, ffn_dim) {}

    Node apply(Tape& t, Node q, Node memory, const ForwardCtx& ctx);
    void init(RngStream& rng);
    void reg(ParamRegistry& r, const std::string& prefix);
};

// Fixed sinusoidal table, one row per position.
Mat sinusoidal_position_encoding(Index length, Index d);

}  // namespace tdmr::nn
