#include "tdmr/nn.hpp"

#include <cmath>

namespace tdmr::nn {

void xavier_init(Parameter& p, RngStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = (2.0 * rng.uniform() - 1.0) * a;
    }
}

void gaussian_init(Parameter& p, RngStream& rng, double sigma) {
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = sigma * rng.normal();
}

Node MultiHeadAttention::apply(Tape& t, Node q_in, Node kv_in) {
    Node q = wq.apply(t, q_in);
    Node k = wk.apply(t, kv_in);
    Node v = wv.apply(t, kv_in);
    const Index d = t.cols(q);
    const Index dh = d / heads;
    std::vector<Node> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Node qh = num::slice(t, q, 0, t.rows(q), h * dh, dh);
        Node kh = num::slice(t, k, 0, t.rows(k), h * dh, dh);
        Node vh = num::slice(t, v, 0, t.rows(v), h * dh, dh);
        head_outs.push_back(num::scaled_dot_attention(t, qh, kh, vh));
    }
    return wo.apply(t, num::concat_cols(t, head_outs));
}

void MultiHeadAttention::init(RngStream& rng) {
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
    wo.init(rng);
}

void MultiHeadAttention::reg(ParamRegistry& r, const std::string& prefix) {
    wq.reg(r, prefix + ".wq");
    wk.reg(r, prefix + ".wk");
    wv.reg(r, prefix + ".wv");
    wo.reg(r, prefix + ".wo");
}

Node EncoderLayer::apply(Tape& t, Node x, const ForwardCtx& ctx) {
    Node n1 = ln1.apply(t, x);
    x = num::add(t, x, ctx.drop(t, attn.apply(t, n1, n1), ctx.dropout_transformer));
    x = num::add(t, x, ctx.drop(t, ffn.apply(t, ln2.apply(t, x)), ctx.dropout_transformer));
    return x;
}

void EncoderLayer::init(RngStream& rng) {
    attn.init(rng);
    ffn.init(rng);
}

void EncoderLayer::reg(ParamRegistry& r, const std::string& prefix) {
    ln1.reg(r, prefix + ".ln1");
    ln2.reg(r, prefix + ".ln2");
    attn.reg(r, prefix + ".attn");
    ffn.reg(r, prefix + ".ffn");
}

Node CrossAttnBlock::apply(Tape& t, Node x, Node context, const ForwardCtx& ctx) {
    x = num::add(t, x,
                 ctx.drop(t, attn.apply(t, ln1.apply(t, x), context), ctx.dropout_transformer));
    x = num::add(t, x, ctx.drop(t, ffn.apply(t, ln2.apply(t, x)), ctx.dropout_transformer));
    return x;
}

void CrossAttnBlock::init(RngStream& rng) {
    attn.init(rng);
    ffn.init(rng);
}

void CrossAttnBlock::reg(ParamRegistry& r, const std::string& prefix) {
    ln1.reg(r, prefix + ".ln1");
    ln2.reg(r, prefix + ".ln2");
    attn.reg(r, prefix + ".attn");
    ffn.reg(r, prefix + ".ffn");
}

Node DecoderLayer::apply(Tape& t, Node q, Node memory, const ForwardCtx& ctx) {
    Node n1 = ln1.apply(t, q);
    q = num::add(t, q, ctx.drop(t, self_attn.apply(t, n1, n1), ctx.dropout_transformer));
    q = num::add(t, q, ctx.drop(t, cross_attn.apply(t, ln2.apply(t, q), memory),
                                ctx.dropout_transformer));
    q = num::add(t, q, ctx.drop(t, ffn.apply(t, ln3.apply(t, q)), ctx.dropout_transformer));
    return q;
}

void DecoderLayer::init(RngStream& rng) {
    self_attn.init(rng);
    cross_attn.init(rng);
    ffn.init(rng);
}

void DecoderLayer::reg(ParamRegistry& r, const std::string& prefix) {
    ln1.reg(r, prefix + ".ln1");
    ln2.reg(r, prefix + ".ln2");
    ln3.reg(r, prefix + ".ln3");
    self_attn.reg(r, prefix + ".self_attn");
    cross_attn.reg(r, prefix + ".cross_attn");
    ffn.reg(r, prefix + ".ffn");
}

Mat sinusoidal_position_encoding(Index length, Index d) {
    Mat pe(length, d);
    for (Index pos = 0; pos < length; ++pos) {
        for (Index i = 0; i < d; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace tdmr::nn
