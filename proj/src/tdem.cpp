#include "tdmr/tdem.hpp"

namespace tdmr::tdem {

Node tokenize_dynamics(Tape& t, Node video_tokens, Node start_token) {
    const Index l = t.rows(video_tokens);
    if (l < 1) throw DimensionError("tokenize_dynamics: empty video");
    if (t.rows(start_token) != 1 || t.cols(start_token) != t.cols(video_tokens)) {
        throw DimensionError("tokenize_dynamics: start token must be 1 x D_v");
    }
    // v - [st; v[0..L-2]]
    Node shifted = start_token;
    if (l > 1) {
        shifted = num::concat_rows(t, start_token,
                                   num::slice(t, video_tokens, 0, l - 1, 0, t.cols(video_tokens)));
    }
    return num::sub(t, video_tokens, shifted);
}

Node fuse(Tape& t, Node video_attended, Node dynamics_attended, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ValidationError("fuse: beta outside [0,1]");
    if (t.rows(video_attended) != t.rows(dynamics_attended) ||
        t.cols(video_attended) != t.cols(dynamics_attended)) {
        throw DimensionError("fuse: shape mismatch");
    }
    if (beta == 1.0) return video_attended;
    if (beta == 0.0) return dynamics_attended;
    return num::add(t, num::scale(t, video_attended, beta),
                    num::scale(t, dynamics_attended, 1.0 - beta));
}

DynamicsEnhancer::DynamicsEnhancer(Index video_dim, Index d, int heads, Index ffn_dim,
                                   int layers, double beta_)
    : start_token(1, video_dim), dynamics_in(video_dim, d), beta(beta_) {
    for (int i = 0; i < layers; ++i) {
        video_blocks.emplace_back(d, heads, ffn_dim);
        dynamics_blocks.emplace_back(d, heads, ffn_dim);
    }
}

void DynamicsEnhancer::init(RngStream& rng) {
    nn::gaussian_init(start_token, rng, 0.02);
    dynamics_in.init(rng);
    for (auto& b : video_blocks) b.init(rng);
    for (auto& b : dynamics_blocks) b.init(rng);
}

void DynamicsEnhancer::reg(nn::ParamRegistry& r, const std::string& prefix) {
    r.add(prefix + ".start_token", start_token);
    dynamics_in.reg(r, prefix + ".dynamics_in");
    for (std::size_t i = 0; i < video_blocks.size(); ++i) {
        video_blocks[i].reg(r, prefix + ".video_block" + std::to_string(i));
    }
    for (std::size_t i = 0; i < dynamics_blocks.size(); ++i) {
        dynamics_blocks[i].reg(r, prefix + ".dynamics_block" + std::to_string(i));
    }
}

Node DynamicsEnhancer::apply(Tape& t, Node raw_video, Node video_embedded, Node text_embedded,
                             const ForwardCtx& ctx) {
    Node video_out = video_embedded;
    for (auto& b : video_blocks) video_out = b.apply(t, video_out, text_embedded, ctx);
    if (beta == 1.0) return video_out;  // dynamics branch ablated

    Node dyn = tokenize_dynamics(t, raw_video, t.param(start_token));
    Node dyn_emb = ctx.drop(t, dynamics_in.apply(t, dyn), ctx.dropout_input);
    for (auto& b : dynamics_blocks) dyn_emb = b.apply(t, dyn_emb, text_embedded, ctx);
    return fuse(t, video_out, dyn_emb, beta);
}

}  // namespace tdmr::tdem
