#pragma once

#include "tdmr/nn.hpp"

namespace tdmr::tdem {

using nn::ForwardCtx;
using num::Node;
using num::Tape;

// First-difference encoding prefixed by the learnable start token:
// T[0] = v[0] - st, T[t] = v[t] - v[t-1]. Exactly invertible via
// st + prefix sums.
Node tokenize_dynamics(Tape& t, Node video_tokens, Node start_token);

// beta * video_attended + (1 - beta) * dynamics_attended. The beta
// boundaries return the corresponding input unchanged (bitwise).
Node fuse(Tape& t, Node video_attended, Node dynamics_attended, double beta);

// Temporal dynamics branch plus the text-interaction stacks for both
// branches. Video/dynamics use separate projections and separate
// cross-attention parameters.
struct DynamicsEnhancer {
    Parameter start_token;     // 1 x D_v
    nn::Linear dynamics_in;    // D_v -> d
    std::vector<nn::CrossAttnBlock> video_blocks;
    std::vector<nn::CrossAttnBlock> dynamics_blocks;
    double beta = 0.7;

    DynamicsEnhancer() = default;
    DynamicsEnhancer(Index video_dim, Index d, int heads, Index ffn_dim, int layers,
                     double beta_);

    void init(RngStream& rng);
    void reg(nn::ParamRegistry& r, const std::string& prefix);

    // raw_video: L x D_v (pre-projection, feeds the tokenizer)
    // video_embedded: L x d, text_embedded: W x d
    Node apply(Tape& t, Node raw_video, Node video_embedded, Node text_embedded,
               const ForwardCtx& ctx);
};

}  // namespace tdmr::tdem
