#pragma once

#include "tdmr/nn.hpp"
#include "tdmr/tdem.hpp"

#include <cstdint>
#include <vector>

namespace tdmr::model {

using nn::ForwardCtx;
using num::Node;
using num::Tape;

struct ModelConfig {
    Index video_dim = 32;
    Index text_dim = 32;
    Index hidden = 256;      // d
    int depth = 3;           // encoder/decoder layers T
    int num_queries = 10;    // N
    int heads = 8;
    Index ffn_dim = 0;       // 0 -> 4 * hidden
    double dropout_transformer = 0.1;
    double dropout_input = 0.5;
    double beta = 0.7;
    int dynamics_layers = 2;

    Index ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// One candidate span plus its confidence; spans are (center, width)
// normalized to [0,1] of the video duration.
struct MomentPrediction {
    Mat spans;                    // N x 2 (center, width)
    std::vector<double> fg_probs; // N, from 2-class softmax
    std::vector<double> saliency; // L
    double neg_logit = 0.0;
};

// Differentiable handles from one forward pass.
struct ForwardNodes {
    Node spans;       // N x 2 in [0,1] (sigmoid)
    Node cls_logits;  // N x 2, column 0 = foreground
    Node saliency;    // L x 1
    Node neg_logit;   // 1 x 1
};

class TdDetr {
public:
    explicit TdDetr(const ModelConfig& cfg);

    void init(RngStream& rng);

    const ModelConfig& config() const { return cfg_; }
    const nn::ParamRegistry& registry() const { return registry_; }
    nn::ParamRegistry& registry() { return registry_; }

    // Full pipeline: input projections -> dynamics enhancement -> encoder
    // -> decoder -> heads. Deterministic in eval mode (training=false).
    ForwardNodes forward(Tape& t, const Mat& video, const Mat& text, bool training,
                         RngStream* dropout_rng = nullptr);

    // Eval-mode forward returning plain values.
    MomentPrediction predict(const Mat& video, const Mat& text);

    // Projections + input dropout + position encoding (video only).
    std::pair<Node, Node> embed_inputs(Tape& t, const Mat& video, const Mat& text,
                                       const ForwardCtx& ctx);

    // Encoder stack over fused tokens; also the saliency scores.
    std::pair<Node, Node> encode(Tape& t, Node fused, const ForwardCtx& ctx);

    // Moment queries through the decoder against the memory.
    Node decode(Tape& t, Node memory, const ForwardCtx& ctx);

    ForwardNodes predict_heads(Tape& t, Node decoder_out, Node memory, const ForwardCtx& ctx);

private:
    ModelConfig cfg_;
    nn::Linear video_in_, text_in_;
    tdem::DynamicsEnhancer enhancer_;
    std::vector<nn::EncoderLayer> encoder_;
    std::vector<nn::DecoderLayer> decoder_;
    Parameter queries_;  // N x d
    nn::Linear saliency_head_;   // d -> 1
    nn::Linear negative_head_;   // d -> 1, over mean-pooled memory
    nn::Linear span_fc1_, span_fc2_, span_fc3_;  // 3-layer MLP -> 2
    nn::Linear class_head_;      // d -> 2
    nn::ParamRegistry registry_;
};

}  // namespace tdmr::model
