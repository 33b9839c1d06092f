#pragma once

#include "tdmr/data.hpp"
#include "tdmr/rng.hpp"
#include "tdmr/types.hpp"

#include <vector>

namespace tdmr::vsdc {

using data::ClipFeatureSequence;
using data::IndexSpan;

// Mean pairwise cosine similarity between every two videos in a batch.
// The diagonal is an invalid sentinel (-inf) so argmax selection can
// read rows directly.
struct SimilarityMatrix {
    Mat values;             // N x N
    int zero_norm_clips = 0;  // clips treated as cosine 0 against everything
};

struct PairPlan {
    std::vector<std::size_t> partner;   // partner[i] != i
    std::vector<double> similarity;     // similarity[i] == max_{j != i} S[i,j]
};

enum class Placement { kAppend, kPrepend, kSplit };

Placement placement_from_string(const std::string& s);
std::string to_string(Placement p);

enum class TokenSource { kSelf, kPartner };

struct Provenance {
    TokenSource source;
    Index index;  // clip index in the source video
};

struct SynthesisResult {
    Mat tokens;                   // L' x D_v
    IndexSpan gt_span;            // remapped, contiguous
    std::vector<int> saliency_labels;
    std::vector<Provenance> provenance;
};

struct SynthesisConfig {
    double alpha = 0.7;
    double length_bias_frac = 0.1;
    Placement placement = Placement::kSplit;
    bool random_pairing = false;  // ablation: ignore similarity, pair at random
};

SimilarityMatrix batch_similarity(const std::vector<ClipFeatureSequence>& batch);

// k_i = argmax_{j != i} S[i,j], ties broken by lowest index.
PairPlan select_pairs(const SimilarityMatrix& s);

// Random-pairing ablation; each i draws a uniform partner != i.
PairPlan select_pairs_random(std::size_t n, RngStream& rng);

// Token-level synthesis preserving the GT span bit-identically: GT kept
// with probability 1, other self tokens with alpha, partner tokens with
// 1-alpha, then trimmed/padded to the biased target length.
// self_saliency may be empty, in which case labels fall back to 3 inside
// the GT span and 0 outside.
SynthesisResult synthesize(const ClipFeatureSequence& self_video, const IndexSpan& gt,
                           const ClipFeatureSequence& partner, double alpha,
                           double length_bias_frac, Placement placement, RngStream& rng,
                           const std::vector<int>& self_saliency = {});

// Both members of every pair are synthesized (i with context from k_i,
// and k_i's own result from its row of the plan). Output order matches
// input order; sample i draws only from rng.derive(i).
std::vector<SynthesisResult> synthesize_batch(const std::vector<ClipFeatureSequence>& batch,
                                              const std::vector<IndexSpan>& gt_spans,
                                              const std::vector<std::vector<int>>& saliency,
                                              const PairPlan& plan, const SynthesisConfig& cfg,
                                              const RngStream& rng);

}  // namespace tdmr::vsdc
