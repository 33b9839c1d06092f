#include "tdmr/vsdc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>

namespace tdmr::vsdc {

Placement placement_from_string(const std::string& s) {
    if (s == "append") return Placement::kAppend;
    if (s == "prepend") return Placement::kPrepend;
    if (s == "split") return Placement::kSplit;
    throw ValidationError("unknown placement '" + s + "'");
}

std::string to_string(Placement p) {
    switch (p) {
        case Placement::kAppend: return "append";
        case Placement::kPrepend: return "prepend";
        case Placement::kSplit: return "split";
    }
    return "?";
}

SimilarityMatrix batch_similarity(const std::vector<ClipFeatureSequence>& batch) {
    const std::size_t n = batch.size();
    if (n < 2) throw ValidationError("batch_similarity: need at least 2 videos");
    const Index dim = batch[0].dim();
    SimilarityMatrix out;
    out.values = Mat::Zero(n, n);

    // Mean pairwise cosine factorizes through per-video sums of unit clips.
    std::vector<Mat> unit_sums(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (batch[i].dim() != dim) throw DimensionError("batch_similarity: feature dim mismatch");
        Mat sum = Mat::Zero(1, dim);
        for (Index r = 0; r < batch[i].length(); ++r) {
            const double norm = batch[i].clips.row(r).norm();
            if (norm == 0.0) {
                ++out.zero_norm_clips;  // cosine 0 against everything
                continue;
            }
            sum += batch[i].clips.row(r) / norm;
        }
        unit_sums[i] = std::move(sum);
    }
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t l = j + 1; l < n; ++l) {
            const double denom =
                static_cast<double>(batch[j].length()) * static_cast<double>(batch[l].length());
            const double s = unit_sums[j].row(0).dot(unit_sums[l].row(0)) / denom;
            out.values(j, l) = s;
            out.values(l, j) = s;
        }
    }
    out.values.diagonal().setConstant(-std::numeric_limits<double>::infinity());
    return out;
}

PairPlan select_pairs(const SimilarityMatrix& s) {
    const Index n = s.values.rows();
    if (n < 2) throw ValidationError("select_pairs: need at least 2 videos");
    PairPlan plan;
    plan.partner.resize(n);
    plan.similarity.resize(n);
    for (Index i = 0; i < n; ++i) {
        Index best = (i == 0) ? 1 : 0;
        for (Index j = 0; j < n; ++j) {
            if (j == i) continue;
            if (s.values(i, j) > s.values(i, best)) best = j;
        }
        plan.partner[i] = static_cast<std::size_t>(best);
        plan.similarity[i] = s.values(i, best);
    }
    return plan;
}

PairPlan select_pairs_random(std::size_t n, RngStream& rng) {
    if (n < 2) throw ValidationError("select_pairs_random: need at least 2 videos");
    PairPlan plan;
    plan.partner.resize(n);
    plan.similarity.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t k = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(n) - 2));
        if (k >= i) ++k;
        plan.partner[i] = k;
    }
    return plan;
}

namespace {

struct Token {
    TokenSource source;
    Index index;
    bool is_gt;
};

// Insert `tok` into `seq` at the position that keeps source indices
// strictly increasing within its stream; never lands inside the GT block
// because the GT block contains only consecutive self tokens.
void monotone_insert(std::list<Token>& seq, const Token& tok) {
    auto after_last_same = seq.end();
    for (auto it = seq.begin(); it != seq.end(); ++it) {
        if (it->source != tok.source) continue;
        if (it->index > tok.index) {
            seq.insert(it, tok);
            return;
        }
        after_last_same = std::next(it);
    }
    seq.insert(after_last_same, tok);
}

}  // namespace

SynthesisResult synthesize(const ClipFeatureSequence& self_video, const IndexSpan& gt,
                           const ClipFeatureSequence& partner, double alpha,
                           double length_bias_frac, Placement placement, RngStream& rng,
                           const std::vector<int>& self_saliency) {
    const Index l_self = self_video.length();
    const Index l_partner = partner.length();
    if (!(0 <= gt.first && gt.first <= gt.last && gt.last < l_self)) {
        throw ValidationError("synthesize: gt span outside video");
    }
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("synthesize: alpha outside [0,1]");
    if (self_video.dim() != partner.dim()) {
        throw DimensionError("synthesize: self/partner feature dim mismatch");
    }

    // Draw order is fixed: self keeps, partner keeps, split cut, length bias.
    std::vector<Token> self_keep, partner_keep, self_dropped, partner_dropped;
    for (Index i = 0; i < l_self; ++i) {
        const bool in_gt = gt.contains(i);
        if (in_gt) {
            self_keep.push_back({TokenSource::kSelf, i, true});
        } else if (rng.uniform() < alpha) {
            self_keep.push_back({TokenSource::kSelf, i, false});
        } else {
            self_dropped.push_back({TokenSource::kSelf, i, false});
        }
    }
    for (Index i = 0; i < l_partner; ++i) {
        if (rng.uniform() < 1.0 - alpha) {
            partner_keep.push_back({TokenSource::kPartner, i, false});
        } else {
            partner_dropped.push_back({TokenSource::kPartner, i, false});
        }
    }

    std::list<Token> seq;
    switch (placement) {
        case Placement::kAppend:
            seq.assign(self_keep.begin(), self_keep.end());
            seq.insert(seq.end(), partner_keep.begin(), partner_keep.end());
            break;
        case Placement::kPrepend:
            seq.assign(partner_keep.begin(), partner_keep.end());
            seq.insert(seq.end(), self_keep.begin(), self_keep.end());
            break;
        case Placement::kSplit: {
            const Index cut = rng.uniform_int(0, static_cast<Index>(partner_keep.size()));
            seq.assign(partner_keep.begin(), partner_keep.begin() + cut);
            seq.insert(seq.end(), self_keep.begin(), self_keep.end());
            seq.insert(seq.end(), partner_keep.begin() + cut, partner_keep.end());
            break;
        }
    }

    const Index gt_len = gt.length();
    const Index bias = static_cast<Index>(std::llround(
        length_bias_frac * static_cast<double>(l_self)));
    const Index u = bias > 0 ? rng.uniform_int(-bias, bias) : 0;
    if (gt_len + 2 > l_self + l_partner) {
        throw ValidationError("synthesize: degenerate, gt_length + 2 exceeds achievable length");
    }
    Index target = std::max<Index>(l_self + u, gt_len + 2);
    target = std::min<Index>(target, l_self + l_partner);

    // Trim from the back end first, then the front, never touching GT.
    while (static_cast<Index>(seq.size()) > target) {
        if (!seq.back().is_gt) {
            seq.pop_back();
        } else if (!seq.front().is_gt) {
            seq.pop_front();
        } else {
            break;  // only GT left; target >= gt_len + 2 makes this unreachable
        }
    }
    // Pad with unsampled partner tokens first, then unsampled self tokens,
    // each inserted at its order-preserving position.
    std::size_t pd = 0, sd = 0;
    while (static_cast<Index>(seq.size()) < target) {
        if (pd < partner_dropped.size()) {
            monotone_insert(seq, partner_dropped[pd++]);
        } else if (sd < self_dropped.size()) {
            monotone_insert(seq, self_dropped[sd++]);
        } else {
            break;  // achievable maximum reached; target was clamped to it
        }
    }

    SynthesisResult out;
    const Index l_out = static_cast<Index>(seq.size());
    out.tokens = Mat(l_out, self_video.dim());
    out.saliency_labels.resize(l_out);
    out.provenance.reserve(l_out);
    Index pos = 0;
    Index gt_first = -1, gt_last = -1;
    for (const Token& tok : seq) {
        if (tok.source == TokenSource::kSelf) {
            out.tokens.row(pos) = self_video.clips.row(tok.index);
            if (!self_saliency.empty()) {
                out.saliency_labels[pos] = self_saliency[tok.index];
            } else {
                out.saliency_labels[pos] = tok.is_gt ? 3 : 0;
            }
            if (tok.is_gt) {
                if (gt_first < 0) gt_first = pos;
                gt_last = pos;
            }
        } else {
            out.tokens.row(pos) = partner.clips.row(tok.index);
            out.saliency_labels[pos] = 0;
        }
        out.provenance.push_back({tok.source, tok.index});
        ++pos;
    }
    out.gt_span = {gt_first, gt_last};
    return out;
}

std::vector<SynthesisResult> synthesize_batch(const std::vector<ClipFeatureSequence>& batch,
                                              const std::vector<IndexSpan>& gt_spans,
                                              const std::vector<std::vector<int>>& saliency,
                                              const PairPlan& plan, const SynthesisConfig& cfg,
                                              const RngStream& rng) {
    if (batch.size() != gt_spans.size() || batch.size() != plan.partner.size()) {
        throw ValidationError("synthesize_batch: size mismatch");
    }
    std::vector<SynthesisResult> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        RngStream r = rng.derive(i);
        static const std::vector<int> kNoSaliency;
        const std::vector<int>& sal = saliency.empty() ? kNoSaliency : saliency[i];
        out.push_back(synthesize(batch[i], gt_spans[i], batch[plan.partner[i]], cfg.alpha,
                                 cfg.length_bias_frac, cfg.placement, r, sal));
    }
    return out;
}

}  // namespace tdmr::vsdc
