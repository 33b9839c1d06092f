#pragma once

#include "tdmr/rng.hpp"
#include "tdmr/tape.hpp"
#include "tdmr/types.hpp"

#include <utility>
#include <vector>

namespace tdmr::objectives {

using num::Node;
using num::Tape;

// A 1-D span as (center, width); convert with [c - w/2, c + w/2].
struct Span {
    double center = 0.0;
    double width = 0.0;
    double start() const { return center - width / 2.0; }
    double end() const { return center + width / 2.0; }
};

// Test-only fault hook; flips the sign convention of span_giou so the
// verify battery can prove it is sensitive to an injected defect.
extern bool test_flip_giou_sign;

double span_iou(const Span& a, const Span& b);
double span_giou(const Span& a, const Span& b);  // in (-1, 1]
double interval_iou(double s1, double e1, double s2, double e2);

// Minimum-cost one-to-one assignment over an N x M cost matrix;
// returns min(N, M) (row, col) pairs.
std::vector<std::pair<int, int>> hungarian(const Mat& cost);

struct CostWeights {
    double l1 = 10.0;
    double iou = 1.0;
    double cls = 4.0;
    void validate() const;
};

struct LossWeights {
    double l1 = 10.0;
    double iou = 1.0;
    double cls = 4.0;
    double margin = 1.0;
    double cont = 1.0;
    double neg = 1.0;
    // conventions, config-exposed
    double background_weight = 0.1;  // unmatched-query class weight
    double margin_delta = 0.2;
    double tau = 0.5;
    void validate() const;
};

struct LossReport {
    double l1 = 0.0;
    double giou = 0.0;
    double cls = 0.0;
    double margin = 0.0;
    double cont = 0.0;
    double neg = 0.0;
    double total = 0.0;
    bool saliency_skipped = false;
};

// cost[i,j] = l1 * ||span_i - gt_j||_1 + iou * (-gIoU) + cls * (-fg_prob_i)
std::vector<std::pair<int, int>> match(const Mat& pred_spans,
                                       const std::vector<double>& fg_probs,
                                       const std::vector<Span>& gts, const CostWeights& w);

struct MomentLossNodes {
    Node l1;    // mean L1 over matched pairs
    Node giou;  // mean (1 - gIoU) over matched pairs
    Node cls;   // weighted cross-entropy, matched = foreground
};

MomentLossNodes moment_loss(Tape& t, Node pred_spans, Node cls_logits,
                            const std::vector<Span>& gts,
                            const std::vector<std::pair<int, int>>& assignment,
                            double background_weight);

struct SaliencyLossNodes {
    Node margin;
    Node cont;
    Node neg;
    bool skipped = false;  // no positive clip: margin/cont contribute 0
};

SaliencyLossNodes saliency_losses(Tape& t, Node saliency, const std::vector<int>& labels,
                                  const std::vector<bool>& in_gt, Node neg_logit, double tau,
                                  double delta, RngStream& rng);

struct TotalLoss {
    Node total;
    LossReport report;
};

TotalLoss total_loss(Tape& t, const MomentLossNodes& moment, const SaliencyLossNodes& saliency,
                     const LossWeights& w);

}  // namespace tdmr::objectives
