#include "tdmr/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace tdmr::objectives {

bool test_flip_giou_sign = false;

void CostWeights::validate() const {
    if (l1 < 0.0 || iou < 0.0 || cls < 0.0) throw ValidationError("cost weights must be >= 0");
    if (l1 == 0.0 && iou == 0.0 && cls == 0.0) {
        throw ValidationError("cost weights must not all be zero");
    }
}

void LossWeights::validate() const {
    if (l1 < 0 || iou < 0 || cls < 0 || margin < 0 || cont < 0 || neg < 0) {
        throw ValidationError("loss weights must be >= 0");
    }
    if (tau <= 0.0) throw ValidationError("contrastive temperature must be > 0");
}

double interval_iou(double s1, double e1, double s2, double e2) {
    const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
    const double uni = (e1 - s1) + (e2 - s2) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double span_iou(const Span& a, const Span& b) {
    if (a.width <= 0.0 || b.width <= 0.0) throw ValidationError("span_iou: nonpositive width");
    return interval_iou(a.start(), a.end(), b.start(), b.end());
}

double span_giou(const Span& a, const Span& b) {
    if (a.width <= 0.0 || b.width <= 0.0) throw ValidationError("span_giou: nonpositive width");
    const double inter = std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start(), b.start()));
    const double uni = a.width + b.width - inter;
    const double hull = std::max(a.end(), b.end()) - std::min(a.start(), b.start());
    double g = inter / uni - (hull - uni) / hull;
    if (test_flip_giou_sign) g = -g;
    return g;
}

std::vector<std::pair<int, int>> hungarian(const Mat& cost) {
    const int rows = static_cast<int>(cost.rows());
    const int cols = static_cast<int>(cost.cols());
    if (rows == 0 || cols == 0) return {};
    if (!cost.allFinite()) throw ValidationError("hungarian: non-finite cost");
    const bool transposed = rows > cols;
    const Mat a = transposed ? Mat(cost.transpose()) : cost;
    const int n = static_cast<int>(a.rows());
    const int m = static_cast<int>(a.cols());
    constexpr double kInf = std::numeric_limits<double>::infinity();

    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<std::pair<int, int>> out;
    for (int j = 1; j <= m; ++j) {
        if (p[j] == 0) continue;
        const int r = p[j] - 1;
        const int c = j - 1;
        out.emplace_back(transposed ? std::pair<int, int>{c, r} : std::pair<int, int>{r, c});
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<int, int>> match(const Mat& pred_spans,
                                       const std::vector<double>& fg_probs,
                                       const std::vector<Span>& gts, const CostWeights& w) {
    w.validate();
    if (gts.empty()) throw ValidationError("match: no ground-truth spans");
    const int n = static_cast<int>(pred_spans.rows());
    const int m = static_cast<int>(gts.size());
    Mat cost(n, m);
    for (int i = 0; i < n; ++i) {
        const Span p{pred_spans(i, 0), pred_spans(i, 1)};
        for (int j = 0; j < m; ++j) {
            const double l1 = std::abs(p.center - gts[j].center) + std::abs(p.width - gts[j].width);
            cost(i, j) = w.l1 * l1 + w.iou * (-span_giou(p, gts[j])) + w.cls * (-fg_probs[i]);
        }
    }
    return hungarian(cost);
}

namespace {

Node scalar_const(Tape& t, double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return t.constant(m);
}

Node row_of(Tape& t, Node colvec, Index i) { return num::slice(t, colvec, i, 1, 0, 1); }

// log sum exp over a column vector, stabilized by a constant shift.
Node logsumexp(Tape& t, Node colvec) {
    const double shift = t.value(colvec).maxCoeff();
    Node e = num::exp_(t, num::add_scalar(t, colvec, -shift));
    return num::add_scalar(t, num::log_(t, num::sum_all(t, e)), shift);
}

Node gather_rows(Tape& t, Node colvec, const std::vector<int>& idx) {
    std::vector<Node> parts;
    parts.reserve(idx.size());
    for (int i : idx) parts.push_back(row_of(t, colvec, i));
    return num::concat_rows(t, parts);
}

}  // namespace

MomentLossNodes moment_loss(Tape& t, Node pred_spans, Node cls_logits,
                            const std::vector<Span>& gts,
                            const std::vector<std::pair<int, int>>& assignment,
                            double background_weight) {
    const Index n = t.rows(pred_spans);
    if (assignment.empty()) throw ValidationError("moment_loss: empty assignment");
    MomentLossNodes out;

    Node l1_sum = scalar_const(t, 0.0);
    Node giou_sum = scalar_const(t, 0.0);
    for (const auto& [i, j] : assignment) {
        Node pc = num::slice(t, pred_spans, i, 1, 0, 1);
        Node pw = num::slice(t, pred_spans, i, 1, 1, 1);
        Node gc = scalar_const(t, gts[j].center);
        Node gw = scalar_const(t, gts[j].width);
        l1_sum = num::add(t, l1_sum,
                          num::add(t, num::abs_(t, num::sub(t, pc, gc)),
                                   num::abs_(t, num::sub(t, pw, gw))));

        Node half_pw = num::scale(t, pw, 0.5);
        Node ps = num::sub(t, pc, half_pw);
        Node pe = num::add(t, pc, half_pw);
        Node gs = scalar_const(t, gts[j].start());
        Node ge = scalar_const(t, gts[j].end());
        Node inter = num::relu(t, num::sub(t, num::cwise_min(t, pe, ge),
                                           num::cwise_max(t, ps, gs)));
        Node uni = num::sub(t, num::add(t, pw, gw), inter);
        Node hull = num::sub(t, num::cwise_max(t, pe, ge), num::cwise_min(t, ps, gs));
        Node giou = num::sub(t, num::div(t, inter, uni),
                             num::div(t, num::sub(t, hull, uni), hull));
        if (test_flip_giou_sign) giou = num::neg(t, giou);
        giou_sum = num::add(t, giou_sum, num::sub(t, scalar_const(t, 1.0), giou));
    }
    const double inv_m = 1.0 / static_cast<double>(assignment.size());
    out.l1 = num::scale(t, l1_sum, inv_m);
    out.giou = num::scale(t, giou_sum, inv_m);

    // Cross-entropy: matched queries are foreground (class 0), the rest
    // background (class 1) down-weighted against class imbalance.
    std::vector<char> matched(n, 0);
    for (const auto& [i, j] : assignment) matched[i] = 1;
    Node ls = num::log_softmax_rows(t, cls_logits);
    Node cls_sum = scalar_const(t, 0.0);
    double weight_sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        const Index target = matched[i] ? 0 : 1;
        const double w = matched[i] ? 1.0 : background_weight;
        cls_sum = num::add(t, cls_sum, num::scale(t, num::slice(t, ls, i, 1, target, 1), -w));
        weight_sum += w;
    }
    out.cls = num::scale(t, cls_sum, 1.0 / weight_sum);
    return out;
}

SaliencyLossNodes saliency_losses(Tape& t, Node saliency, const std::vector<int>& labels,
                                  const std::vector<bool>& in_gt, Node neg_logit, double tau,
                                  double delta, RngStream& rng) {
    const Index l = t.rows(saliency);
    if (labels.size() != static_cast<std::size_t>(l) ||
        in_gt.size() != static_cast<std::size_t>(l)) {
        throw DimensionError("saliency_losses: labels/mask length mismatch");
    }
    SaliencyLossNodes out;

    int max_label = -1;
    for (Index i = 0; i < l; ++i) {
        if (in_gt[i]) max_label = std::max(max_label, labels[i]);
    }
    std::vector<int> positives, negatives;
    for (Index i = 0; i < l; ++i) {
        if (in_gt[i] && labels[i] == max_label) positives.push_back(static_cast<int>(i));
        if (!in_gt[i]) negatives.push_back(static_cast<int>(i));
    }

    if (positives.empty() || negatives.empty()) {
        out.margin = scalar_const(t, 0.0);
        out.skipped = true;
    } else {
        const std::size_t pairs = std::min(positives.size(), negatives.size());
        Node sum = scalar_const(t, 0.0);
        for (std::size_t p = 0; p < pairs; ++p) {
            const int hi = positives[rng.uniform_int(0, static_cast<std::int64_t>(positives.size()) - 1)];
            const int lo = negatives[rng.uniform_int(0, static_cast<std::int64_t>(negatives.size()) - 1)];
            Node gap = num::sub(t, row_of(t, saliency, lo), row_of(t, saliency, hi));
            sum = num::add(t, sum, num::relu(t, num::add_scalar(t, gap, delta)));
        }
        out.margin = num::scale(t, sum, 1.0 / static_cast<double>(pairs));
    }

    // Rank-aware contrastive term over the levels present in the labels.
    std::set<int> levels;
    for (int lab : labels) {
        if (lab >= 1) levels.insert(lab);
    }
    if (levels.empty()) {
        out.cont = scalar_const(t, 0.0);
        out.skipped = true;
    } else {
        Node scaled = num::scale(t, saliency, 1.0 / tau);
        Node lse_all = logsumexp(t, scaled);
        Node sum = scalar_const(t, 0.0);
        for (int r : levels) {
            std::vector<int> members;
            for (Index i = 0; i < l; ++i) {
                if (labels[i] >= r) members.push_back(static_cast<int>(i));
            }
            Node lse_sub = logsumexp(t, gather_rows(t, scaled, members));
            sum = num::add(t, sum, num::sub(t, lse_all, lse_sub));
        }
        out.cont = num::scale(t, sum, 1.0 / static_cast<double>(levels.size()));
    }

    // -log(1 - sigmoid(x)) == softplus(x)
    out.neg = num::softplus(t, neg_logit);
    return out;
}

TotalLoss total_loss(Tape& t, const MomentLossNodes& moment, const SaliencyLossNodes& saliency,
                     const LossWeights& w) {
    w.validate();
    Node total = scalar_const(t, 0.0);
    total = num::add(t, total, num::scale(t, moment.l1, w.l1));
    total = num::add(t, total, num::scale(t, moment.giou, w.iou));
    total = num::add(t, total, num::scale(t, moment.cls, w.cls));
    total = num::add(t, total, num::scale(t, saliency.margin, w.margin));
    total = num::add(t, total, num::scale(t, saliency.cont, w.cont));
    total = num::add(t, total, num::scale(t, saliency.neg, w.neg));

    TotalLoss out;
    out.total = total;
    out.report.l1 = t.value(moment.l1)(0, 0);
    out.report.giou = t.value(moment.giou)(0, 0);
    out.report.cls = t.value(moment.cls)(0, 0);
    out.report.margin = t.value(saliency.margin)(0, 0);
    out.report.cont = t.value(saliency.cont)(0, 0);
    out.report.neg = t.value(saliency.neg)(0, 0);
    out.report.total = t.value(total)(0, 0);
    out.report.saliency_skipped = saliency.skipped;
    if (!std::isfinite(out.report.total)) {
        throw DivergenceError("total_loss: non-finite loss");
    }
    return out;
}

}  // namespace tdmr::objectives
