#include "tdmr/tape.hpp"

#include <cmath>

namespace tdmr::num {

namespace {

void require_same_shape(const Tape& t, Node a, Node b, const char* op) {
    if (t.rows(a) != t.rows(b) || t.cols(a) != t.cols(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             std::to_string(t.rows(a)) + "x" + std::to_string(t.cols(a)) + " vs " +
                             std::to_string(t.rows(b)) + "x" + std::to_string(t.cols(b)));
    }
}

}  // namespace

Node add(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "add");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a) + t.value(b), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g;
        if (tt.needs_grad(b)) tt.grad(b) += g;
    });
    return out;
}

Node sub(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "sub");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a) - t.value(b), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g;
        if (tt.needs_grad(b)) tt.grad(b) -= g;
    });
    return out;
}

Node mul(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "mul");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a).cwiseProduct(t.value(b)), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g.cwiseProduct(tt.value(b));
        if (tt.needs_grad(b)) tt.grad(b) += g.cwiseProduct(tt.value(a));
    });
    return out;
}

Node scale(Tape& t, Node a, double s) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a) * s, ng, nullptr);
    if (ng) t.set_back(out, [a, out, s](Tape& tt) { tt.grad(a) += tt.grad(out) * s; });
    return out;
}

Node add_scalar(Tape& t, Node a, double s) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).array() + s, ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) { tt.grad(a) += tt.grad(out); });
    return out;
}

Node neg(Tape& t, Node a) { return scale(t, a, -1.0); }

Node add_rowvec(Tape& t, Node x, Node row) {
    if (t.rows(row) != 1 || t.cols(row) != t.cols(x)) {
        throw DimensionError("add_rowvec: expected 1x" + std::to_string(t.cols(x)));
    }
    bool ng = t.needs_grad(x) || t.needs_grad(row);
    Node out = t.push(t.value(x).rowwise() + t.value(row).row(0), ng, nullptr);
    if (ng) t.set_back(out, [x, row, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(x)) tt.grad(x) += g;
        if (tt.needs_grad(row)) tt.grad(row) += g.colwise().sum();
    });
    return out;
}

Node matmul(Tape& t, Node a, Node b) {
    if (t.cols(a) != t.rows(b)) {
        throw DimensionError("matmul: inner dimensions disagree (" + std::to_string(t.cols(a)) +
                             " vs " + std::to_string(t.rows(b)) + ")");
    }
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a) * t.value(b), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g * tt.value(b).transpose();
        if (tt.needs_grad(b)) tt.grad(b) += tt.value(a).transpose() * g;
    });
    return out;
}

Node transpose(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).transpose(), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) { tt.grad(a) += tt.grad(out).transpose(); });
    return out;
}

Node div(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "div");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a).cwiseQuotient(t.value(b)), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g.cwiseQuotient(tt.value(b));
        if (tt.needs_grad(b)) {
            tt.grad(b) -= g.cwiseProduct(tt.value(out)).cwiseQuotient(tt.value(b));
        }
    });
    return out;
}

Node exp_(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).array().exp().matrix(), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        tt.grad(a) += tt.grad(out).cwiseProduct(tt.value(out));
    });
    return out;
}

Node relu(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).cwiseMax(0.0), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        tt.grad(a) += tt.grad(out).cwiseProduct(
            (tt.value(a).array() > 0.0).cast<double>().matrix());
    });
    return out;
}

Node sigmoid(Tape& t, Node a) {
    Mat y = t.value(a).unaryExpr([](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    });
    bool ng = t.needs_grad(a);
    Node out = t.push(std::move(y), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        const Mat& yy = tt.value(out);
        tt.grad(a) += tt.grad(out).cwiseProduct(
            yy.cwiseProduct((Mat::Ones(yy.rows(), yy.cols()) - yy)));
    });
    return out;
}

Node softplus(Tape& t, Node a) {
    Mat y = t.value(a).unaryExpr([](double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    });
    bool ng = t.needs_grad(a);
    Node out = t.push(std::move(y), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        Mat s = tt.value(a).unaryExpr([](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
        tt.grad(a) += tt.grad(out).cwiseProduct(s);
    });
    return out;
}

Node log_(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).array().log().matrix(), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        tt.grad(a) += tt.grad(out).cwiseQuotient(tt.value(a));
    });
    return out;
}

Node abs_(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).cwiseAbs(), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        Mat s = tt.value(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        tt.grad(a) += tt.grad(out).cwiseProduct(s);
    });
    return out;
}

Node cwise_max(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "cwise_max");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a).cwiseMax(t.value(b)), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        Mat take_a = (tt.value(a).array() >= tt.value(b).array()).cast<double>().matrix();
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g.cwiseProduct(take_a);
        if (tt.needs_grad(b))
            tt.grad(b) += g.cwiseProduct((Mat::Ones(take_a.rows(), take_a.cols()) - take_a));
    });
    return out;
}

Node cwise_min(Tape& t, Node a, Node b) {
    require_same_shape(t, a, b, "cwise_min");
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    Node out = t.push(t.value(a).cwiseMin(t.value(b)), ng, nullptr);
    if (ng) t.set_back(out, [a, b, out](Tape& tt) {
        Mat take_a = (tt.value(a).array() <= tt.value(b).array()).cast<double>().matrix();
        const Mat& g = tt.grad(out);
        if (tt.needs_grad(a)) tt.grad(a) += g.cwiseProduct(take_a);
        if (tt.needs_grad(b))
            tt.grad(b) += g.cwiseProduct((Mat::Ones(take_a.rows(), take_a.cols()) - take_a));
    });
    return out;
}

Node sum_all(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    Mat s(1, 1);
    s(0, 0) = t.value(a).sum();
    Node out = t.push(std::move(s), ng, nullptr);
    if (ng) t.set_back(out, [a, out](Tape& tt) {
        tt.grad(a).array() += tt.grad(out)(0, 0);
    });
    return out;
}

Node mean_all(Tape& t, Node a) {
    return scale(t, sum_all(t, a), 1.0 / static_cast<double>(t.value(a).size()));
}

Node mean_rows(Tape& t, Node a) {
    bool ng = t.needs_grad(a);
    const double inv = 1.0 / static_cast<double>(t.rows(a));
    Node out = t.push(t.value(a).colwise().sum() * inv, ng, nullptr);
    if (ng) t.set_back(out, [a, out, inv](Tape& tt) {
        tt.grad(a) += (Mat::Ones(tt.rows(a), 1) * tt.grad(out)) * inv;
    });
    return out;
}

Node slice(Tape& t, Node a, Index r0, Index nrows, Index c0, Index ncols) {
    if (r0 < 0 || c0 < 0 || r0 + nrows > t.rows(a) || c0 + ncols > t.cols(a)) {
        throw DimensionError("slice: block out of range");
    }
    bool ng = t.needs_grad(a);
    Node out = t.push(t.value(a).block(r0, c0, nrows, ncols), ng, nullptr);
    if (ng) t.set_back(out, [a, out, r0, c0, nrows, ncols](Tape& tt) {
        tt.grad(a).block(r0, c0, nrows, ncols) += tt.grad(out);
    });
    return out;
}

Node concat_rows(Tape& t, std::span<const Node> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    Index total = 0;
    const Index cols = t.cols(parts[0]);
    bool ng = false;
    for (Node p : parts) {
        if (t.cols(p) != cols) throw DimensionError("concat_rows: column mismatch");
        total += t.rows(p);
        ng = ng || t.needs_grad(p);
    }
    Mat v(total, cols);
    Index r = 0;
    for (Node p : parts) {
        v.middleRows(r, t.rows(p)) = t.value(p);
        r += t.rows(p);
    }
    std::vector<Node> owned(parts.begin(), parts.end());
    Node out = t.push(std::move(v), ng, nullptr);
    if (ng) t.set_back(out, [owned = std::move(owned), out](Tape& tt) {
        const Mat& g = tt.grad(out);
        Index r = 0;
        for (Node p : owned) {
            if (tt.needs_grad(p)) tt.grad(p) += g.middleRows(r, tt.rows(p));
            r += tt.rows(p);
        }
    });
    return out;
}

Node concat_cols(Tape& t, std::span<const Node> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    Index total = 0;
    const Index rows = t.rows(parts[0]);
    bool ng = false;
    for (Node p : parts) {
        if (t.rows(p) != rows) throw DimensionError("concat_cols: row mismatch");
        total += t.cols(p);
        ng = ng || t.needs_grad(p);
    }
    Mat v(rows, total);
    Index c = 0;
    for (Node p : parts) {
        v.middleCols(c, t.cols(p)) = t.value(p);
        c += t.cols(p);
    }
    std::vector<Node> owned(parts.begin(), parts.end());
    Node out = t.push(std::move(v), ng, nullptr);
    if (ng) t.set_back(out, [owned = std::move(owned), out](Tape& tt) {
        const Mat& g = tt.grad(out);
        Index c = 0;
        for (Node p : owned) {
            if (tt.needs_grad(p)) tt.grad(p) += g.middleCols(c, tt.cols(p));
            c += tt.cols(p);
        }
    });
    return out;
}

Node affine(Tape& t, Node x, Node W, Node b) {
    return add_rowvec(t, matmul(t, x, W), b);
}

Node softmax_rows(Tape& t, Node x) {
    if (t.cols(x) < 1) throw DimensionError("softmax_rows: needs at least one column");
    Mat y = t.value(x);
    for (Index i = 0; i < y.rows(); ++i) {
        Eigen::ArrayXd row = y.row(i).array() - y.row(i).maxCoeff();
        row = row.exp();
        y.row(i) = (row / row.sum()).matrix();
    }
    bool ng = t.needs_grad(x);
    Node out = t.push(std::move(y), ng, nullptr);
    if (ng) t.set_back(out, [x, out](Tape& tt) {
        const Mat& yy = tt.value(out);
        const Mat& g = tt.grad(out);
        Mat dx(yy.rows(), yy.cols());
        for (Index i = 0; i < yy.rows(); ++i) {
            const double dot = g.row(i).dot(yy.row(i));
            dx.row(i) = yy.row(i).cwiseProduct(g.row(i).array().matrix() -
                                               Mat::Constant(1, yy.cols(), dot));
        }
        tt.grad(x) += dx;
    });
    return out;
}

Node log_softmax_rows(Tape& t, Node x) {
    if (t.cols(x) < 1) throw DimensionError("log_softmax_rows: needs at least one column");
    Mat y = t.value(x);
    for (Index i = 0; i < y.rows(); ++i) {
        const double m = y.row(i).maxCoeff();
        const double lse = m + std::log((y.row(i).array() - m).exp().sum());
        y.row(i).array() -= lse;
    }
    bool ng = t.needs_grad(x);
    Node out = t.push(std::move(y), ng, nullptr);
    if (ng) t.set_back(out, [x, out](Tape& tt) {
        const Mat& ls = tt.value(out);
        const Mat& g = tt.grad(out);
        Mat dx(ls.rows(), ls.cols());
        for (Index i = 0; i < ls.rows(); ++i) {
            const double gsum = g.row(i).sum();
            dx.row(i) = g.row(i) - (ls.row(i).array().exp() * gsum).matrix();
        }
        tt.grad(x) += dx;
    });
    return out;
}

Node scaled_dot_attention(Tape& t, Node q, Node k, Node v) {
    if (t.rows(k) == 0) throw DimensionError("scaled_dot_attention: empty key set");
    if (t.cols(q) != t.cols(k)) throw DimensionError("scaled_dot_attention: q/k dim mismatch");
    if (t.rows(k) != t.rows(v)) throw DimensionError("scaled_dot_attention: k/v length mismatch");
    Node logits = scale(t, matmul(t, q, transpose(t, k)),
                        1.0 / std::sqrt(static_cast<double>(t.cols(q))));
    return matmul(t, softmax_rows(t, logits), v);
}

Node layer_norm(Tape& t, Node x, Node gain, Node bias) {
    constexpr double kEps = 1e-5;
    const Index d = t.cols(x);
    if (t.cols(gain) != d || t.cols(bias) != d || t.rows(gain) != 1 || t.rows(bias) != 1) {
        throw DimensionError("layer_norm: gain/bias must be 1xD");
    }
    const Mat& xv = t.value(x);
    Mat z(xv.rows(), d), inv_sigma(xv.rows(), 1);
    for (Index i = 0; i < xv.rows(); ++i) {
        const double mu = xv.row(i).mean();
        const double var = (xv.row(i).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_sigma(i, 0) = is;
        z.row(i) = ((xv.row(i).array() - mu) * is).matrix();
    }
    Mat y = (z.array().rowwise() * t.value(gain).row(0).array()).matrix();
    y.rowwise() += t.value(bias).row(0);
    bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
    Node out = t.push(std::move(y), ng, nullptr);
    if (ng) t.set_back(out, [x, gain, bias, out, z = std::move(z),
                             inv_sigma = std::move(inv_sigma)](Tape& tt) {
        const Mat& g = tt.grad(out);
        const Index d = g.cols();
        if (tt.needs_grad(bias)) tt.grad(bias) += g.colwise().sum();
        if (tt.needs_grad(gain)) tt.grad(gain) += g.cwiseProduct(z).colwise().sum();
        if (tt.needs_grad(x)) {
            Mat dz = (g.array().rowwise() * tt.value(gain).row(0).array()).matrix();
            Mat dx(g.rows(), d);
            for (Index i = 0; i < g.rows(); ++i) {
                const double m1 = dz.row(i).mean();
                const double m2 = dz.row(i).cwiseProduct(z.row(i)).mean();
                dx.row(i) = ((dz.row(i).array() - m1 - z.row(i).array() * m2) *
                             inv_sigma(i, 0)).matrix();
            }
            tt.grad(x) += dx;
        }
    });
    return out;
}

Node dropout(Tape& t, Node x, double rate, RngStream& rng, bool training) {
    if (!training || rate == 0.0) return x;
    if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0,1)");
    const double keep = 1.0 - rate;
    Mat mask(t.rows(x), t.cols(x));
    for (Index i = 0; i < mask.rows(); ++i)
        for (Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mul(t, x, t.constant(std::move(mask)));
}

double grad_check(std::span<Parameter* const> params,
                  const std::function<double()>& loss, double h) {
    if (h <= 0.0) throw ValidationError("grad_check: h must be positive");
    double max_rel = 0.0;
    for (Parameter* p : params) {
        for (Index i = 0; i < p->value.rows(); ++i) {
            for (Index j = 0; j < p->value.cols(); ++j) {
                const double orig = p->value(i, j);
                p->value(i, j) = orig + h;
                const double fp = loss();
                p->value(i, j) = orig - h;
                const double fm = loss();
                p->value(i, j) = orig;
                if (!std::isfinite(fp) || !std::isfinite(fm)) {
                    throw NumericError("grad_check: non-finite loss evaluation");
                }
                const double numeric = (fp - fm) / (2.0 * h);
                const double analytic = p->grad(i, j);
                const double rel = std::abs(analytic - numeric) /
                                   std::max(1.0, std::abs(analytic));
                if (rel > max_rel) max_rel = rel;
            }
        }
    }
    return max_rel;
}

}  // namespace tdmr::num
