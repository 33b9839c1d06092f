#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "tdmr/rng.hpp"
#include "tdmr/tape.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace tdmr;
using namespace tdmr::num;
using tdmr::testing::bit_equal;
using tdmr::testing::max_abs_diff;
using tdmr::testing::random_mat;

namespace {

// Finite-difference check of a scalar tape computation over leaf inputs.
double check_unary(const std::function<Node(Tape&, Node)>& op, const Mat& x0, double h = 1e-5) {
    Parameter p(x0);
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node y = op(t, t.param(p));
        Node loss = mean_all(t, mul(t, y, y));  // nontrivial downstream gradient
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    p.zero_grad();
    {
        Tape t;
        eval(&t);
    }
    Parameter* ps[] = {&p};
    return grad_check(ps, [&] { return eval(nullptr); }, h);
}

double check_binary(const std::function<Node(Tape&, Node, Node)>& op, const Mat& a0,
                    const Mat& b0, double h = 1e-5) {
    Parameter pa(a0), pb(b0);
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node y = op(t, t.param(pa), t.param(pb));
        Node loss = mean_all(t, mul(t, y, y));
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    pa.zero_grad();
    pb.zero_grad();
    {
        Tape t;
        eval(&t);
    }
    Parameter* ps[] = {&pa, &pb};
    return grad_check(ps, [&] { return eval(nullptr); }, h);
}

}  // namespace

TEST_CASE("rng: identical seed and draw sequence reproduces bit-identical values") {
    RngStream a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    RngStream c(42), d(42);
    for (int i = 0; i < 200; ++i) {
        CHECK(c.uniform() == d.uniform());
        CHECK(c.normal() == d.normal());
        CHECK(c.uniform_int(-5, 17) == d.uniform_int(-5, 17));
    }
}

TEST_CASE("rng: state save/load resumes the exact draw sequence") {
    RngStream a(7);
    for (int i = 0; i < 37; ++i) a.next_u64();
    const std::string state = a.save_state();
    std::vector<std::uint64_t> expected;
    for (int i = 0; i < 50; ++i) expected.push_back(a.next_u64());
    RngStream b(0);
    b.load_state(state);
    CHECK(b.seed() == 7);
    CHECK(b.draw_count() == 37);
    for (int i = 0; i < 50; ++i) CHECK(b.next_u64() == expected[i]);
}

TEST_CASE("rng: derived streams differ from parent and from each other") {
    RngStream root(3);
    RngStream a = root.derive(0);
    RngStream b = root.derive(1);
    CHECK(a.next_u64() != b.next_u64());
    // deriving is a pure function of (seed, id)
    RngStream a2 = root.derive(0);
    CHECK(RngStream(3).derive(0).next_u64() == a2.next_u64());
}

TEST_CASE("rng: uniform in [0,1), uniform_int hits both bounds") {
    RngStream rng(1);
    bool lo = false, hi = false;
    for (int i = 0; i < 2000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = rng.uniform_int(0, 3);
        if (k == 0) lo = true;
        if (k == 3) hi = true;
        CHECK(k >= 0);
        CHECK(k <= 3);
    }
    CHECK(lo);
    CHECK(hi);
}

TEST_CASE("affine: identity weights pass input through") {
    Tape t;
    Mat x(1, 2), W(2, 2), b(1, 2);
    x << 1, 0;
    W << 1, 0, 0, 1;
    b << 0, 0;
    Node y = affine(t, t.leaf(x), t.leaf(W), t.leaf(b));
    CHECK(t.value(y)(0, 0) == 1.0);
    CHECK(t.value(y)(0, 1) == 0.0);
}

TEST_CASE("affine: scalar arithmetic 2*3+1") {
    Tape t;
    Mat x(1, 1), W(1, 1), b(1, 1);
    x << 2;
    W << 3;
    b << 1;
    Node y = affine(t, t.leaf(x), t.leaf(W), t.leaf(b));
    CHECK(t.value(y)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("affine: shape mismatch raises dimension error") {
    Tape t;
    Mat x = Mat::Zero(2, 3), W = Mat::Zero(4, 2), b = Mat::Zero(1, 2);
    CHECK_THROWS_AS(affine(t, t.leaf(x), t.leaf(W), t.leaf(b)), DimensionError);
}

TEST_CASE("affine: gradients match central finite differences") {
    RngStream rng(11);
    Parameter W(random_mat(3, 2, rng)), b(random_mat(1, 2, rng));
    const Mat x = random_mat(4, 3, rng);
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node y = affine(t, t.constant(x), t.param(W), t.param(b));
        Node loss = mean_all(t, mul(t, y, y));
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    {
        Tape t;
        eval(&t);
    }
    Parameter* ps[] = {&W, &b};
    CHECK(grad_check(ps, [&] { return eval(nullptr); }, 1e-5) <= 1e-6);
}

TEST_CASE("softmax_rows: symmetry, normalization, shift invariance") {
    Tape t;
    Mat x(1, 2);
    x << 1, 1;
    CHECK(t.value(softmax_rows(t, t.leaf(x)))(0, 0) == doctest::Approx(0.5));

    Mat single(1, 1);
    single << -3.7;
    CHECK(t.value(softmax_rows(t, t.leaf(single)))(0, 0) == doctest::Approx(1.0));

    RngStream rng(5);
    const Mat r = random_mat(4, 6, rng);
    const Mat shifted = r.array() + 13.25;
    Mat a = t.value(softmax_rows(t, t.leaf(r)));
    Mat b = t.value(softmax_rows(t, t.leaf(shifted)));
    CHECK(max_abs_diff(a, b) <= 1e-12);
    for (Index i = 0; i < a.rows(); ++i) {
        CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-9);
        CHECK(a.row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("scaled_dot_attention: single key returns its value row") {
    Tape t;
    RngStream rng(9);
    const Mat q = random_mat(3, 4, rng);
    const Mat k = random_mat(1, 4, rng);
    const Mat v = random_mat(1, 4, rng);
    Mat out = t.value(scaled_dot_attention(t, t.leaf(q), t.leaf(k), t.leaf(v)));
    for (Index i = 0; i < 3; ++i) CHECK(max_abs_diff(out.row(i), v.row(0)) <= 1e-12);
}

TEST_CASE("scaled_dot_attention: equal logits average the value rows") {
    Tape t;
    RngStream rng(10);
    Mat q = Mat::Zero(2, 4);  // zero queries -> all logits equal
    const Mat k = random_mat(2, 4, rng);
    const Mat v = random_mat(2, 4, rng);
    Mat out = t.value(scaled_dot_attention(t, t.leaf(q), t.leaf(k), t.leaf(v)));
    const Mat mean = 0.5 * (v.row(0) + v.row(1));
    for (Index i = 0; i < 2; ++i) CHECK(max_abs_diff(out.row(i), mean) <= 1e-12);
}

TEST_CASE("scaled_dot_attention: matches naive three-loop oracle") {
    RngStream rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat q = random_mat(3, 4, rng);
        const Mat k = random_mat(5, 4, rng);
        const Mat v = random_mat(5, 4, rng);
        Tape t;
        Mat got = t.value(scaled_dot_attention(t, t.leaf(q), t.leaf(k), t.leaf(v)));

        Mat expect = Mat::Zero(3, 4);
        for (Index i = 0; i < 3; ++i) {
            std::vector<double> logits(5);
            double mx = -1e300;
            for (Index j = 0; j < 5; ++j) {
                double s = 0.0;
                for (Index d = 0; d < 4; ++d) s += q(i, d) * k(j, d);
                logits[j] = s / std::sqrt(4.0);
                mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            for (Index j = 0; j < 5; ++j) z += std::exp(logits[j] - mx);
            for (Index j = 0; j < 5; ++j) {
                const double w = std::exp(logits[j] - mx) / z;
                for (Index d = 0; d < 4; ++d) expect(i, d) += w * v(j, d);
            }
        }
        CHECK(max_abs_diff(got, expect) <= 1e-10);
    }
}

TEST_CASE("scaled_dot_attention: permuting key/value rows together is a no-op") {
    RngStream rng(14);
    const Mat q = random_mat(3, 4, rng);
    const Mat k = random_mat(5, 4, rng);
    const Mat v = random_mat(5, 4, rng);
    Mat kp(5, 4), vp(5, 4);
    const int perm[5] = {3, 0, 4, 1, 2};
    for (Index j = 0; j < 5; ++j) {
        kp.row(j) = k.row(perm[j]);
        vp.row(j) = v.row(perm[j]);
    }
    Tape t;
    Mat a = t.value(scaled_dot_attention(t, t.leaf(q), t.leaf(k), t.leaf(v)));
    Mat b = t.value(scaled_dot_attention(t, t.leaf(q), t.leaf(kp), t.leaf(vp)));
    CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("scaled_dot_attention: empty keys rejected") {
    Tape t;
    Mat q = Mat::Zero(2, 4), empty(0, 4);
    CHECK_THROWS(scaled_dot_attention(t, t.leaf(q), t.leaf(empty), t.leaf(empty)));
}

TEST_CASE("layer_norm: constant row collapses to bias") {
    Tape t;
    Mat x(1, 3), gain = Mat::Ones(1, 3), bias = Mat::Zero(1, 3);
    x << 1, 1, 1;
    Mat out = t.value(layer_norm(t, t.leaf(x), t.leaf(gain), t.leaf(bias)));
    CHECK(out.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("layer_norm: already-normalized row is nearly unchanged") {
    Tape t;
    Mat x(1, 2), gain = Mat::Ones(1, 2), bias = Mat::Zero(1, 2);
    x << -1, 1;
    Mat out = t.value(layer_norm(t, t.leaf(x), t.leaf(gain), t.leaf(bias)));
    CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: gradient vs finite differences") {
    RngStream rng(21);
    Parameter x(random_mat(2, 4, rng)), gain(random_mat(1, 4, rng)), bias(random_mat(1, 4, rng));
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node y = layer_norm(t, t.param(x), t.param(gain), t.param(bias));
        Node loss = mean_all(t, mul(t, y, y));
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    x.zero_grad();
    gain.zero_grad();
    bias.zero_grad();
    {
        Tape t;
        eval(&t);
    }
    Parameter* ps[] = {&x, &gain, &bias};
    CHECK(grad_check(ps, [&] { return eval(nullptr); }, 1e-5) <= 1e-5);
}

TEST_CASE("grad_check: polynomial, constant and known-answer cases") {
    Parameter w(Mat::Constant(1, 1, 3.0));
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node n = t.param(w);
        Node loss = sum_all(t, mul(t, n, n));
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    w.zero_grad();
    {
        Tape t;
        eval(&t);
    }
    CHECK(w.grad(0, 0) == doctest::Approx(6.0).epsilon(1e-8));
    Parameter* ps[] = {&w};
    CHECK(grad_check(ps, [&] { return eval(nullptr); }, 1e-5) <= 1e-8);

    // constant function: zero gradient, zero error
    Parameter c(Mat::Constant(1, 1, 2.0));
    c.zero_grad();
    Parameter* cs[] = {&c};
    CHECK(grad_check(cs, [] { return 5.0; }, 1e-5) == 0.0);
}

TEST_CASE("every differentiable op passes finite-difference checks over random inputs") {
    RngStream rng(100);
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        const Mat a = random_mat(3, 4, rng);
        const Mat b = random_mat(3, 4, rng);
        Mat bpos = b.array().abs() + 0.5;  // safe divisor / log argument

        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return add(t, x, y); }, a, b));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return sub(t, x, y); }, a, b));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return mul(t, x, y); }, a, b));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return div(t, x, y); }, a, bpos));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return cwise_max(t, x, y); }, a, b));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return cwise_min(t, x, y); }, a, b));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return scale(t, x, -2.5); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return add_scalar(t, x, 1.5); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return neg(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return relu(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return exp_(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return sigmoid(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return softplus(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return log_(t, x); }, bpos));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return abs_(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return transpose(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return softmax_rows(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return log_softmax_rows(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return mean_rows(t, x); }, a));
        worst = std::max(worst, check_unary([](Tape& t, Node x) { return slice(t, x, 1, 2, 1, 2); }, a));
        worst = std::max(worst,
                         check_binary([](Tape& t, Node x, Node y) { return matmul(t, x, transpose(t, y)); }, a, b));
        worst = std::max(worst, check_binary([](Tape& t, Node x, Node y) { return concat_rows(t, x, y); }, a, b));
        worst = std::max(worst, check_binary(
                                    [](Tape& t, Node x, Node y) {
                                        Node parts[] = {x, y};
                                        return concat_cols(t, parts);
                                    },
                                    a, b));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("attention and broadcast ops pass finite differences") {
    RngStream rng(200);
    const Mat q = random_mat(3, 4, rng);
    const Mat k = random_mat(5, 4, rng);
    const Mat v = random_mat(5, 4, rng);
    Parameter pq(q), pk(k), pv(v);
    auto eval = [&](Tape* back) {
        Tape local;
        Tape& t = back ? *back : local;
        Node y = scaled_dot_attention(t, t.param(pq), t.param(pk), t.param(pv));
        Node loss = mean_all(t, mul(t, y, y));
        if (back) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    {
        Tape t;
        eval(&t);
    }
    Parameter* ps[] = {&pq, &pk, &pv};
    CHECK(grad_check(ps, [&] { return eval(nullptr); }, 1e-5) <= 1e-4);

    const Mat x = random_mat(4, 3, rng);
    const Mat row = random_mat(1, 3, rng);
    CHECK(check_binary([](Tape& t, Node a, Node b) { return add_rowvec(t, a, b); }, x, row) <= 1e-6);
}

TEST_CASE("tape: non-finite intermediate raises numeric error") {
    Tape t;
    Mat x(1, 1);
    x << -1.0;
    CHECK_THROWS_AS(log_(t, t.leaf(x)), NumericError);
    t.set_check_finite(false);
    CHECK_NOTHROW(log_(t, t.leaf(x)));
}

TEST_CASE("tape: no NaN/Inf from finite inputs up to |x| = 1e3") {
    RngStream rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat x = 1e3 * random_mat(3, 3, rng).array().tanh();
        Tape t;
        Node n = t.leaf(x);
        CHECK_NOTHROW(softmax_rows(t, n));
        CHECK_NOTHROW(sigmoid(t, n));
        CHECK_NOTHROW(softplus(t, n));
        CHECK_NOTHROW(relu(t, n));
        CHECK_NOTHROW(abs_(t, n));
    }
}

TEST_CASE("dropout: identity in eval mode, inverted scaling in training") {
    RngStream rng(41);
    const Mat x = random_mat(6, 5, rng);
    Tape t;
    RngStream drop_rng(7);
    Node kept = dropout(t, t.leaf(x), 0.5, drop_rng, false);
    CHECK(bit_equal(t.value(kept), x));

    // training mode: surviving entries scaled by 1/(1-rate), others zero
    RngStream drop_rng2(7);
    Node dropped = dropout(t, t.leaf(x), 0.5, drop_rng2, true);
    const Mat& d = t.value(dropped);
    int zeros = 0;
    for (Index i = 0; i < d.size(); ++i) {
        const double v = d.data()[i];
        if (v == 0.0) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(2.0 * x.data()[i]));
        }
    }
    CHECK(zeros > 0);
    CHECK(zeros < d.size());
}

TEST_CASE("backward accumulates into parameter sinks through shared subexpressions") {
    Parameter w(Mat::Constant(1, 1, 2.0));
    w.zero_grad();
    Tape t;
    Node n = t.param(w);
    Node y = add(t, mul(t, n, n), n);  // w^2 + w -> dy/dw = 2w + 1 = 5
    t.backward(sum_all(t, y));
    CHECK(w.grad(0, 0) == doctest::Approx(5.0));
}
