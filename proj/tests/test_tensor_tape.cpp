#include <cmath>
#include <random>
#include <sstream>

#include "bridge/backbone.hpp"
#include "bridge/tape.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bridge;
using testutil::bits_equal;

TEST_CASE("binary ops with broadcasting match hand values") {
    Tape<double> tape;
    Var a = tape.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = tape.leaf(Tensor<double>({1, 3}, {10, 20, 30}));
    Var s = tape.add(a, b);
    const Tensor<double>& sv = tape.val(s);
    CHECK(sv.shape == Shape{2, 3});
    CHECK(sv[0] == 11);
    CHECK(sv[5] == 36);
    Var m = tape.mul(a, b);
    CHECK(tape.val(m)[4] == 100);
    Var d = tape.sub(b, a);
    CHECK(tape.val(d)[3] == 6);

    // column-vector broadcast
    Var c = tape.leaf(Tensor<double>({2, 1}, {100, 200}));
    Var s2 = tape.add(a, c);
    CHECK(tape.val(s2)[0] == 101);
    CHECK(tape.val(s2)[5] == 206);
}

TEST_CASE("broadcast backward accumulates over expanded axes") {
    Tape<double> tape;
    Var a = tape.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = tape.leaf(Tensor<double>({1, 3}, {2, 3, 4}));
    Var loss = tape.sum_all(tape.mul(a, b));
    tape.backward(loss);
    const Tensor<double>& gb = tape.grad(b);
    CHECK(gb[0] == 5);   // 1 + 4
    CHECK(gb[1] == 7);   // 2 + 5
    CHECK(gb[2] == 9);   // 3 + 6
    const Tensor<double>& ga = tape.grad(a);
    CHECK(ga[0] == 2);
    CHECK(ga[5] == 4);
}

TEST_CASE("matmul matches a naive triple loop") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        int64_t m = 1 + (int64_t)(rng() % 6), k = 1 + (int64_t)(rng() % 6),
                n = 1 + (int64_t)(rng() % 6);
        Tensor<double> A = Tensor<double>::randn({m, k}, rng);
        Tensor<double> B = Tensor<double>::randn({k, n}, rng);
        Tape<double> tape(false);
        Var y = tape.matmul(tape.leaf(A), tape.leaf(B));
        const Tensor<double>& Y = tape.val(y);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0;
                for (int64_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
                CHECK(Y[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
            }
    }
}

TEST_CASE("bmm with alpha matches naive batched product") {
    std::mt19937_64 rng(12);
    int64_t b = 3, m = 4, k = 5, n = 2;
    Tensor<double> A = Tensor<double>::randn({b, m, k}, rng);
    Tensor<double> B = Tensor<double>::randn({b, k, n}, rng);
    double alpha = 0.37;
    Tape<double> tape(false);
    Var y = tape.bmm(tape.leaf(A), tape.leaf(B), alpha);
    const Tensor<double>& Y = tape.val(y);
    for (int64_t q = 0; q < b; ++q)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0;
                for (int64_t p = 0; p < k; ++p)
                    acc += A[(q * m + i) * k + p] * B[(q * k + p) * n + j];
                CHECK(Y[(q * m + i) * n + j] == doctest::Approx(alpha * acc).epsilon(1e-12));
            }
}

TEST_CASE("transpose / reshape / slice / concat round-trip") {
    std::mt19937_64 rng(13);
    Tensor<double> A = Tensor<double>::randn({3, 4, 5}, rng);
    Tape<double> tape(false);
    Var a = tape.leaf(A);
    Var t = tape.transpose(a, 0, 2);
    CHECK(tape.val(t).shape == Shape{5, 4, 3});
    CHECK(tape.val(t)[0] == A[0]);
    // value check at a random coordinate
    CHECK(tape.val(t)[(2 * 4 + 3) * 3 + 1] == A[(1 * 4 + 3) * 5 + 2]);
    Var tt = tape.transpose(t, 0, 2);
    CHECK(bits_equal(tape.val(tt), A));

    Var r = tape.reshape(a, {12, 5});
    CHECK(bits_equal(Tensor<double>({12, 5}, A.data), tape.val(r)));

    Var s0 = tape.slice(r, 0, 0, 7);
    Var s1 = tape.slice(r, 0, 7, 5);
    Var back = tape.concat({s0, s1}, 0);
    CHECK(bits_equal(tape.val(back), tape.val(r)));

    Var c0 = tape.slice(r, 1, 0, 2);
    Var c1 = tape.slice(r, 1, 2, 3);
    Var back2 = tape.concat({c0, c1}, 1);
    CHECK(bits_equal(tape.val(back2), tape.val(r)));
}

TEST_CASE("softmax rows sum to one and match a reference") {
    std::mt19937_64 rng(14);
    SUBCASE("double") {
        Tensor<double> X = Tensor<double>::randn({7, 9}, rng, 3.0);
        Tape<double> tape(false);
        const Tensor<double>& Y = tape.val(tape.softmax_lastdim(tape.leaf(X)));
        for (int64_t r = 0; r < 7; ++r) {
            double sum = 0, mx = -1e300;
            for (int64_t j = 0; j < 9; ++j) mx = std::max(mx, X[r * 9 + j]);
            double den = 0;
            for (int64_t j = 0; j < 9; ++j) den += std::exp(X[r * 9 + j] - mx);
            for (int64_t j = 0; j < 9; ++j) {
                CHECK(Y[r * 9 + j] ==
                      doctest::Approx(std::exp(X[r * 9 + j] - mx) / den).epsilon(1e-12));
                sum += Y[r * 9 + j];
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("float uses the vectorized exp approximation") {
        Tensor<float> X = Tensor<float>::randn({64, 33}, rng, 4.0f);
        Tape<float> tape(false);
        const Tensor<float>& Y = tape.val(tape.softmax_lastdim(tape.leaf(X)));
        for (int64_t r = 0; r < 64; ++r) {
            double mx = -1e300;
            for (int64_t j = 0; j < 33; ++j) mx = std::max(mx, (double)X[r * 33 + j]);
            double den = 0;
            for (int64_t j = 0; j < 33; ++j) den += std::exp((double)X[r * 33 + j] - mx);
            for (int64_t j = 0; j < 33; ++j)
                CHECK(std::abs((double)Y[r * 33 + j] - std::exp((double)X[r * 33 + j] - mx) / den) <
                      1e-5);
        }
    }
}

TEST_CASE("softmax additive mask: -inf gives exactly zero, full mask throws") {
    Tape<double> tape(false);
    Tensor<double> X({2, 3}, {1, 2, 3, 4, 5, 6});
    double ninf = -std::numeric_limits<double>::infinity();
    Tensor<double> M({2, 3}, {0, ninf, 0, ninf, 0, ninf});
    const Tensor<double>& Y = tape.val(tape.softmax_lastdim(tape.leaf(X), &M));
    CHECK(Y[1] == 0.0);
    CHECK(Y[3] == 0.0);
    CHECK(Y[5] == 0.0);
    CHECK(Y[0] + Y[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(Y[4] == 1.0);

    Tensor<double> Mall({2, 3}, {ninf, ninf, ninf, 0, 0, 0});
    CHECK_THROWS_AS((void)tape.softmax_lastdim(tape.leaf(X), &Mall), NumericError);
}

TEST_CASE("float exp approximation stays within 5e-7 relative of std::exp") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(-80.0, 80.0);
    double worst = 0;
    for (int i = 0; i < 200000; ++i) {
        float x = (float)u(rng);
        double ref = std::exp((double)x);
        double got = (double)tr_exp(x);
        worst = std::max(worst, std::abs(got - ref) / ref);
    }
    CHECK(worst < 5e-7);
    CHECK(tr_exp(0.0f) == 1.0f);
}

TEST_CASE("sigmoid and silu values") {
    Tape<double> tape(false);
    Var s = tape.sigmoid(tape.leaf(Tensor<double>({3}, {0.0, 2.0, -2.0})));
    CHECK(tape.val(s)[0] == 0.5);  // exact at zero
    CHECK(tape.val(s)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(tape.val(s)[2] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))).epsilon(1e-12));

    Var z = tape.silu(tape.leaf(Tensor<double>({2}, {0.0, 1.5})));
    CHECK(tape.val(z)[0] == 0.0);
    CHECK(tape.val(z)[1] == doctest::Approx(1.5 / (1.0 + std::exp(-1.5))).epsilon(1e-12));

    // float sigmoid is exactly 0.5 at zero as well
    Tape<float> tf(false);
    CHECK(tf.val(tf.sigmoid(tf.leaf(Tensor<float>({1}, {0.0f}))))[0] == 0.5f);
}

TEST_CASE("straight-through threshold: forward tie rule and identity backward") {
    Tape<double> tape;
    Var p = tape.leaf(Tensor<double>({5}, {0.0, 0.499999, 0.5, 0.500001, 1.0}));
    Var g = tape.ste_threshold(p);
    const Tensor<double>& G = tape.val(g);
    CHECK(G[0] == 0.0);
    CHECK(G[1] == 0.0);
    CHECK(G[2] == 1.0);  // p == 0.5 opens the gate
    CHECK(G[3] == 1.0);
    CHECK(G[4] == 1.0);

    Var w = tape.leaf(Tensor<double>({5}, {1, 2, 3, 4, 5}));
    Var loss = tape.sum_all(tape.mul(g, w));
    tape.backward(loss);
    const Tensor<double>& gp = tape.grad(p);
    for (int i = 0; i < 5; ++i) CHECK(gp[i] == (double)(i + 1));  // dG/dp treated as 1
}

TEST_CASE("sigmoid + straight-through backward equals upstream * p * (1-p)") {
    std::mt19937_64 rng(16);
    Tensor<double> X = Tensor<double>::randn({17, 1}, rng, 2.0);
    Tensor<double> W = Tensor<double>::randn({17, 1}, rng);
    Tape<double> tape;
    Var x = tape.leaf(X);
    Var p = tape.sigmoid(x);
    Var g = tape.ste_threshold(p);
    Var loss = tape.sum_all(tape.mul(g, tape.leaf(W)));
    tape.backward(loss);
    const Tensor<double>& gx = tape.grad(x);
    for (int64_t i = 0; i < 17; ++i) {
        double pi = 1.0 / (1.0 + std::exp(-X[i]));
        CHECK(std::abs(gx[i] - W[i] * pi * (1.0 - pi)) < 1e-12);
    }
    // sigma'(0) = 0.25 exactly
    Tape<double> t2;
    Var x0 = t2.leaf(Tensor<double>({1}, {0.0}));
    Var l2 = t2.sum_all(t2.ste_threshold(t2.sigmoid(x0)));
    t2.backward(l2);
    CHECK(t2.grad(x0)[0] == 0.25);
}

TEST_CASE("elementwise and normalization gradients pass finite differences") {
    std::mt19937_64 rng(17);
    auto check_op = [&](auto build) {
        std::vector<Tensor<double>> params = {Tensor<double>::randn({3, 8}, rng),
                                              Tensor<double>::randn({8}, rng),
                                              Tensor<double>::randn({8}, rng)};
        auto f = [&](const std::vector<Tensor<double>>& x) {
            Tape<double> tape(false);
            std::vector<Var> v;
            for (const auto& t : x) v.push_back(tape.leaf(t));
            return tape.val(build(tape, v))[0];
        };
        Tape<double> tape;
        std::vector<Var> v;
        for (const auto& t : params) v.push_back(tape.leaf(t));
        Var loss = build(tape, v);
        tape.backward(loss);
        std::vector<Tensor<double>> grads;
        for (Var x : v) grads.push_back(tape.grad(x));
        return finite_diff_check(f, params, grads, 1e-6);
    };

    double e1 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.silu(v[0]));
    });
    CHECK(e1 < 2e-6);
    double e2 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.mul(t.exp_(t.affine(v[0], 0.3, 0.1)), v[0]));
    });
    CHECK(e2 < 1e-7);
    double e3 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.rmsnorm_lastdim(v[0], v[1]));
    });
    CHECK(e3 < 1e-7);
    double e4 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.layernorm_lastdim(v[0], v[1], v[2]));
    });
    CHECK(e4 < 1e-7);
    double e5 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.mul(t.softmax_lastdim(v[0]), v[0]));
    });
    CHECK(e5 < 1e-7);
    double e6 = check_op([](Tape<double>& t, const std::vector<Var>& v) {
        return t.mean_all(t.sigmoid(v[0]));
    });
    CHECK(e6 < 1e-7);
}

TEST_CASE("matmul, bmm, rope and attention composition pass finite differences") {
    std::mt19937_64 rng(18);
    std::vector<PECoord> coords = {{0, 0, 0}, {0, 1, 2}, {1, 0, 1}, {2, 2, 0}};
    RopeTable<double> rt = make_rope_table<double>(coords, 3, 100.0);
    std::vector<Tensor<double>> params = {Tensor<double>::randn({4, 6}, rng),
                                          Tensor<double>::randn({6, 6}, rng)};
    auto build = [&](Tape<double>& t, const std::vector<Var>& v) {
        Var q = t.rope(t.matmul(v[0], v[1]), rt, 1);
        Var scores = t.bmm(t.reshape(q, {1, 4, 6}),
                           t.reshape(t.transpose(q, 0, 1), {1, 6, 4}), 0.5);
        Var w = t.softmax_lastdim(scores);
        return t.mean_all(t.bmm(w, t.reshape(v[0], {1, 4, 6})));
    };
    auto f = [&](const std::vector<Tensor<double>>& x) {
        Tape<double> tape(false);
        std::vector<Var> v;
        for (const auto& t : x) v.push_back(tape.leaf(t));
        return tape.val(build(tape, v))[0];
    };
    Tape<double> tape;
    std::vector<Var> v;
    for (const auto& t : params) v.push_back(tape.leaf(t));
    Var loss = build(tape, v);
    tape.backward(loss);
    std::vector<Tensor<double>> grads;
    for (Var x : v) grads.push_back(tape.grad(x));
    CHECK(finite_diff_check(f, params, grads, 1e-6) < 1e-7);
}

TEST_CASE("rope preserves norms and is shift-invariant in coordinates") {
    std::mt19937_64 rng(19);
    Tensor<double> Q = Tensor<double>::randn({2, 12}, rng);
    Tensor<double> K = Tensor<double>::randn({2, 12}, rng);
    auto dot_after = [&](std::vector<PECoord> coords) {
        RopeTable<double> rt = make_rope_table<double>(coords, 6, 1000.0);
        Tape<double> tape(false);
        Tensor<double> q = tape.val(tape.rope(tape.leaf(Q), rt, 1));
        Tensor<double> k = tape.val(tape.rope(tape.leaf(K), rt, 1));
        double d = 0;
        for (int64_t j = 0; j < 12; ++j) d += q[j] * k[12 + j];
        // rotations preserve per-row norms
        double nq = 0, nq0 = 0;
        for (int64_t j = 0; j < 12; ++j) {
            nq += q[j] * q[j];
            nq0 += Q[j] * Q[j];
        }
        CHECK(nq == doctest::Approx(nq0).epsilon(1e-12));
        return d;
    };
    double d1 = dot_after({{0, 1, 2}, {0, 4, 3}});
    double d2 = dot_after({{0, 5, 7}, {0, 8, 8}});  // both shifted by (+4,+5)
    CHECK(std::abs(d1 - d2) < 1e-10);
    double d3 = dot_after({{0, 1, 3}, {0, 4, 5}});  // different column delta
    CHECK(std::abs(d1 - d3) > 1e-6);
}

TEST_CASE("embedding selects rows and rejects out-of-range ids") {
    Tape<double> tape;
    Var tbl = tape.leaf(Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
    Var e = tape.embedding(tbl, {2, 0, 2});
    const Tensor<double>& E = tape.val(e);
    CHECK(E.shape == Shape{3, 2});
    CHECK(E[0] == 5);
    CHECK(E[2] == 1);
    CHECK(E[4] == 5);
    Var loss = tape.sum_all(e);
    tape.backward(loss);
    const Tensor<double>& g = tape.grad(tbl);
    CHECK(g[0] == 1);  // row 0 used once
    CHECK(g[2] == 0);  // row 1 unused
    CHECK(g[4] == 2);  // row 2 used twice
    CHECK_THROWS_AS((void)tape.embedding(tbl, {3}), DataError);
}

TEST_CASE("sum_all and mean_all") {
    Tape<double> tape;
    Var a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    CHECK(tape.val(tape.sum_all(a))[0] == 10.0);
    CHECK(tape.val(tape.mean_all(a))[0] == 2.5);
    Var loss = tape.mean_all(a);
    tape.backward(loss);
    CHECK(tape.grad(a)[3] == 0.25);
}

TEST_CASE("tensor container round-trips bitwise and rejects dtype mismatch") {
    std::mt19937_64 rng(20);
    Tensor<float> t = Tensor<float>::randn({3, 5, 2}, rng);
    std::stringstream ss;
    save_tensor(ss, t);
    Tensor<float> r = load_tensor<float>(ss);
    CHECK(bits_equal(t, r));

    std::stringstream ss2;
    save_tensor(ss2, t);
    CHECK_THROWS_AS((void)load_tensor<double>(ss2), DataError);

    std::stringstream ss3("BAD v1 f32 1 3\n");
    CHECK_THROWS_AS((void)load_tensor<float>(ss3), DataError);
}

TEST_CASE("shape errors are reported") {
    Tape<double> tape(false);
    Var a = tape.leaf(Tensor<double>::zeros({2, 3}));
    Var b = tape.leaf(Tensor<double>::zeros({4, 5}));
    CHECK_THROWS_AS((void)tape.matmul(a, b), ShapeError);
    CHECK_THROWS_AS((void)tape.add(a, b), ShapeError);
    CHECK_THROWS_AS((void)tape.reshape(a, {7}), ShapeError);
    CHECK_THROWS_AS((void)tape.slice(a, 0, 1, 4), ShapeError);
    Tape<double> tg(false);
    Var l = tg.leaf(Tensor<double>::zeros({1}));
    CHECK_THROWS_AS(tg.backward(l), NumericError);  // tape recorded without gradients
}
