#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "e2r/tensor.hpp"

using namespace e2r;

TEST_CASE("matmul oracles") {
    Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 2}, {3, -1, 2, 5});
    Tensor r = matmul(id, b);
    for (int i = 0; i < 4; ++i) CHECK(r.vec()[i] == b.vec()[i]);

    // hand-computed oracle
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor v = Tensor::from({2, 1}, {5, 6});
    Tensor c = matmul(a, v);
    CHECK(c.vec()[0] == 17.0);
    CHECK(c.vec()[1] == 39.0);

    Tensor z = Tensor::zeros({2, 2});
    Tensor zc = matmul(z, b);
    for (double x : zc.vec()) CHECK(x == 0.0);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul is associative with identity on random 4x4 chains") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = Tensor::randn({4, 4}, rng);
        Tensor b = Tensor::randn({4, 4}, rng);
        Tensor c = Tensor::randn({4, 4}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (int i = 0; i < 16; ++i)
            CHECK(std::abs(left.vec()[i] - right.vec()[i]) < 1e-10);
        std::vector<double> idv(16, 0.0);
        for (int i = 0; i < 4; ++i) idv[static_cast<size_t>(i) * 4 + i] = 1.0;
        Tensor id = Tensor::from({4, 4}, idv);
        Tensor ai = matmul(a, id);
        for (int i = 0; i < 16; ++i) CHECK(std::abs(ai.vec()[i] - a.vec()[i]) < 1e-10);
    }
}

TEST_CASE("elementwise oracles and broadcasting") {
    Rng rng(7);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor zero = Tensor::zeros({3, 4});
    Tensor s = elementwise(Ew::add, x, zero);
    for (int i = 0; i < 12; ++i) CHECK(s.vec()[i] == x.vec()[i]);

    // d(x*x)/dx = 2x at x = 3
    Tensor x3 = Tensor::scalar(3.0).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor y = mul(x3, x3);
        tape.backward(y);
    }
    CHECK(x3.grad()[0] == doctest::Approx(6.0));

    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);

    // leading-1 broadcast: row vector over rows
    Tensor row = Tensor::from({1, 4}, {1, 2, 3, 4});
    Tensor sum_rows = add(x, row);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            CHECK(sum_rows.vec()[static_cast<size_t>(r) * 4 + c] ==
                  x.vec()[static_cast<size_t>(r) * 4 + c] + row.vec()[static_cast<size_t>(c)]);

    // trailing broadcast is rejected
    Tensor col = Tensor::zeros({3, 1});
    CHECK_THROWS_AS(add(x, col), ShapeError);
}

TEST_CASE("softmax oracles") {
    Tensor u = Tensor::from({1, 3}, {2.5, 2.5, 2.5});
    Tensor su = softmax(u, -1);
    for (double v : su.vec()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // [0, ln 3] -> [0.25, 0.75]
    Tensor t = Tensor::from({1, 2}, {0.0, std::log(3.0)});
    Tensor st = softmax(t, -1);
    CHECK(st.vec()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(st.vec()[1] == doctest::Approx(0.75).epsilon(1e-12));

    Rng rng(3);
    Tensor a = Tensor::randn({5, 7}, rng);
    Tensor sa = softmax(a, -1);
    for (int r = 0; r < 5; ++r) {
        double s = 0;
        for (int c = 0; c < 7; ++c) s += sa.vec()[static_cast<size_t>(r) * 7 + c];
        CHECK(std::abs(s - 1.0) < 1e-10);
    }
    // shift invariance
    Tensor shifted = add_scalar(a, 100.0);
    Tensor ss = softmax(shifted, -1);
    for (int i = 0; i < 35; ++i) CHECK(std::abs(ss.vec()[i] - sa.vec()[i]) < 1e-10);
}

TEST_CASE("layernorm oracles") {
    Tensor c = Tensor::from({1, 4}, {5, 5, 5, 5});
    Tensor lc = layernorm(c);
    for (double v : lc.vec()) CHECK(std::abs(v) < 1e-3);  // 0 / sqrt(eps)

    Tensor pm = Tensor::from({1, 2}, {1, -1});
    Tensor gain = Tensor::from({2}, {1, 1});
    Tensor lpm = layernorm(pm, gain);
    CHECK(lpm.vec()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(lpm.vec()[1] == doctest::Approx(-1.0).epsilon(1e-5));

    Rng rng(9);
    Tensor a = Tensor::randn({6, 16}, rng);
    Tensor la = layernorm(a);
    for (int r = 0; r < 6; ++r) {
        double mean = 0;
        for (int i = 0; i < 16; ++i) mean += la.vec()[static_cast<size_t>(r) * 16 + i];
        CHECK(std::abs(mean / 16) < 1e-9);
    }
}

TEST_CASE("backward basics") {
    Rng rng(5);
    Tensor x = Tensor::randn({3, 3}, rng).set_requires_grad(true);

    Tape t1;
    {
        TapeScope scope(t1);
        Tensor l = sum(x);
        t1.backward(l);
    }
    for (double g : x.grad()) CHECK(g == 1.0);

    x.drop_grad();
    Tape t2;
    {
        TapeScope scope(t2);
        Tensor l = scale(sum(mul(x, x)), 0.5);
        t2.backward(l);
    }
    for (int i = 0; i < 9; ++i) CHECK(x.grad()[i] == doctest::Approx(x.vec()[i]).epsilon(1e-12));

    // non-scalar loss refused
    Tape t3;
    {
        TapeScope scope(t3);
        Tensor y = mul(x, x);
        CHECK_THROWS_AS(t3.backward(y), AutodiffError);
    }
}

TEST_CASE("a node feeding two consumers accumulates both path gradients") {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor a = scale(x, 3.0);   // da/dx = 3
        Tensor b = mul(x, x);       // db/dx = 4
        Tensor l = sum(add(a, b));
        tape.backward(l);
    }
    CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("frozen inputs get no grad buffers") {
    Rng rng(6);
    Tensor w = Tensor::randn({3, 3}, rng);  // requires_grad = false
    Tensor x = Tensor::randn({3, 3}, rng).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum(matmul(x, w)));
    }
    CHECK(x.has_grad());
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("grad_check oracles") {
    Rng rng(13);
    // sum of squares: analytic gradient is known exactly
    Tensor x = Tensor::randn({4, 3}, rng);
    auto f = [](const Tensor& t) { return sum(mul(t, t)); };
    GradCheckReport rep = grad_check(f, x, 1e-5, 1e-9);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-9);

    // constant function: both gradients zero
    Tensor c = Tensor::randn({5}, rng);
    auto fc = [](const Tensor&) { return Tensor::scalar(3.5); };
    GradCheckReport repc = grad_check(fc, c);
    CHECK(repc.pass);
    CHECK(repc.max_rel_err == 0.0);

    // failure reports the worst coordinate: a cubic probed with a coarse step
    // has central-difference truncation error h^2 per coordinate
    Tensor y = Tensor::from({3}, {1.0, 2.0, -1.5});
    auto cubic = [](const Tensor& t) { return sum(mul(mul(t, t), t)); };
    GradCheckReport repk = grad_check(cubic, y, /*h=*/1e-1, /*tol=*/1e-6);
    CHECK_FALSE(repk.pass);
    CHECK(repk.worst_coord >= 0);
}

TEST_CASE("property: every op's analytic gradient matches central differences") {
    // >= 100 randomized (op, shape, seed) cases at tol 1e-4
    int cases = 0;
    for (uint64_t seed = 0; seed < 120; ++seed) {
        Rng rng(seed * 7919 + 1);
        int m = 2 + static_cast<int>(rng.uniform_int(3));
        int k = 2 + static_cast<int>(rng.uniform_int(3));
        int n = 2 + static_cast<int>(rng.uniform_int(3));
        Tensor x = Tensor::randn({m, k}, rng);
        Tensor other = Tensor::randn({m, k}, rng);
        Tensor mat = Tensor::randn({k, n}, rng);
        Tensor gain = Tensor::randn({k}, rng, 0.5);
        Tensor bias = Tensor::randn({k}, rng, 0.5);
        std::function<Tensor(const Tensor&)> f;
        switch (seed % 12) {
            case 0: f = [&](const Tensor& t) { return sum(add(t, other)); }; break;
            case 1: f = [&](const Tensor& t) { return sum(mul(sub(t, other), t)); }; break;
            case 2: f = [&](const Tensor& t) { return sum(gelu(t)); }; break;
            case 3: f = [&](const Tensor& t) { return sum(silu(t)); }; break;
            case 4: f = [&](const Tensor& t) { return sum(matmul(t, mat)); }; break;
            case 5: f = [&](const Tensor& t) { return sum(softmax(t, -1)); };
                // softmax grads are tiny against a uniform cotangent; mix in a
                // weighting so the check is non-degenerate
                f = [&](const Tensor& t) { return sum(mul(softmax(t, -1), other)); };
                break;
            case 6: f = [&](const Tensor& t) { return sum(mul(layernorm(t, gain, bias), other)); }; break;
            case 7: f = [&](const Tensor& t) { return mean(mul(t, t)); }; break;
            case 8: f = [&](const Tensor& t) { return sum(mul(transpose2d(t), transpose2d(other))); }; break;
            case 9: f = [&](const Tensor& t) { return sum(mul(reshape(t, {k, m}), reshape(other, {k, m}))); }; break;
            case 10: f = [&](const Tensor& t) {
                return sum(mul(slice_cols(t, 1, k), slice_cols(other, 1, k)));
            }; break;
            case 11: f = [&](const Tensor& t) {
                return sum(mul(concat_rows({t, other}), concat_rows({other, t})));
            }; break;
        }
        GradCheckReport rep = grad_check(f, x, 1e-5, 1e-4);
        INFO("seed ", seed, ": ", rep.detail);
        CHECK(rep.pass);
        ++cases;
    }
    CHECK(cases >= 100);
}

TEST_CASE("grad flows through matmul_bt, linear and embedding") {
    Rng rng(17);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor w = Tensor::randn({5, 4}, rng);
    Tensor b = Tensor::randn({5}, rng);
    auto f_lin = [&](const Tensor& t) { return sum(mul(linear(t, w, b), linear(t, w, b))); };
    CHECK(grad_check(f_lin, x).pass);
    auto f_w = [&](const Tensor& t) { return sum(silu(linear(x, t, b))); };
    CHECK(grad_check(f_w, w).pass);
    auto f_b = [&](const Tensor& t) { return sum(gelu(linear(x, w, t))); };
    CHECK(grad_check(f_b, b).pass);

    Tensor q = Tensor::randn({3, 4}, rng);
    auto f_bt = [&](const Tensor& t) { return sum(softmax(matmul_bt(t, q), -1)); };
    auto f_bt2 = [&](const Tensor& t) { return sum(mul(matmul_bt(t, q), matmul_bt(q, t))); };
    CHECK(grad_check(f_bt, x).pass);
    CHECK(grad_check(f_bt2, x).pass);

    Tensor table = Tensor::randn({6, 4}, rng);
    std::vector<int> ids = {0, 3, 3, 5};
    auto f_emb = [&](const Tensor& t) { return sum(mul(embedding(t, ids), embedding(t, ids))); };
    CHECK(grad_check(f_emb, table).pass);
    CHECK_THROWS(embedding(table, {6}));
}

TEST_CASE("ops skip the tape in inference mode") {
    Rng rng(19);
    Tensor x = Tensor::randn({2, 2}, rng).set_requires_grad(true);
    Tensor y = mul(x, x);  // no active tape
    CHECK_FALSE(y.requires_grad());
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor z = mul(x, x);
        CHECK(z.requires_grad());
        CHECK(tape.size() == 1);
    }
}
