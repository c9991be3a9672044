#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "medgraph/params.hpp"
#include "test_util.hpp"

using namespace medgraph;
using namespace medgraph::testutil;

TEST_CASE("primitive forward values") {
    Tape t;
    CHECK(t.val(t.sigmoid(t.leaf(Array::scalar(0.0)))).item() == doctest::Approx(0.5));
    CHECK(t.val(t.elu(t.leaf(Array::scalar(0.0)))).item() == doctest::Approx(0.0));
    CHECK(t.val(t.elu(t.leaf(Array::scalar(-1e9)))).item() == doctest::Approx(-1.0));

    Var sm = t.softmax(t.leaf(Array::vector({1.3, 1.3})));
    CHECK(t.val(sm).data[0] == doctest::Approx(0.5));
    CHECK(t.val(sm).data[1] == doctest::Approx(0.5));

    Var c = t.concat(t.leaf(Array::vector({1, 2})), t.leaf(Array::vector({3})));
    CHECK(t.val(c).rows == 3);
    CHECK(t.val(c).data[2] == 3.0);

    CHECK(t.val(t.relu(t.leaf(Array::scalar(-2.0)))).item() == 0.0);
    CHECK(t.val(t.softplus(t.leaf(Array::scalar(0.0)))).item() == doctest::Approx(std::log(2.0)));
    CHECK(t.val(t.softplus(t.leaf(Array::scalar(-800.0)))).item() == doctest::Approx(0.0));
}

TEST_CASE("shape mismatch errors name both shapes") {
    Tape t;
    Var a = t.leaf(Array(2, 3));
    Var b = t.leaf(Array(4, 5));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("(2x3)"), std::runtime_error);
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("(4x5)"), std::runtime_error);
}

TEST_CASE("x*x gradient at 3 is 6") {
    Tape t;
    Var x = t.leaf(Array::scalar(3.0));
    Var loss = t.mul(x, x);
    t.backward(loss);
    CHECK(t.grad(x).item() == doctest::Approx(6.0));
}

TEST_CASE("sum(sigmoid(Wx)) matches finite differences") {
    std::mt19937_64 rng(7);
    Array w = random_array(4, 3, rng);
    Array x = random_array(3, 1, rng);

    auto loss_of_w = [&](const Array& wv) {
        Tape t;
        return t.val(t.sum(t.sigmoid(t.matmul(t.leaf(wv), t.leaf(x))))).item();
    };

    Tape t;
    Var wl = t.leaf(w);
    t.backward(t.sum(t.sigmoid(t.matmul(wl, t.leaf(x)))));
    for (size_t i = 0; i < w.size(); ++i) {
        double fd = central_diff(loss_of_w, w, i);
        CHECK(rel_err(t.grad(wl).data[i], fd) < 1e-4);
    }
}

TEST_CASE("exp-affine intensity gradient matches finite differences") {
    // loss = exp(w.h + w_t * dt + b)
    std::mt19937_64 rng(11);
    Array w = random_array(5, 1, rng, -0.5, 0.5);
    Array h = random_array(5, 1, rng);
    Array wt = Array::scalar(0.3);
    Array b = Array::scalar(-0.2);
    const double dt = 1.7;

    auto build = [&](Tape& t, Var wv, Var wtv, Var bv) {
        Var a = t.dot(wv, t.leaf(h));
        return t.exp(t.add(t.add(a, t.scale(wtv, dt)), bv));
    };
    Tape t;
    Var wv = t.leaf(w), wtv = t.leaf(wt), bv = t.leaf(b);
    t.backward(build(t, wv, wtv, bv));

    auto loss_w = [&](const Array& x) {
        Tape t2;
        return t2.val(build(t2, t2.leaf(x), t2.leaf(wt), t2.leaf(b))).item();
    };
    for (size_t i = 0; i < w.size(); ++i)
        CHECK(rel_err(t.grad(wv).data[i], central_diff(loss_w, w, i)) < 1e-4);

    auto loss_wt = [&](const Array& x) {
        Tape t2;
        return t2.val(build(t2, t2.leaf(w), t2.leaf(x), t2.leaf(b))).item();
    };
    CHECK(rel_err(t.grad(wtv).item(), central_diff(loss_wt, wt, 0)) < 1e-4);

    auto loss_b = [&](const Array& x) {
        Tape t2;
        return t2.val(build(t2, t2.leaf(w), t2.leaf(wt), t2.leaf(x))).item();
    };
    CHECK(rel_err(t.grad(bv).item(), central_diff(loss_b, b, 0)) < 1e-4);
}

TEST_CASE("random primitive compositions match finite differences") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        Array a = random_array(3, 3, rng);
        Array b = random_array(3, 1, rng);
        auto build = [&](Tape& t, Var av, Var bv) {
            Var y = t.matmul(av, bv);
            Var z = t.add(t.elu(y), t.mul(t.sigmoid(y), t.softplus(bv)));
            Var s = t.softmax(z);
            return t.sum(t.mul(s, t.sqrt(t.add_const(t.mul(z, z), 0.5))));
        };
        Tape t;
        Var av = t.leaf(a), bv = t.leaf(b);
        t.backward(build(t, av, bv));

        auto loss_a = [&](const Array& x) {
            Tape t2;
            return t2.val(build(t2, t2.leaf(x), t2.leaf(b))).item();
        };
        for (size_t i = 0; i < a.size(); ++i)
            CHECK(rel_err(t.grad(av).data[i], central_diff(loss_a, a, i)) < 1e-4);
        auto loss_b = [&](const Array& x) {
            Tape t2;
            return t2.val(build(t2, t2.leaf(a), t2.leaf(x))).item();
        };
        for (size_t i = 0; i < b.size(); ++i)
            CHECK(rel_err(t.grad(bv).data[i], central_diff(loss_b, b, i)) < 1e-4);
    }
}

TEST_CASE("backward twice with reset yields identical gradients") {
    std::mt19937_64 rng(3);
    Array a = random_array(4, 4, rng);
    Tape t;
    Var av = t.leaf(a);
    Var loss = t.sum(t.sigmoid(t.matmul(av, av)));
    t.backward(loss);
    Array g1 = t.grad(av);
    t.backward(loss);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(t.grad(av).data[i] == g1.data[i]);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Var v = t.leaf(Array::vector({1, 2}));
    CHECK_THROWS_AS(t.backward(v), std::runtime_error);
}

TEST_CASE("slice forward and backward") {
    Tape t;
    Var v = t.leaf(Array::vector({1, 2, 3, 4}));
    Var s = t.slice(v, 1, 2);
    CHECK(t.val(s).data[0] == 2.0);
    t.backward(t.sum(t.mul(s, s)));
    CHECK(t.grad(v).data[0] == 0.0);
    CHECK(t.grad(v).data[1] == doctest::Approx(4.0));
    CHECK(t.grad(v).data[2] == doctest::Approx(6.0));
    CHECK(t.grad(v).data[3] == 0.0);
}

TEST_CASE("grad_check: linear function is near-exact") {
    ParamStore ps;
    std::mt19937_64 rng(5);
    ps.add("w", random_array(4, 1, rng));
    auto f = [](ParamStore& p, bool with_grad) {
        Tape t;
        Var w = t.leaf(p.at("w").value);
        Var loss = t.sum(t.scale(w, 3.0));
        if (with_grad) {
            t.backward(loss);
            p.at("w").grad = t.grad(w);
        }
        return t.val(loss).item();
    };
    GradCheckReport rep = grad_check(f, ps, 1e-5, 1e-8);
    CHECK(rep.ok());
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("grad_check flags a relu kink as non-differentiable, not failure") {
    ParamStore ps;
    ps.add("x", Array::scalar(0.0));  // kink exactly at the evaluation point
    auto f = [](ParamStore& p, bool with_grad) {
        Tape t;
        Var x = t.leaf(p.at("x").value);
        Var loss = t.sum(t.relu(x));
        if (with_grad) {
            t.backward(loss);
            p.at("x").grad = t.grad(x);
        }
        return t.val(loss).item();
    };
    GradCheckReport rep = grad_check(f, ps, 1e-5, 1e-4);
    REQUIRE(rep.entries.size() == 1);
    CHECK(rep.entries[0].nondifferentiable);
    CHECK(rep.ok());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore ps;
    ps.add("w", Array::vector({1.0, -2.0}));
    adam_step(ps, AdamConfig{});
    CHECK(ps.at("w").value.data[0] == 1.0);
    CHECK(ps.at("w").value.data[1] == -2.0);
}

TEST_CASE("adam: first bias-corrected step moves by about lr") {
    ParamStore ps;
    ps.add("w", Array::scalar(0.0));
    ps.at("w").grad.data[0] = 1.0;
    AdamConfig cfg;
    adam_step(ps, cfg);
    // mhat = 1, vhat = 1 on step 1, so delta = lr / (1 + eps)
    CHECK(ps.at("w").value.item() == doctest::Approx(-cfg.lr).epsilon(1e-6));
}

TEST_CASE("adam: converges on a quadratic bowl") {
    ParamStore ps;
    ps.add("x", Array::scalar(5.0));
    AdamConfig cfg;
    cfg.lr = 0.05;
    for (int i = 0; i < 500; ++i) {
        ps.zero_grad();
        ps.at("x").grad.data[0] = 2.0 * ps.at("x").value.item();
        adam_step(ps, cfg);
    }
    CHECK(std::abs(ps.at("x").value.item()) < 1e-2);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
    ParamStore ps;
    ps.add("bad.param", Array::scalar(0.0));
    ps.at("bad.param").grad.data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(adam_step(ps, AdamConfig{}), doctest::Contains("bad.param"), std::runtime_error);
}
