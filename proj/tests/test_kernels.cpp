#include <doctest.h>

#include "deepgp/kernels.hpp"
#include "deepgp/rng.hpp"
#include "testutil.hpp"

using namespace deepgp;
using testutil::close_rel;

TEST_CASE("ard gram: single point paired with itself gives the variance exactly") {
    Matrix a(1, 3);
    a << 0.3, -1.2, 4.0;
    ArdKernel k(2.0, (Vector(3) << 0.7, 1.3, 0.01).finished());
    const Matrix g = k.gram(a, a);
    CHECK(g(0, 0) == 2.0);
}

TEST_CASE("ard gram: zero weights erase input dependence") {
    Rng rng(3);
    const Matrix a = rng.normal_matrix(4, 2);
    const Matrix b = rng.normal_matrix(5, 2);
    ArdKernel k(1.0, Vector::Zero(2));
    const Matrix g = k.gram(a, b);
    CHECK((g.array() == 1.0).all());
}

TEST_CASE("ard gram: hand-computed single weight value") {
    Matrix a(1, 1), b(1, 1);
    a << 0.0;
    b << 2.0;
    ArdKernel k(1.0, Vector::Ones(1));
    CHECK(close_rel(k.gram(a, b)(0, 0), std::exp(-2.0), 1e-12));
}

TEST_CASE("gram rejects dimension mismatches with a descriptive error") {
    ArdKernel k(1.0, Vector::Ones(2));
    Matrix a(2, 3), b(2, 2);
    a.setZero();
    b.setZero();
    CHECK_THROWS_WITH_AS(k.gram(a, b), doctest::Contains("column"), Error);
    Matrix c(2, 3);
    c.setZero();
    CHECK_THROWS_AS(k.gram(a, c), Error);
}

TEST_CASE("gram symmetry and diagonal on shared inputs") {
    Rng rng(11);
    const Matrix a = rng.normal_matrix(6, 3);
    const ArdKernel k = testutil::random_ard(3, rng.stream(1));
    const Matrix g = k.gram(a, a);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Index i = 0; i < 6; ++i) CHECK(g(i, i) == k.variance);
}

TEST_CASE("gram_gradients: variance slab is k/variance and w slab vanishes on the diagonal") {
    Rng rng(5);
    const Matrix a = rng.normal_matrix(4, 2);
    const ArdKernel k = testutil::random_ard(2, rng.stream(1));
    const Matrix g = k.gram(a, a);
    const GramGradients gg = k.gram_gradients(a, a);
    CHECK((gg.params[0] - g / k.variance).cwiseAbs().maxCoeff() < 1e-14);
    for (Index q = 0; q < 2; ++q)
        for (Index i = 0; i < 4; ++i) CHECK(gg.params[1 + q](i, i) == 0.0);
}

TEST_CASE("kernel gradients match central finite differences over 100 trials") {
    int trials = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const Index n = 3, m = 4, q = 2;
        const Matrix a = rng.stream(0).normal_matrix(n, q);
        const Matrix b = rng.stream(1).normal_matrix(m, q);
        ArdKernel k = testutil::random_ard(q, rng.stream(2));
        const GramGradients gg = k.gram_gradients(a, b);

        const double h = 1e-6;
        auto check_entry = [&](double analytic, const std::function<double(double)>& f, double x) {
            const double numeric = testutil::central_diff(f, x, h * std::max(1.0, std::abs(x)));
            CHECK(close_rel(analytic, numeric, 1e-5, 1e-9));
        };

        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) {
                check_entry(gg.params[0](i, j), [&](double v) {
                    ArdKernel kk = k;
                    kk.variance = v;
                    return kk.gram(a, b)(i, j);
                }, k.variance);
                for (Index w = 0; w < q; ++w)
                    check_entry(gg.params[1 + static_cast<std::size_t>(w)](i, j), [&](double v) {
                        ArdKernel kk = k;
                        kk.weights[w] = v;
                        return kk.gram(a, b)(i, j);
                    }, k.weights[w]);
                for (Index w = 0; w < q; ++w) {
                    check_entry(gg.a_inputs[static_cast<std::size_t>(w)](i, j), [&](double v) {
                        Matrix aa = a;
                        aa(i, w) = v;
                        return k.gram(aa, b)(i, j);
                    }, a(i, w));
                    check_entry(gg.b_inputs[static_cast<std::size_t>(w)](i, j), [&](double v) {
                        Matrix bb = b;
                        bb(j, w) = v;
                        return k.gram(a, bb)(i, j);
                    }, b(j, w));
                }
            }
        ++trials;
    }
    CHECK(trials == 100);
}

TEST_CASE("gram_vjp agrees with the dense jacobians") {
    Rng rng(17);
    const Matrix a = rng.stream(0).normal_matrix(5, 3);
    const Matrix b = rng.stream(1).normal_matrix(4, 3);
    const ArdKernel k = testutil::random_ard(3, rng.stream(2));
    const Matrix seed = rng.stream(3).normal_matrix(5, 4);

    const GramGradients gg = k.gram_gradients(a, b);
    const GramAdjoint adj = k.gram_vjp(a, b, seed);
    for (Index p = 0; p < k.param_count(); ++p)
        CHECK(close_rel(adj.params[p], seed.cwiseProduct(gg.params[static_cast<std::size_t>(p)]).sum(), 1e-12));
    for (Index q = 0; q < 3; ++q) {
        const Matrix sa = seed.cwiseProduct(gg.a_inputs[static_cast<std::size_t>(q)]);
        const Matrix sb = seed.cwiseProduct(gg.b_inputs[static_cast<std::size_t>(q)]);
        for (Index i = 0; i < 5; ++i) CHECK(close_rel(adj.a(i, q), sa.row(i).sum(), 1e-12));
        for (Index j = 0; j < 4; ++j) CHECK(close_rel(adj.b(j, q), sb.col(j).sum(), 1e-12));
    }
}

TEST_CASE("PSD property over random inputs and hyperparameters") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed + 1000);
        const Index n = 8, q = 3;
        const Matrix a = rng.stream(0).normal_matrix(n, q);
        const ArdKernel k = testutil::random_ard(q, rng.stream(1));
        const Matrix g = k.gram(a, a);
        Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * g.trace());
    }
}

TEST_CASE("monotone relevance: off-diagonal entries never increase in any weight") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 2000);
        const Matrix a = rng.stream(0).normal_matrix(5, 2);
        ArdKernel k = testutil::random_ard(2, rng.stream(1));
        const Matrix before = k.gram(a, a);
        for (Index w = 0; w < 2; ++w) {
            ArdKernel bumped = k;
            bumped.weights[w] += 0.3 + rng.uniform();
            const Matrix after = bumped.gram(a, a);
            for (Index i = 0; i < 5; ++i)
                for (Index j = 0; j < 5; ++j)
                    if (i != j) CHECK(after(i, j) <= before(i, j) + 1e-15);
        }
    }
}

TEST_CASE("linear and sum kernels cover the toy generator needs") {
    Rng rng(77);
    const Matrix a = rng.stream(0).normal_matrix(4, 1);
    const Matrix b = rng.stream(1).normal_matrix(3, 1);
    LinearKernel lin(2.0, 1);
    CHECK(close_rel(lin.gram(a, b)(1, 2), 2.0 * a(1, 0) * b(2, 0), 1e-14));

    SumKernel sum;
    sum.add(std::make_unique<LinearKernel>(2.0, 1));
    sum.add(std::make_unique<ArdKernel>(1.5, Vector::Ones(1)));
    const Matrix g = sum.gram(a, b);
    ArdKernel se(1.5, Vector::Ones(1));
    CHECK((g - lin.gram(a, b) - se.gram(a, b)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(sum.param_count() == 3);

    const Matrix seed = rng.stream(2).normal_matrix(4, 3);
    const GramAdjoint adj = sum.gram_vjp(a, b, seed);
    const double h = 1e-6;
    Vector p0 = sum.params();
    for (Index i = 0; i < 3; ++i) {
        const double numeric = testutil::central_diff([&](double v) {
            SumKernel s2 = sum;
            Vector p = p0;
            p[i] = v;
            s2.set_params(p);
            return seed.cwiseProduct(s2.gram(a, b)).sum();
        }, p0[i], h);
        CHECK(close_rel(adj.params[i], numeric, 1e-5, 1e-9));
    }
}

TEST_CASE("jitter_cholesky: identity needs no jitter") {
    const CholeskyResult r = jitter_cholesky(Matrix::Identity(4, 4));
    CHECK(r.jitter == 0.0);
    CHECK((r.lower() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jitter_cholesky: singular PSD rank-1 succeeds with nonzero jitter") {
    Vector v(3);
    v << 1.0, 2.0, -1.0;
    const Matrix k = v * v.transpose();
    const CholeskyResult r = jitter_cholesky(k, "rank1");
    CHECK(r.jitter > 0.0);
    const Matrix rec = r.lower() * r.lower().transpose();
    CHECK((rec - k).cwiseAbs().maxCoeff() <= r.jitter * 1.001 + 1e-12);
}

TEST_CASE("jitter_cholesky: wishart-style matrix reconstructs within 1e-8") {
    Rng rng(9);
    const Matrix g = rng.normal_matrix(5, 7);
    const Matrix k = g * g.transpose();
    const CholeskyResult r = jitter_cholesky(k, "wishart");
    CHECK(r.jitter == 0.0);
    CHECK((r.lower() * r.lower().transpose() - k).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("jitter_cholesky rejects asymmetric input") {
    Matrix k(2, 2);
    k << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(jitter_cholesky(k), Error);
}

TEST_CASE("jitter_cholesky names the matrix when it fails at the cap") {
    Matrix k = -Matrix::Identity(3, 3);
    CHECK_THROWS_WITH_AS(jitter_cholesky(k, "bad_matrix"), doctest::Contains("bad_matrix"), NumericalError);
}
