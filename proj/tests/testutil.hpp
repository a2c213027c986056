#pragma once

#include <cmath>
#include <functional>

#include "deepgp/bound.hpp"
#include "deepgp/rng.hpp"
#include "deepgp/variational.hpp"

namespace testutil {

using namespace deepgp;

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline bool close_rel(double a, double b, double tol, double floor = 1e-12) {
    return std::abs(a - b) <= std::max(tol * std::max(std::abs(a), std::abs(b)), floor);
}

// --------------------------------------------------------------------------
// Monte-Carlo oracle for the psi statistics; written directly from their
// definitions as expectations under q(X), independent of the analytic path.

struct McPsi {
    double psi0_mean = 0.0, psi0_se = 0.0;
    Matrix psi1_mean, psi1_se;
    Matrix psi2_mean, psi2_se;
};

inline McPsi mc_psi_oracle(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing,
                           int samples, std::uint64_t seed) {
    const Index n = q.points();
    const Index k = inducing.rows();
    Rng rng(seed);

    double s0 = 0.0, s0sq = 0.0;
    Matrix s1 = Matrix::Zero(n, k), s1sq = Matrix::Zero(n, k);
    Matrix s2 = Matrix::Zero(k, k), s2sq = Matrix::Zero(k, k);

    Matrix x(n, q.dims());
    for (int t = 0; t < samples; ++t) {
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < q.dims(); ++j)
                x(i, j) = q.means(i, j) + std::sqrt(q.variances(i, j)) * rng.normal();

        double draw0 = 0.0;
        for (Index i = 0; i < n; ++i) draw0 += kernel.value(x.row(i), x.row(i));
        s0 += draw0;
        s0sq += draw0 * draw0;

        const Matrix kx = kernel.gram(x, inducing);  // n x k
        s1 += kx;
        s1sq += kx.cwiseProduct(kx);
        const Matrix draw2 = kx.transpose() * kx;  // sum_n outer products
        s2 += draw2;
        s2sq += draw2.cwiseProduct(draw2);
    }

    const double t = static_cast<double>(samples);
    McPsi out;
    out.psi0_mean = s0 / t;
    out.psi0_se = std::sqrt(std::max(s0sq / t - out.psi0_mean * out.psi0_mean, 0.0) / t);
    out.psi1_mean = s1 / t;
    out.psi1_se = ((s1sq / t - out.psi1_mean.cwiseProduct(out.psi1_mean)).cwiseMax(0.0) / t).cwiseSqrt();
    out.psi2_mean = s2 / t;
    out.psi2_se = ((s2sq / t - out.psi2_mean.cwiseProduct(out.psi2_mean)).cwiseMax(0.0) / t).cwiseSqrt();
    return out;
}

// --------------------------------------------------------------------------
// Straight-line reimplementation of the collapsed term, writing the formula
// exactly once with dense inverses and explicit per-column sums. No shared
// code with the production path beyond the psi definitions (recomputed here
// entrywise without log-domain accumulation).

inline double oracle_psi1_entry(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing,
                                Index n, Index k) {
    double value = kernel.variance;
    for (Index j = 0; j < q.dims(); ++j) {
        const double w = kernel.weights[j];
        const double c = w * q.variances(n, j) + 1.0;
        const double d = q.means(n, j) - inducing(k, j);
        value *= std::exp(-0.5 * w * d * d / c) / std::sqrt(c);
    }
    return value;
}

inline double oracle_psi2_entry(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing,
                                Index k, Index kp) {
    double total = 0.0;
    for (Index n = 0; n < q.points(); ++n) {
        double value = kernel.variance * kernel.variance;
        for (Index j = 0; j < q.dims(); ++j) {
            const double w = kernel.weights[j];
            const double c = 2.0 * w * q.variances(n, j) + 1.0;
            const double delta = inducing(k, j) - inducing(kp, j);
            const double mid = 0.5 * (inducing(k, j) + inducing(kp, j));
            const double e = q.means(n, j) - mid;
            value *= std::exp(-0.25 * w * delta * delta - w * e * e / c) / std::sqrt(c);
        }
        total += value;
    }
    return total;
}

// out_second_moment_trace = tr(<Y Y^T>) (for a leaf this is |Y|_F^2); the
// quadratic uses the output means only.
inline double oracle_collapsed_term(const ArdKernel& kernel, const Matrix& inducing, double noise_variance,
                                    const DiagonalGaussianField& q_in, const Matrix& out_means,
                                    double out_second_moment_trace) {
    const Index n = q_in.points();
    const Index k = inducing.rows();
    const Index d = out_means.cols();
    const double beta = 1.0 / noise_variance;

    const double psi0 = static_cast<double>(n) * kernel.variance;
    Matrix psi1(n, k), psi2(k, k);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < k; ++j) psi1(i, j) = oracle_psi1_entry(kernel, q_in, inducing, i, j);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) psi2(i, j) = oracle_psi2_entry(kernel, q_in, inducing, i, j);

    Matrix kmm(k, k);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) kmm(i, j) = kernel.value(inducing.row(i), inducing.row(j));
    for (Index i = 0; i < k; ++i) kmm(i, i) += kInducingJitterScale * kernel.variance;

    const Matrix a = kmm + beta * psi2;
    const Matrix a_inv = a.inverse();
    const Matrix k_inv = kmm.inverse();
    const double logdet_k = std::log(kmm.determinant());
    const double logdet_a = std::log(a.determinant());

    double value = 0.0;
    for (Index col = 0; col < d; ++col) {
        const Vector y = out_means.col(col);
        value += -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI / beta);
        value += 0.5 * logdet_k - 0.5 * logdet_a;
        value += 0.5 * beta * beta * y.dot(psi1 * (a_inv * (psi1.transpose() * y)));
        value += -0.5 * beta * psi0 + 0.5 * beta * (k_inv * psi2).trace();
    }
    value += -0.5 * beta * out_second_moment_trace;
    return value;
}

// --------------------------------------------------------------------------
// Seeded model builders

inline DiagonalGaussianField random_field(Index n, Index q, Rng rng, double mean_scale = 1.0,
                                          double var_lo = 0.05, double var_hi = 0.6) {
    DiagonalGaussianField f;
    f.means = mean_scale * rng.normal_matrix(n, q);
    f.variances = Matrix(n, q);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < q; ++j) f.variances(i, j) = var_lo + (var_hi - var_lo) * rng.uniform();
    return f;
}

inline ArdKernel random_ard(Index q, Rng rng, double var_lo = 0.5, double var_hi = 2.0) {
    Vector w(q);
    for (Index j = 0; j < q; ++j) w[j] = 0.2 + 1.5 * rng.uniform();
    return ArdKernel(var_lo + (var_hi - var_lo) * rng.uniform(), w);
}

// Small seeded deep model: N points, hidden dims given bottom-up (last entry
// is the parent), one group per layer, D observed columns.
inline DeepModel random_model(Index n, std::vector<Index> dims, Index k, Index d, std::uint64_t seed) {
    Rng rng(seed);
    DeepModel model;
    model.data = rng.stream(1).normal_matrix(n, d);
    model.output_offset = Vector::Zero(d);

    const Index depth = static_cast<Index>(dims.size());
    model.layers.resize(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i) {
        auto& layer = model.layers[static_cast<std::size_t>(i)];
        const Index q_in = dims[static_cast<std::size_t>(i)];
        const Index d_out = (i == 0) ? d : dims[static_cast<std::size_t>(i - 1)];
        GpGroup grp;
        grp.columns.resize(static_cast<std::size_t>(d_out));
        for (Index c = 0; c < d_out; ++c) grp.columns[static_cast<std::size_t>(c)] = c;
        grp.kernel = random_ard(q_in, rng.stream(10 + static_cast<std::uint64_t>(i)));
        grp.inducing = rng.stream(20 + static_cast<std::uint64_t>(i)).normal_matrix(k, q_in);
        grp.noise_variance = 0.05 + 0.1 * rng.stream(30 + static_cast<std::uint64_t>(i)).uniform();
        layer.groups.push_back(std::move(grp));
        if (i > 0)
            layer.q_out =
                random_field(n, d_out, rng.stream(40 + static_cast<std::uint64_t>(i)), 1.0, 0.1, 0.5);
    }
    model.q_parent = random_field(n, dims.back(), rng.stream(50), 1.0, 0.1, 0.5);
    model.validate();
    return model;
}

}  // namespace testutil
