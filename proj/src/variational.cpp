#include "deepgp/variational.hpp"

#include <cmath>

namespace deepgp {

DiagonalGaussianField::DiagonalGaussianField(Matrix means_, Matrix variances_)
    : means(std::move(means_)), variances(std::move(variances_)) {
    validate();
}

void DiagonalGaussianField::validate() const {
    require(means.rows() == variances.rows() && means.cols() == variances.cols(),
            "DiagonalGaussianField: means ", means.rows(), "x", means.cols(), " vs variances ", variances.rows(), "x",
            variances.cols());
    require((variances.array() > 0.0).all(), "DiagonalGaussianField: variances must be strictly positive");
}

Matrix DiagonalGaussianField::second_moment() const {
    Matrix m = means * means.transpose();
    m.diagonal() += variances.rowwise().sum();
    return m;
}

namespace {

void check_psi_inputs(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing) {
    kernel.validate();
    q.validate();
    require(q.dims() == kernel.input_dim(), "psi_statistics: q has ", q.dims(), " dims but kernel expects ",
            kernel.input_dim());
    require(inducing.cols() == kernel.input_dim(), "psi_statistics: inducing inputs have ", inducing.cols(),
            " columns but kernel expects ", kernel.input_dim());
    require(inducing.rows() >= 1, "psi_statistics: need at least one inducing input");
}

}  // namespace

PsiStatistics psi_statistics(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing) {
    check_psi_inputs(kernel, q, inducing);
    const Index n_pts = q.points();
    const Index n_ind = inducing.rows();
    const Index dims = q.dims();
    const Vector& w = kernel.weights;

    PsiStatistics psi;
    psi.psi0 = static_cast<double>(n_pts) * kernel.variance;

    // Per-dimension factors are accumulated in the log domain; with tens of
    // dimensions the plain product underflows.
    const double log_var = std::log(kernel.variance);
    Matrix c1(n_pts, dims), log_c1(n_pts, dims), c2(n_pts, dims), log_c2(n_pts, dims);
    for (Index n = 0; n < n_pts; ++n) {
        for (Index q_i = 0; q_i < dims; ++q_i) {
            c1(n, q_i) = w[q_i] * q.variances(n, q_i) + 1.0;
            log_c1(n, q_i) = std::log(c1(n, q_i));
            c2(n, q_i) = 2.0 * w[q_i] * q.variances(n, q_i) + 1.0;
            log_c2(n, q_i) = std::log(c2(n, q_i));
        }
    }

    psi.psi1.resize(n_pts, n_ind);
    for (Index n = 0; n < n_pts; ++n) {
        for (Index k = 0; k < n_ind; ++k) {
            double log_t = log_var;
            for (Index q_i = 0; q_i < dims; ++q_i) {
                const double d = q.means(n, q_i) - inducing(k, q_i);
                log_t += -0.5 * log_c1(n, q_i) - 0.5 * w[q_i] * d * d / c1(n, q_i);
            }
            psi.psi1(n, k) = std::exp(log_t);
        }
    }

    psi.psi2 = Matrix::Zero(n_ind, n_ind);
    const double log_var2 = 2.0 * log_var;
    for (Index k = 0; k < n_ind; ++k) {
        for (Index kp = k; kp < n_ind; ++kp) {
            double cross = 0.0;  // - 1/4 sum_q w_q (xt_k - xt_k')^2
            for (Index q_i = 0; q_i < dims; ++q_i) {
                const double delta = inducing(k, q_i) - inducing(kp, q_i);
                cross += -0.25 * w[q_i] * delta * delta;
            }
            double total = 0.0;
            for (Index n = 0; n < n_pts; ++n) {
                double log_t = log_var2 + cross;
                for (Index q_i = 0; q_i < dims; ++q_i) {
                    const double mid = 0.5 * (inducing(k, q_i) + inducing(kp, q_i));
                    const double e = q.means(n, q_i) - mid;
                    log_t += -0.5 * log_c2(n, q_i) - w[q_i] * e * e / c2(n, q_i);
                }
                total += std::exp(log_t);
            }
            psi.psi2(k, kp) = total;
            psi.psi2(kp, k) = total;
        }
    }
    return psi;
}

PsiGradients psi_gradients(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing,
                           const PsiSeed& seed) {
    check_psi_inputs(kernel, q, inducing);
    const Index n_pts = q.points();
    const Index n_ind = inducing.rows();
    const Index dims = q.dims();
    const Vector& w = kernel.weights;
    const double variance = kernel.variance;

    const bool have1 = seed.psi1.size() > 0;
    const bool have2 = seed.psi2.size() > 0;
    if (have1)
        require(seed.psi1.rows() == n_pts && seed.psi1.cols() == n_ind, "psi_gradients: psi1 seed shape mismatch");
    if (have2)
        require(seed.psi2.rows() == n_ind && seed.psi2.cols() == n_ind, "psi_gradients: psi2 seed shape mismatch");

    PsiGradients g;
    g.d_weights = Vector::Zero(dims);
    g.d_means = Matrix::Zero(n_pts, dims);
    g.d_variances = Matrix::Zero(n_pts, dims);
    g.d_inducing = Matrix::Zero(n_ind, dims);

    // psi0 = N * variance: depends on the kernel variance only.
    g.d_variance = seed.psi0 * static_cast<double>(n_pts);

    const double log_var = std::log(variance);

    if (have1) {
        for (Index n = 0; n < n_pts; ++n) {
            for (Index k = 0; k < n_ind; ++k) {
                const double sw = seed.psi1(n, k);
                if (sw == 0.0) continue;
                double log_t = log_var;
                for (Index q_i = 0; q_i < dims; ++q_i) {
                    const double c = w[q_i] * q.variances(n, q_i) + 1.0;
                    const double d = q.means(n, q_i) - inducing(k, q_i);
                    log_t += -0.5 * std::log(c) - 0.5 * w[q_i] * d * d / c;
                }
                const double gv = sw * std::exp(log_t);
                g.d_variance += gv / variance;
                for (Index q_i = 0; q_i < dims; ++q_i) {
                    const double s = q.variances(n, q_i);
                    const double c = w[q_i] * s + 1.0;
                    const double d = q.means(n, q_i) - inducing(k, q_i);
                    g.d_weights[q_i] += gv * (-0.5 * s / c - 0.5 * d * d / (c * c));
                    const double dmu = gv * (-w[q_i] * d / c);
                    g.d_means(n, q_i) += dmu;
                    g.d_inducing(k, q_i) -= dmu;
                    g.d_variances(n, q_i) += gv * 0.5 * w[q_i] * (w[q_i] * d * d / c - 1.0) / c;
                }
            }
        }
    }

    if (have2) {
        const double log_var2 = 2.0 * log_var;
        for (Index k = 0; k < n_ind; ++k) {
            for (Index kp = k; kp < n_ind; ++kp) {
                const double sw = (k == kp) ? seed.psi2(k, k) : seed.psi2(k, kp) + seed.psi2(kp, k);
                if (sw == 0.0) continue;
                double cross = 0.0;
                for (Index q_i = 0; q_i < dims; ++q_i) {
                    const double delta = inducing(k, q_i) - inducing(kp, q_i);
                    cross += -0.25 * w[q_i] * delta * delta;
                }
                for (Index n = 0; n < n_pts; ++n) {
                    double log_t = log_var2 + cross;
                    for (Index q_i = 0; q_i < dims; ++q_i) {
                        const double c2 = 2.0 * w[q_i] * q.variances(n, q_i) + 1.0;
                        const double mid = 0.5 * (inducing(k, q_i) + inducing(kp, q_i));
                        const double e = q.means(n, q_i) - mid;
                        log_t += -0.5 * std::log(c2) - w[q_i] * e * e / c2;
                    }
                    const double gv = sw * std::exp(log_t);
                    g.d_variance += 2.0 * gv / variance;
                    for (Index q_i = 0; q_i < dims; ++q_i) {
                        const double s = q.variances(n, q_i);
                        const double c2 = 2.0 * w[q_i] * s + 1.0;
                        const double delta = inducing(k, q_i) - inducing(kp, q_i);
                        const double mid = 0.5 * (inducing(k, q_i) + inducing(kp, q_i));
                        const double e = q.means(n, q_i) - mid;
                        g.d_weights[q_i] += gv * (-s / c2 - 0.25 * delta * delta - e * e / (c2 * c2));
                        g.d_means(n, q_i) += gv * (-2.0 * w[q_i] * e / c2);
                        g.d_variances(n, q_i) += gv * w[q_i] * (2.0 * w[q_i] * e * e / c2 - 1.0) / c2;
                        g.d_inducing(k, q_i) += gv * (-0.5 * w[q_i] * delta + w[q_i] * e / c2);
                        g.d_inducing(kp, q_i) += gv * (0.5 * w[q_i] * delta + w[q_i] * e / c2);
                    }
                }
            }
        }
    }
    return g;
}

double entropy(const DiagonalGaussianField& q) {
    q.validate();
    constexpr double half_log_2pi_e = 1.4189385332046727;  // 0.5*log(2*pi*e)
    return q.variances.size() * half_log_2pi_e + 0.5 * q.variances.array().log().sum();
}

Matrix entropy_gradient_variances(const DiagonalGaussianField& q) { return 0.5 * q.variances.cwiseInverse(); }

double kl_to_standard_normal(const DiagonalGaussianField& q) {
    q.validate();
    const auto s = q.variances.array();
    return 0.5 * (s + q.means.array().square() - s.log() - 1.0).sum();
}

void kl_gradients(const DiagonalGaussianField& q, Matrix& d_means, Matrix& d_variances) {
    d_means = q.means;
    d_variances = 0.5 * (1.0 - q.variances.array().inverse()).matrix();
}

}  // namespace deepgp
