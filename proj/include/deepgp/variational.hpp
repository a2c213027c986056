#pragma once

#include "deepgp/common.hpp"
#include "deepgp/kernels.hpp"

namespace deepgp {

// Gaussian variational distribution over an N x Q latent array, factorized
// per entry: x_{nq} ~ N(means(n,q), variances(n,q)).
struct DiagonalGaussianField {
    Matrix means;      // N x Q
    Matrix variances;  // N x Q, strictly positive

    DiagonalGaussianField() = default;
    DiagonalGaussianField(Matrix means_, Matrix variances_);

    Index points() const { return means.rows(); }
    Index dims() const { return means.cols(); }
    bool empty() const { return means.size() == 0; }
    void validate() const;

    // <XX^T> = sum_q [mu_q mu_q^T + S_q]. Dense N x N; for tests and small
    // models only, the bound terms never form it.
    Matrix second_moment() const;
};

// Expectations of kernel quantities under q(X) for inducing inputs Xtilde:
//   psi0        = sum_n E[k(x_n, x_n)]
//   psi1(n,k)   = E[k(x_n, xt_k)]
//   psi2(k,k')  = sum_n E[k(xt_k, x_n) k(x_n, xt_k')]
struct PsiStatistics {
    double psi0 = 0.0;
    Matrix psi1;  // N x K
    Matrix psi2;  // K x K, symmetric PSD
};

// Adjoint weights for psi_gradients: gradient of
// w0*psi0 + sum(w1 .* psi1) + sum(w2 .* psi2).
struct PsiSeed {
    double psi0 = 0.0;
    Matrix psi1;
    Matrix psi2;
};

struct PsiGradients {
    double d_variance = 0.0;
    Vector d_weights;    // Q
    Matrix d_means;      // N x Q
    Matrix d_variances;  // N x Q
    Matrix d_inducing;   // K x Q
};

PsiStatistics psi_statistics(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing);

// Gradient blocks mirror the parameters they refer to. Seed matrices may be
// unit vectors to extract single Jacobian rows, or downstream bound adjoints.
PsiGradients psi_gradients(const ArdKernel& kernel, const DiagonalGaussianField& q, const Matrix& inducing,
                           const PsiSeed& seed);

// sum_{n,q} 0.5*log(2*pi*e*S_{nq}), in nats.
double entropy(const DiagonalGaussianField& q);
Matrix entropy_gradient_variances(const DiagonalGaussianField& q);

// KL(q || N(0, I)) = 0.5*sum [S + mu^2 - log S - 1], in nats.
double kl_to_standard_normal(const DiagonalGaussianField& q);
void kl_gradients(const DiagonalGaussianField& q, Matrix& d_means, Matrix& d_variances);

}  // namespace deepgp
