#pragma once

#include <memory>
#include <string>
#include <vector>

#include "deepgp/common.hpp"

namespace deepgp {

// Per-entry Jacobians of a Gram matrix. params[p](n,m) = dK(n,m)/dtheta_p.
// a_inputs[q](n,m) = dK(n,m)/dA(n,q), b_inputs[q](n,m) = dK(n,m)/dB(m,q).
struct GramGradients {
    std::vector<Matrix> params;
    std::vector<Matrix> a_inputs;
    std::vector<Matrix> b_inputs;
};

// Gradient of sum(seed .* K) with respect to hyperparameters and inputs.
struct GramAdjoint {
    Vector params;
    Matrix a;
    Matrix b;
};

class Kernel {
public:
    virtual ~Kernel() = default;

    // 0 means any input dimension is accepted.
    virtual Index input_dim() const = 0;
    virtual Index param_count() const = 0;
    virtual std::vector<std::string> param_names() const = 0;
    // All hyperparameters are positive scalars.
    virtual Vector params() const = 0;
    virtual void set_params(const Vector& p) = 0;

    virtual double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const = 0;
    virtual Matrix gram(const Matrix& a, const Matrix& b) const = 0;
    virtual GramGradients gram_gradients(const Matrix& a, const Matrix& b) const = 0;
    virtual GramAdjoint gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const = 0;

    virtual std::unique_ptr<Kernel> clone() const = 0;

protected:
    void check_inputs(const Matrix& a, const Matrix& b, const char* who) const;
};

// Exponentiated quadratic with one inverse-squared-lengthscale weight per
// input dimension: k(x,x') = variance * exp(-0.5 * sum_q w_q (x_q - x'_q)^2).
// A weight driven to zero switches the corresponding dimension off.
struct ArdKernel final : public Kernel {
    double variance = 1.0;
    Vector weights;

    ArdKernel() = default;
    ArdKernel(double variance_, Vector weights_);

    void validate() const;

    Index input_dim() const override { return weights.size(); }
    Index param_count() const override { return 1 + weights.size(); }
    std::vector<std::string> param_names() const override;
    Vector params() const override;
    void set_params(const Vector& p) override;

    double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const override;
    Matrix gram(const Matrix& a, const Matrix& b) const override;
    GramGradients gram_gradients(const Matrix& a, const Matrix& b) const override;
    GramAdjoint gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const override;

    std::unique_ptr<Kernel> clone() const override { return std::make_unique<ArdKernel>(*this); }

    // Display-only conversion; storage stays in weight form.
    Vector lengthscales() const;
    static ArdKernel from_lengthscale(double variance, double lengthscale, Index dims);
};

// k(x,x') = variance * x.dot(x'). Used by the toy-data generators only.
struct LinearKernel final : public Kernel {
    double variance = 1.0;
    Index dims = 0;  // 0 = any

    LinearKernel() = default;
    explicit LinearKernel(double variance_, Index dims_ = 0);

    Index input_dim() const override { return dims; }
    Index param_count() const override { return 1; }
    std::vector<std::string> param_names() const override { return {"variance"}; }
    Vector params() const override;
    void set_params(const Vector& p) override;

    double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const override;
    Matrix gram(const Matrix& a, const Matrix& b) const override;
    GramGradients gram_gradients(const Matrix& a, const Matrix& b) const override;
    GramAdjoint gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const override;

    std::unique_ptr<Kernel> clone() const override { return std::make_unique<LinearKernel>(*this); }
};

// Pointwise sum of kernels over the same input space.
class SumKernel final : public Kernel {
public:
    SumKernel() = default;
    SumKernel(const SumKernel& other);
    SumKernel& operator=(const SumKernel& other);
    explicit SumKernel(std::vector<std::unique_ptr<Kernel>> parts);

    void add(std::unique_ptr<Kernel> part);
    const std::vector<std::unique_ptr<Kernel>>& parts() const { return parts_; }

    Index input_dim() const override;
    Index param_count() const override;
    std::vector<std::string> param_names() const override;
    Vector params() const override;
    void set_params(const Vector& p) override;

    double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const override;
    Matrix gram(const Matrix& a, const Matrix& b) const override;
    GramGradients gram_gradients(const Matrix& a, const Matrix& b) const override;
    GramAdjoint gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const override;

    std::unique_ptr<Kernel> clone() const override { return std::make_unique<SumKernel>(*this); }

private:
    std::vector<std::unique_ptr<Kernel>> parts_;
};

Matrix gram(const Kernel& kernel, const Matrix& a, const Matrix& b);
GramGradients gram_gradients(const Kernel& kernel, const Matrix& a, const Matrix& b);

struct CholeskyResult {
    Eigen::LLT<Matrix> llt;
    double jitter = 0.0;   // effective diagonal boost actually applied
    int attempts = 1;

    Matrix lower() const { return Matrix(llt.matrixL()); }
    double log_det() const;
    Matrix solve(const Matrix& rhs) const { return llt.solve(rhs); }
    Matrix inverse() const;
};

// Factor K + eps*I with escalating eps. First attempt is eps = 0; afterwards
// eps = 1e-6 * mean(diag K), escalating x10 up to the cap of
// 1e-1 * mean(diag K) (six escalations). Failure past the cap throws
// NumericalError with a condition estimate.
CholeskyResult jitter_cholesky(const Matrix& k, const std::string& label = "matrix");

}  // namespace deepgp
