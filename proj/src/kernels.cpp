#include "deepgp/kernels.hpp"

#include <cmath>

namespace deepgp {

void Kernel::check_inputs(const Matrix& a, const Matrix& b, const char* who) const {
    require(a.cols() == b.cols(), who, ": input column counts differ (", a.cols(), " vs ", b.cols(), ")");
    const Index want = input_dim();
    require(want == 0 || a.cols() == want, who, ": inputs have ", a.cols(), " columns but kernel expects ", want);
}

// ---------------------------------------------------------------------------
// ArdKernel

ArdKernel::ArdKernel(double variance_, Vector weights_) : variance(variance_), weights(std::move(weights_)) {
    validate();
}

void ArdKernel::validate() const {
    require(variance > 0.0, "ArdKernel: variance must be positive, got ", variance);
    require(weights.size() >= 1, "ArdKernel: needs at least one weight");
    for (Index q = 0; q < weights.size(); ++q)
        require(weights[q] >= 0.0, "ArdKernel: weight ", q, " is negative (", weights[q], ")");
}

std::vector<std::string> ArdKernel::param_names() const {
    std::vector<std::string> names{"variance"};
    for (Index q = 0; q < weights.size(); ++q) names.push_back(cat("weight_", q));
    return names;
}

Vector ArdKernel::params() const {
    Vector p(1 + weights.size());
    p[0] = variance;
    p.tail(weights.size()) = weights;
    return p;
}

void ArdKernel::set_params(const Vector& p) {
    require(p.size() == 1 + weights.size(), "ArdKernel::set_params: expected ", 1 + weights.size(), " values");
    variance = p[0];
    weights = p.tail(weights.size());
    validate();
}

double ArdKernel::value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
    double e = 0.0;
    for (Index q = 0; q < weights.size(); ++q) {
        const double d = x[q] - y[q];
        e += weights[q] * d * d;
    }
    return variance * std::exp(-0.5 * e);
}

Matrix ArdKernel::gram(const Matrix& a, const Matrix& b) const {
    check_inputs(a, b, "ArdKernel::gram");
    validate();
    // Accumulate weighted squared differences dimension by dimension. The
    // expansion trick (|a|^2 + |b|^2 - 2ab) is faster but loses the exact
    // zero exponent at coincident points; exactness of k(x,x) = variance is
    // a contract here.
    Matrix e = Matrix::Zero(a.rows(), b.rows());
    for (Index q = 0; q < weights.size(); ++q) {
        if (weights[q] == 0.0) continue;
        const auto diff = a.col(q).replicate(1, b.rows()).rowwise() - b.col(q).transpose();
        e.noalias() += weights[q] * diff.array().square().matrix();
    }
    return variance * (-0.5 * e.array()).exp();
}

GramGradients ArdKernel::gram_gradients(const Matrix& a, const Matrix& b) const {
    const Matrix k = gram(a, b);
    GramGradients g;
    g.params.push_back(k / variance);
    for (Index q = 0; q < weights.size(); ++q) {
        const Matrix diff = a.col(q).replicate(1, b.rows()).rowwise() - b.col(q).transpose();
        g.params.push_back((-0.5 * diff.array().square() * k.array()).matrix());
        g.a_inputs.push_back((-weights[q] * diff.array() * k.array()).matrix());
        g.b_inputs.push_back((weights[q] * diff.array() * k.array()).matrix());
    }
    return g;
}

GramAdjoint ArdKernel::gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const {
    const Matrix k = gram(a, b);
    require(seed.rows() == k.rows() && seed.cols() == k.cols(), "ArdKernel::gram_vjp: seed shape mismatch");
    const Matrix e = seed.cwiseProduct(k);
    GramAdjoint adj;
    adj.params = Vector::Zero(param_count());
    adj.a = Matrix::Zero(a.rows(), a.cols());
    adj.b = Matrix::Zero(b.rows(), b.cols());
    adj.params[0] = e.sum() / variance;
    for (Index q = 0; q < weights.size(); ++q) {
        const Matrix diff = a.col(q).replicate(1, b.rows()).rowwise() - b.col(q).transpose();
        adj.params[1 + q] = -0.5 * diff.cwiseProduct(diff).cwiseProduct(e).sum();
        const Matrix ed = e.cwiseProduct(diff);
        adj.a.col(q) = -weights[q] * ed.rowwise().sum();
        adj.b.col(q) = weights[q] * ed.colwise().sum().transpose();
    }
    return adj;
}

Vector ArdKernel::lengthscales() const {
    Vector l(weights.size());
    for (Index q = 0; q < weights.size(); ++q)
        l[q] = weights[q] > 0.0 ? 1.0 / std::sqrt(weights[q]) : std::numeric_limits<double>::infinity();
    return l;
}

ArdKernel ArdKernel::from_lengthscale(double variance, double lengthscale, Index dims) {
    require(lengthscale > 0.0, "ArdKernel::from_lengthscale: lengthscale must be positive");
    return ArdKernel(variance, Vector::Constant(dims, 1.0 / (lengthscale * lengthscale)));
}

// ---------------------------------------------------------------------------
// LinearKernel

LinearKernel::LinearKernel(double variance_, Index dims_) : variance(variance_), dims(dims_) {
    require(variance > 0.0, "LinearKernel: variance must be positive, got ", variance);
}

Vector LinearKernel::params() const {
    Vector p(1);
    p[0] = variance;
    return p;
}

void LinearKernel::set_params(const Vector& p) {
    require(p.size() == 1, "LinearKernel::set_params: expected 1 value");
    variance = p[0];
    require(variance > 0.0, "LinearKernel: variance must be positive, got ", variance);
}

double LinearKernel::value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
    return variance * x.dot(y);
}

Matrix LinearKernel::gram(const Matrix& a, const Matrix& b) const {
    check_inputs(a, b, "LinearKernel::gram");
    return variance * a * b.transpose();
}

GramGradients LinearKernel::gram_gradients(const Matrix& a, const Matrix& b) const {
    check_inputs(a, b, "LinearKernel::gram_gradients");
    GramGradients g;
    g.params.push_back(a * b.transpose());
    for (Index q = 0; q < a.cols(); ++q) {
        g.a_inputs.push_back(variance * b.col(q).transpose().replicate(a.rows(), 1));
        g.b_inputs.push_back(variance * a.col(q).replicate(1, b.rows()));
    }
    return g;
}

GramAdjoint LinearKernel::gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const {
    check_inputs(a, b, "LinearKernel::gram_vjp");
    GramAdjoint adj;
    adj.params = Vector::Zero(1);
    adj.params[0] = seed.cwiseProduct(a * b.transpose()).sum();
    adj.a = variance * seed * b;
    adj.b = variance * seed.transpose() * a;
    return adj;
}

// ---------------------------------------------------------------------------
// SumKernel

SumKernel::SumKernel(const SumKernel& other) {
    for (const auto& p : other.parts_) parts_.push_back(p->clone());
}

SumKernel& SumKernel::operator=(const SumKernel& other) {
    if (this == &other) return *this;
    parts_.clear();
    for (const auto& p : other.parts_) parts_.push_back(p->clone());
    return *this;
}

SumKernel::SumKernel(std::vector<std::unique_ptr<Kernel>> parts) : parts_(std::move(parts)) {}

void SumKernel::add(std::unique_ptr<Kernel> part) {
    if (!parts_.empty() && part->input_dim() != 0 && input_dim() != 0)
        require(part->input_dim() == input_dim(), "SumKernel: parts must share an input dimension");
    parts_.push_back(std::move(part));
}

Index SumKernel::input_dim() const {
    for (const auto& p : parts_)
        if (p->input_dim() != 0) return p->input_dim();
    return 0;
}

Index SumKernel::param_count() const {
    Index n = 0;
    for (const auto& p : parts_) n += p->param_count();
    return n;
}

std::vector<std::string> SumKernel::param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < parts_.size(); ++i)
        for (const auto& n : parts_[i]->param_names()) names.push_back(cat("part", i, ".", n));
    return names;
}

Vector SumKernel::params() const {
    Vector p(param_count());
    Index at = 0;
    for (const auto& part : parts_) {
        p.segment(at, part->param_count()) = part->params();
        at += part->param_count();
    }
    return p;
}

void SumKernel::set_params(const Vector& p) {
    require(p.size() == param_count(), "SumKernel::set_params: expected ", param_count(), " values");
    Index at = 0;
    for (auto& part : parts_) {
        part->set_params(p.segment(at, part->param_count()));
        at += part->param_count();
    }
}

double SumKernel::value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
    double v = 0.0;
    for (const auto& p : parts_) v += p->value(x, y);
    return v;
}

Matrix SumKernel::gram(const Matrix& a, const Matrix& b) const {
    require(!parts_.empty(), "SumKernel::gram: no parts");
    check_inputs(a, b, "SumKernel::gram");
    Matrix k = Matrix::Zero(a.rows(), b.rows());
    for (const auto& p : parts_) k += p->gram(a, b);
    return k;
}

GramGradients SumKernel::gram_gradients(const Matrix& a, const Matrix& b) const {
    require(!parts_.empty(), "SumKernel::gram_gradients: no parts");
    GramGradients g;
    for (Index q = 0; q < a.cols(); ++q) {
        g.a_inputs.push_back(Matrix::Zero(a.rows(), b.rows()));
        g.b_inputs.push_back(Matrix::Zero(a.rows(), b.rows()));
    }
    for (const auto& p : parts_) {
        GramGradients sub = p->gram_gradients(a, b);
        for (auto& m : sub.params) g.params.push_back(std::move(m));
        for (Index q = 0; q < a.cols(); ++q) {
            g.a_inputs[static_cast<std::size_t>(q)] += sub.a_inputs[static_cast<std::size_t>(q)];
            g.b_inputs[static_cast<std::size_t>(q)] += sub.b_inputs[static_cast<std::size_t>(q)];
        }
    }
    return g;
}

GramAdjoint SumKernel::gram_vjp(const Matrix& a, const Matrix& b, const Matrix& seed) const {
    require(!parts_.empty(), "SumKernel::gram_vjp: no parts");
    GramAdjoint adj;
    adj.params = Vector::Zero(param_count());
    adj.a = Matrix::Zero(a.rows(), a.cols());
    adj.b = Matrix::Zero(b.rows(), b.cols());
    Index at = 0;
    for (const auto& p : parts_) {
        GramAdjoint sub = p->gram_vjp(a, b, seed);
        adj.params.segment(at, p->param_count()) = sub.params;
        adj.a += sub.a;
        adj.b += sub.b;
        at += p->param_count();
    }
    return adj;
}

// ---------------------------------------------------------------------------

Matrix gram(const Kernel& kernel, const Matrix& a, const Matrix& b) { return kernel.gram(a, b); }

GramGradients gram_gradients(const Kernel& kernel, const Matrix& a, const Matrix& b) {
    return kernel.gram_gradients(a, b);
}

double CholeskyResult::log_det() const {
    return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

Matrix CholeskyResult::inverse() const {
    const Index n = llt.matrixL().rows();
    return llt.solve(Matrix::Identity(n, n));
}

namespace {

bool factor_ok(const Eigen::LLT<Matrix>& llt, double scale) {
    if (llt.info() != Eigen::Success) return false;
    // Eigen may report success on a semidefinite matrix with a ~zero pivot;
    // such a factor is useless for solves.
    const Vector d = Matrix(llt.matrixL()).diagonal();
    return d.allFinite() && d.minCoeff() > 1e-12 * std::sqrt(std::max(scale, 1e-300));
}

}  // namespace

CholeskyResult jitter_cholesky(const Matrix& k, const std::string& label) {
    require(k.rows() == k.cols(), "jitter_cholesky(", label, "): matrix is not square");
    require<NumericalError>(k.allFinite(), "jitter_cholesky(", label, "): matrix has non-finite entries");
    const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
    const double scale = std::max(k.cwiseAbs().maxCoeff(), 1e-300);
    require(asym <= 1e-8 * scale, "jitter_cholesky(", label, "): matrix is not symmetric (max asymmetry ", asym, ")");

    const Matrix sym = 0.5 * (k + k.transpose());
    double base = sym.diagonal().mean();
    if (!(base > 0.0)) base = 1.0;

    CholeskyResult out;
    out.llt.compute(sym);
    out.attempts = 1;
    if (factor_ok(out.llt, base)) {
        out.jitter = 0.0;
        return out;
    }
    double eps = 1e-6 * base;
    const double cap = 1e-1 * base;
    while (eps <= cap * (1.0 + 1e-12)) {
        ++out.attempts;
        out.llt.compute(sym + eps * Matrix::Identity(k.rows(), k.cols()));
        if (factor_ok(out.llt, base)) {
            out.jitter = eps;
            return out;
        }
        eps *= 10.0;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    throw NumericalError(cat("jitter_cholesky(", label, "): factorization failed at jitter cap ", cap,
                             "; eigenvalue range [", lo, ", ", hi, "], condition estimate ",
                             hi / std::max(std::abs(lo), 1e-300)));
}

}  // namespace deepgp
