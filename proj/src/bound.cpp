#include "deepgp/bound.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deepgp {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

Index LayerState::output_dim() const {
    Index n = 0;
    for (const auto& g : groups) n += static_cast<Index>(g.columns.size());
    return n;
}

const DiagonalGaussianField& DeepModel::input_of(Index layer) const {
    require(layer >= 0 && layer < depth(), "DeepModel: layer index ", layer, " out of range");
    if (layer + 1 < depth()) return layers[static_cast<std::size_t>(layer + 1)].q_out;
    return q_parent;
}

Index DeepModel::output_dim(Index layer) const {
    require(layer >= 0 && layer < depth(), "DeepModel: layer index ", layer, " out of range");
    return layer == 0 ? data.cols() : layers[static_cast<std::size_t>(layer)].q_out.dims();
}

void DeepModel::validate() const {
    require(!layers.empty(), "DeepModel: no layers");
    require(data.size() > 0, "DeepModel: no observations");
    q_parent.validate();
    require(q_parent.points() == points(), "DeepModel: q_parent has ", q_parent.points(), " rows, data has ",
            points());
    if (output_offset.size() > 0)
        require(output_offset.size() == data.cols(), "DeepModel: output_offset size mismatch");
    for (Index i = 0; i < depth(); ++i) {
        const auto& layer = layers[static_cast<std::size_t>(i)];
        require(!layer.groups.empty(), "DeepModel: layer ", i, " has no groups");
        if (i == 0) {
            require(layer.q_out.empty(), "DeepModel: leaf layer must not carry q_out");
        } else {
            layer.q_out.validate();
            require(layer.q_out.points() == points(), "DeepModel: layer ", i, " q_out row count mismatch");
        }
        const Index q_in = input_dim(i);
        const Index d_out = output_dim(i);
        std::vector<char> seen(static_cast<std::size_t>(d_out), 0);
        for (std::size_t g = 0; g < layer.groups.size(); ++g) {
            const auto& grp = layer.groups[g];
            require(!grp.columns.empty(), "DeepModel: layer ", i, " group ", g, " owns no columns");
            for (Index c : grp.columns) {
                require(c >= 0 && c < d_out, "DeepModel: layer ", i, " group ", g, " column ", c, " out of range");
                require(!seen[static_cast<std::size_t>(c)], "DeepModel: layer ", i, " column ", c,
                        " owned by two groups");
                seen[static_cast<std::size_t>(c)] = 1;
            }
            grp.kernel.validate();
            require(grp.kernel.input_dim() == q_in, "DeepModel: layer ", i, " group ", g, " kernel dimension ",
                    grp.kernel.input_dim(), " != input dimension ", q_in);
            require(grp.inducing.rows() >= 1, "DeepModel: layer ", i, " group ", g, " has no inducing inputs");
            require(grp.inducing.cols() == q_in, "DeepModel: layer ", i, " group ", g, " inducing inputs have ",
                    grp.inducing.cols(), " columns, expected ", q_in);
            require(grp.noise_variance > 0.0, "DeepModel: layer ", i, " group ", g, " noise variance must be > 0");
        }
        for (Index c = 0; c < d_out; ++c)
            require(seen[static_cast<std::size_t>(c)], "DeepModel: layer ", i, " column ", c, " not covered");
    }
}

double BoundReport::sum_of_parts() const {
    double s = std::accumulate(leaf_terms.begin(), leaf_terms.end(), 0.0);
    for (const auto& layer : mid_terms) s = std::accumulate(layer.begin(), layer.end(), s);
    s = std::accumulate(entropies.begin(), entropies.end(), s);
    return s - kl_parent;
}

// ---------------------------------------------------------------------------
// Flat GP marginal likelihood (dense baseline)

double gp_log_marginal(const Matrix& y, const Matrix& x, const Kernel& kernel, double noise_variance) {
    require(y.rows() == x.rows(), "gp_log_marginal: y has ", y.rows(), " rows, x has ", x.rows());
    require(noise_variance > 0.0, "gp_log_marginal: noise variance must be > 0");
    const Index n = x.rows();
    Matrix c = kernel.gram(x, x);
    c.diagonal().array() += noise_variance;
    const CholeskyResult chol = jitter_cholesky(c, "K_NN + noise");
    const Matrix alpha = chol.solve(y);
    double value = -0.5 * static_cast<double>(y.cols()) *
                   (static_cast<double>(n) * kLog2Pi + chol.log_det());
    value -= 0.5 * y.cwiseProduct(alpha).sum();
    return value;
}

GpMarginalGradients gp_log_marginal_gradients(const Matrix& y, const Matrix& x, const Kernel& kernel,
                                              double noise_variance) {
    require(y.rows() == x.rows(), "gp_log_marginal_gradients: row mismatch");
    const Index n = x.rows();
    const double d_cols = static_cast<double>(y.cols());
    Matrix c = kernel.gram(x, x);
    c.diagonal().array() += noise_variance;
    const CholeskyResult chol = jitter_cholesky(c, "K_NN + noise");
    const Matrix alpha = chol.solve(y);

    GpMarginalGradients out;
    out.value = -0.5 * d_cols * (static_cast<double>(n) * kLog2Pi + chol.log_det());
    out.value -= 0.5 * y.cwiseProduct(alpha).sum();

    // dF/dC = 0.5*(alpha alpha^T - D C^{-1})
    const Matrix seed = 0.5 * (alpha * alpha.transpose() - d_cols * chol.inverse());
    const GramAdjoint adj = kernel.gram_vjp(x, x, seed);
    out.d_kernel_params = adj.params;
    out.d_noise_variance = seed.trace();
    return out;
}

// ---------------------------------------------------------------------------
// Collapsed bound terms

namespace {

// Shared inputs for one collapsed term. out_means holds the group's output
// columns (observed Y or variational means); out_extra_trace adds the summed
// output variances for intermediate layers.
struct TermInputs {
    const ArdKernel& kernel;
    const Matrix& inducing;
    double noise_variance;
    const DiagonalGaussianField& q_in;
    Matrix out_means;
    double out_extra_trace;
};

struct TermGradients {
    double d_kernel_variance = 0.0;
    Vector d_kernel_weights;
    Matrix d_inducing;
    double d_noise_variance = 0.0;
    Matrix d_qin_means;
    Matrix d_qin_variances;
    Matrix d_out_means;
    double d_out_variance_each = 0.0;  // dT/dS_out(n,q), identical for all entries
};

double collapsed_term_impl(const TermInputs& in, TermGradients* grad) {
    require(in.noise_variance > 0.0, "collapsed term: noise variance must be > 0");
    const Index n = in.q_in.points();
    const Index d_out = in.out_means.cols();
    require(in.out_means.rows() == n, "collapsed term: output rows ", in.out_means.rows(), " != q_in points ", n);
    const double beta = 1.0 / in.noise_variance;
    const double d_cols = static_cast<double>(d_out);

    PsiStatistics psi = psi_statistics(in.kernel, in.q_in, in.inducing);
    psi.psi2 = 0.5 * (psi.psi2 + psi.psi2.transpose()).eval();

    const double base_jitter = kInducingJitterScale * in.kernel.variance;
    Matrix kmm = in.kernel.gram(in.inducing, in.inducing);
    kmm.diagonal().array() += base_jitter;
    const CholeskyResult chol_k = jitter_cholesky(kmm, "K_MM");
    Matrix a = kmm + beta * psi.psi2;
    if (chol_k.jitter > 0.0) a.diagonal().array() += chol_k.jitter;
    const CholeskyResult chol_a = jitter_cholesky(a, "K_MM + beta*Psi2");

    const Matrix c = psi.psi1.transpose() * in.out_means;  // K x Dg
    const Matrix w = chol_a.solve(c);
    const double quad = c.cwiseProduct(w).sum();
    const double s_yy = in.out_means.squaredNorm() + in.out_extra_trace;

    // tr(K^{-1} Psi2) with K including any jitter used by its factorization.
    const auto l_k = chol_k.llt.matrixL();
    const Matrix b = l_k.solve(psi.psi2);
    const Matrix b2 = l_k.solve(Matrix(b.transpose()));
    const double tr_ki_psi2 = b2.trace();

    const double value = -0.5 * static_cast<double>(n) * d_cols * (kLog2Pi + std::log(in.noise_variance)) +
                         0.5 * d_cols * (chol_k.log_det() - chol_a.log_det()) - 0.5 * beta * s_yy +
                         0.5 * beta * beta * quad - 0.5 * d_cols * beta * psi.psi0 +
                         0.5 * d_cols * beta * tr_ki_psi2;

    if (!grad) return value;

    const Matrix a_inv = chol_a.inverse();
    const Matrix k_inv = chol_k.inverse();
    const Matrix ki_p2_ki = k_inv * psi.psi2 * k_inv;

    const Matrix d_a = -0.5 * d_cols * a_inv - 0.5 * beta * beta * (w * w.transpose());
    const Matrix d_kmm = d_a + 0.5 * d_cols * k_inv - 0.5 * d_cols * beta * ki_p2_ki;

    PsiSeed seed;
    seed.psi0 = -0.5 * d_cols * beta;
    seed.psi1 = beta * beta * in.out_means * w.transpose();  // N x K
    seed.psi2 = beta * d_a + 0.5 * d_cols * beta * k_inv;

    const double d_beta = 0.5 * static_cast<double>(n) * d_cols / beta - 0.5 * s_yy + beta * quad -
                          0.5 * d_cols * psi.psi0 + 0.5 * d_cols * tr_ki_psi2 +
                          d_a.cwiseProduct(psi.psi2).sum();
    grad->d_noise_variance = -beta * beta * d_beta;

    const PsiGradients pg = psi_gradients(in.kernel, in.q_in, in.inducing, seed);
    const GramAdjoint ga = in.kernel.gram_vjp(in.inducing, in.inducing, d_kmm);

    // the baseline K_MM jitter scales with the kernel variance
    grad->d_kernel_variance = pg.d_variance + ga.params[0] + kInducingJitterScale * d_kmm.trace();
    grad->d_kernel_weights = pg.d_weights + ga.params.tail(ga.params.size() - 1);
    grad->d_inducing = pg.d_inducing + ga.a + ga.b;
    grad->d_qin_means = pg.d_means;
    grad->d_qin_variances = pg.d_variances;
    // Psi1 appears in the value through quad only; its direct d_out term:
    grad->d_out_means = -beta * in.out_means + beta * beta * psi.psi1 * w;
    grad->d_out_variance_each = -0.5 * beta;
    return value;
}

Matrix select_columns(const Matrix& m, const std::vector<Index>& cols) {
    Matrix out(m.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
    return out;
}

}  // namespace

double leaf_term(const Matrix& y_group, const DiagonalGaussianField& q_in, const GpGroup& group) {
    TermInputs in{group.kernel, group.inducing, group.noise_variance, q_in, y_group, 0.0};
    return collapsed_term_impl(in, nullptr);
}

double mid_term(const DiagonalGaussianField& q_out, const DiagonalGaussianField& q_in, const GpGroup& group) {
    q_out.validate();
    const Matrix m = select_columns(q_out.means, group.columns);
    const double extra = select_columns(q_out.variances, group.columns).sum();
    TermInputs in{group.kernel, group.inducing, group.noise_variance, q_in, m, extra};
    return collapsed_term_impl(in, nullptr);
}

namespace {

template <typename GradSink>
BoundReport assemble_bound(const DeepModel& model, GradSink&& sink) {
    model.validate();
    BoundReport report;
    const Index depth = model.depth();
    report.mid_terms.resize(static_cast<std::size_t>(depth - 1));

    for (Index i = 0; i < depth; ++i) {
        const auto& layer = model.layers[static_cast<std::size_t>(i)];
        const DiagonalGaussianField& q_in = model.input_of(i);
        for (std::size_t g = 0; g < layer.groups.size(); ++g) {
            const auto& grp = layer.groups[g];
            Matrix out_means;
            double extra = 0.0;
            if (i == 0) {
                out_means = select_columns(model.data, grp.columns);
            } else {
                out_means = select_columns(layer.q_out.means, grp.columns);
                extra = select_columns(layer.q_out.variances, grp.columns).sum();
            }
            TermInputs in{grp.kernel, grp.inducing, grp.noise_variance, q_in, std::move(out_means), extra};
            double value = 0.0;
            try {
                value = sink(i, g, in);
            } catch (const NumericalError& e) {
                throw NumericalError(cat((i == 0 ? "leaf" : "mid"), " term, layer ", i, ", group ", g, ": ",
                                         e.what()));
            }
            if (i == 0)
                report.leaf_terms.push_back(value);
            else
                report.mid_terms[static_cast<std::size_t>(i - 1)].push_back(value);
        }
    }
    for (Index h = 1; h < depth; ++h)
        report.entropies.push_back(entropy(model.layers[static_cast<std::size_t>(h)].q_out));
    report.kl_parent = kl_to_standard_normal(model.q_parent);
    report.total = report.sum_of_parts();
    report.per_datapoint = report.total / static_cast<double>(model.points());
    return report;
}

}  // namespace

BoundReport evidence_lower_bound(const DeepModel& model) {
    return assemble_bound(model, [](Index, std::size_t, const TermInputs& in) {
        return collapsed_term_impl(in, nullptr);
    });
}

std::pair<BoundReport, BoundGradients> evidence_and_gradients(const DeepModel& model) {
    const Index depth = model.depth();
    const Index n = model.points();

    BoundGradients grads;
    grads.groups.resize(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i) {
        const auto& layer = model.layers[static_cast<std::size_t>(i)];
        const Index q_in_dim = model.input_dim(i);
        for (const auto& grp : layer.groups) {
            GroupGradients gg;
            gg.d_kernel_weights = Vector::Zero(q_in_dim);
            gg.d_inducing = Matrix::Zero(grp.inducing.rows(), grp.inducing.cols());
            grads.groups[static_cast<std::size_t>(i)].push_back(std::move(gg));
        }
    }
    grads.q_hidden.resize(static_cast<std::size_t>(depth - 1));
    for (Index h = 1; h < depth; ++h) {
        const auto& q = model.layers[static_cast<std::size_t>(h)].q_out;
        grads.q_hidden[static_cast<std::size_t>(h - 1)].d_means = Matrix::Zero(n, q.dims());
        grads.q_hidden[static_cast<std::size_t>(h - 1)].d_variances = Matrix::Zero(n, q.dims());
    }
    grads.q_parent.d_means = Matrix::Zero(n, model.q_parent.dims());
    grads.q_parent.d_variances = Matrix::Zero(n, model.q_parent.dims());

    auto field_grad = [&](Index layer) -> FieldGradients& {
        // gradient sink for the INPUT distribution of `layer`
        if (layer + 1 < depth) return grads.q_hidden[static_cast<std::size_t>(layer)];
        return grads.q_parent;
    };

    BoundReport report = assemble_bound(model, [&](Index i, std::size_t g, const TermInputs& in) {
        TermGradients tg;
        const double value = collapsed_term_impl(in, &tg);
        GroupGradients& gg = grads.groups[static_cast<std::size_t>(i)][g];
        gg.d_kernel_variance += tg.d_kernel_variance;
        gg.d_kernel_weights += tg.d_kernel_weights;
        gg.d_inducing += tg.d_inducing;
        gg.d_noise_variance += tg.d_noise_variance;
        FieldGradients& fin = field_grad(i);
        fin.d_means += tg.d_qin_means;
        fin.d_variances += tg.d_qin_variances;
        if (i > 0) {
            FieldGradients& fout = grads.q_hidden[static_cast<std::size_t>(i - 1)];
            const auto& cols = model.layers[static_cast<std::size_t>(i)].groups[g].columns;
            for (std::size_t j = 0; j < cols.size(); ++j) {
                fout.d_means.col(cols[j]) += tg.d_out_means.col(static_cast<Index>(j));
                fout.d_variances.col(cols[j]).array() += tg.d_out_variance_each;
            }
        }
        return value;
    });

    for (Index h = 1; h < depth; ++h) {
        const auto& q = model.layers[static_cast<std::size_t>(h)].q_out;
        grads.q_hidden[static_cast<std::size_t>(h - 1)].d_variances += entropy_gradient_variances(q);
    }
    Matrix kl_dm, kl_ds;
    kl_gradients(model.q_parent, kl_dm, kl_ds);
    grads.q_parent.d_means -= kl_dm;
    grads.q_parent.d_variances -= kl_ds;

    return {std::move(report), std::move(grads)};
}

}  // namespace deepgp
