#include "deepgp/modelgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepgp {

std::vector<Matrix> sample_hierarchy(const HierarchySampler& sampler, Index n, std::uint64_t seed) {
    require(n >= 1, "sample_hierarchy: need at least one point");
    require(!sampler.layers.empty(), "sample_hierarchy: sampler has no layers");
    Rng rng(seed);

    std::vector<Matrix> out;
    if (sampler.fixed_design) {
        require(sampler.fixed_design->rows() == n, "sample_hierarchy: fixed design has ", sampler.fixed_design->rows(),
                " rows, expected ", n);
        out.push_back(*sampler.fixed_design);
    } else {
        out.push_back(rng.stream(0).normal_matrix(n, sampler.top_dim));
    }

    for (std::size_t h = 0; h < sampler.layers.size(); ++h) {
        const auto& spec = sampler.layers[h];
        require(spec.noise_variance >= 0.0, "sample_hierarchy: negative noise variance");
        const Matrix& inputs = out.back();
        const Matrix k = spec.kernel->gram(inputs, inputs);
        Rng layer_rng = rng.stream(1 + static_cast<std::uint64_t>(h));
        Matrix values(n, spec.output_dim);
        if (k.cwiseAbs().maxCoeff() < 1e-300) {
            values.setZero();  // degenerate kernel: noise-only layer
        } else {
            const CholeskyResult chol = jitter_cholesky(k, cat("sampler layer ", h, " gram"));
            values = chol.lower() * layer_rng.normal_matrix(n, spec.output_dim);
        }
        if (spec.noise_variance > 0.0)
            values += std::sqrt(spec.noise_variance) * layer_rng.normal_matrix(n, spec.output_dim);
        out.push_back(std::move(values));
    }
    return out;
}

namespace {

// beta * A^{-1} * Psi1^T * T per group, cached for prediction.
struct GroupPredictor {
    Matrix alpha;  // K x Dg
    std::vector<Index> columns;
    const GpGroup* group = nullptr;
};

std::vector<GroupPredictor> layer_predictors(const DeepModel& model, Index layer) {
    const auto& state = model.layers[static_cast<std::size_t>(layer)];
    const DiagonalGaussianField& q_in = model.input_of(layer);
    std::vector<GroupPredictor> preds;
    for (const auto& grp : state.groups) {
        PsiStatistics psi = psi_statistics(grp.kernel, q_in, grp.inducing);
        psi.psi2 = 0.5 * (psi.psi2 + psi.psi2.transpose()).eval();
        const double beta = 1.0 / grp.noise_variance;
        Matrix kmm = grp.kernel.gram(grp.inducing, grp.inducing);
        kmm.diagonal().array() += kInducingJitterScale * grp.kernel.variance;
        const CholeskyResult chol_k = jitter_cholesky(kmm, "K_MM (predict)");
        Matrix a = kmm + beta * psi.psi2;
        if (chol_k.jitter > 0.0) a.diagonal().array() += chol_k.jitter;
        const CholeskyResult chol_a = jitter_cholesky(a, "K_MM + beta*Psi2 (predict)");

        Matrix targets(model.points(), static_cast<Index>(grp.columns.size()));
        for (std::size_t j = 0; j < grp.columns.size(); ++j)
            targets.col(static_cast<Index>(j)) =
                layer == 0 ? model.data.col(grp.columns[j]) : state.q_out.means.col(grp.columns[j]);

        GroupPredictor p;
        p.alpha = beta * chol_a.solve(psi.psi1.transpose() * targets);
        p.columns = grp.columns;
        p.group = &grp;
        preds.push_back(std::move(p));
    }
    return preds;
}

}  // namespace

Matrix predict_outputs(const DeepModel& model, const Matrix& inputs, Index from, Index to) {
    model.validate();
    require(from > to && from <= model.depth() && to >= 0, "predict_outputs: invalid layer range ", from, " -> ", to);
    Matrix current = inputs;
    for (Index layer = from - 1; layer >= to; --layer) {
        const Index q_in = model.input_dim(layer);
        require(current.cols() == q_in, "predict_outputs: layer ", layer, " expects ", q_in, " input columns, got ",
                current.cols());
        Matrix next(current.rows(), model.output_dim(layer));
        for (const auto& p : layer_predictors(model, layer)) {
            const Matrix k_star = p.group->kernel.gram(current, p.group->inducing);
            const Matrix block = k_star * p.alpha;
            for (std::size_t j = 0; j < p.columns.size(); ++j) next.col(p.columns[j]) = block.col(static_cast<Index>(j));
        }
        current = std::move(next);
    }
    if (to == 0 && model.output_offset.size() > 0) current.rowwise() += model.output_offset.transpose();
    return current;
}

std::vector<GroupArdProfile> ard_profile(const DeepModel& model) {
    model.validate();
    std::vector<GroupArdProfile> out;
    for (Index i = 0; i < model.depth(); ++i) {
        const DiagonalGaussianField& q_in = model.input_of(i);
        Vector input_var(q_in.dims());
        for (Index q = 0; q < q_in.dims(); ++q) {
            const double mu = q_in.means.col(q).mean();
            input_var[q] = (q_in.means.col(q).array() - mu).square().mean();
        }
        const auto& layer = model.layers[static_cast<std::size_t>(i)];
        for (std::size_t g = 0; g < layer.groups.size(); ++g) {
            GroupArdProfile p;
            p.layer = i;
            p.group = static_cast<Index>(g);
            p.weights = layer.groups[g].kernel.weights;
            p.scaled = p.weights.cwiseProduct(input_var);
            const double cutoff = kArdRelevanceRatio * p.scaled.maxCoeff();
            p.relevant.resize(static_cast<std::size_t>(p.scaled.size()));
            for (Index q = 0; q < p.scaled.size(); ++q) {
                p.relevant[static_cast<std::size_t>(q)] = p.scaled[q] >= cutoff;
                if (p.relevant[static_cast<std::size_t>(q)]) ++p.relevant_count;
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

namespace {

std::vector<Index> dominant_dims(const GroupArdProfile& profile, Index count) {
    std::vector<Index> order(static_cast<std::size_t>(profile.scaled.size()));
    for (Index q = 0; q < profile.scaled.size(); ++q) order[static_cast<std::size_t>(q)] = q;
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return profile.scaled[a] > profile.scaled[b]; });
    order.resize(static_cast<std::size_t>(std::min(count, profile.scaled.size())));
    return order;
}

}  // namespace

Matrix sample_from_layer(const DeepModel& model, Index layer, const PerturbationSpec& spec, Index count,
                         std::uint64_t seed) {
    model.validate();
    require(layer >= 1 && layer <= model.depth(), "sample_from_layer: layer ", layer, " out of range [1, ",
            model.depth(), "]");
    const Index d_out = model.data.cols();
    if (count == 0) return Matrix(0, d_out);

    const DiagonalGaussianField& q =
        layer == model.depth() ? model.q_parent : model.layers[static_cast<std::size_t>(layer)].q_out;

    // Dominant dimensions come from the mapping that consumes this layer.
    const auto profiles = ard_profile(model);
    const GroupArdProfile* consumer = nullptr;
    for (const auto& p : profiles)
        if (p.layer == layer - 1 && p.group == 0) consumer = &p;
    require(consumer != nullptr, "sample_from_layer: no consumer mapping for layer ", layer);
    const auto dims = dominant_dims(*consumer, 2);
    for (Index d : dims) {
        if (!consumer->relevant[static_cast<std::size_t>(d)])
            // Perturbing a pruned dimension cannot change the outputs much;
            // proceed anyway, the caller asked for it.
            std::fprintf(stderr, "[deepgp] warning: perturbing pruned dimension %ld of layer %ld\n",
                         static_cast<long>(d), static_cast<long>(layer));
    }

    Vector base;
    if (spec.base_point >= 0) {
        require(spec.base_point < q.points(), "sample_from_layer: base point out of range");
        base = q.means.row(spec.base_point);
    } else {
        base = q.means.colwise().mean();
    }

    Vector spread(static_cast<Index>(dims.size()));
    for (std::size_t j = 0; j < dims.size(); ++j) {
        const Index d = dims[j];
        const double mu = q.means.col(d).mean();
        spread[static_cast<Index>(j)] = std::sqrt((q.means.col(d).array() - mu).square().mean());
    }

    Matrix latents(count, q.dims());
    latents.rowwise() = base.transpose();
    Rng rng(seed);
    if (spec.kind == PerturbationSpec::Kind::Jitter) {
        for (Index i = 0; i < count; ++i)
            for (std::size_t j = 0; j < dims.size(); ++j)
                latents(i, dims[j]) += spec.scale * spread[static_cast<Index>(j)] * rng.normal();
    } else {
        // Square-ish grid over the (up to) two dominant dimensions.
        const Index side = std::max<Index>(1, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(count)))));
        for (Index i = 0; i < count; ++i) {
            const Index gx = i % side;
            const Index gy = i / side;
            auto offset = [&](Index g) {
                return side == 1 ? 0.0 : spec.scale * (2.0 * static_cast<double>(g) / static_cast<double>(side - 1) - 1.0);
            };
            latents(i, dims[0]) += offset(gx) * spread[0];
            if (dims.size() > 1) latents(i, dims[1]) += offset(gy) * spread[1];
        }
    }
    return predict_outputs(model, latents, layer, 0);
}

Index nn_error(const Matrix& latents, const std::vector<int>& labels, const std::vector<Index>& dims) {
    require(latents.rows() >= 2, "nn_error: need at least two points");
    require(static_cast<Index>(labels.size()) == latents.rows(), "nn_error: ", labels.size(), " labels for ",
            latents.rows(), " points");
    Matrix x = latents;
    if (!dims.empty()) {
        x.resize(latents.rows(), static_cast<Index>(dims.size()));
        for (std::size_t j = 0; j < dims.size(); ++j) {
            require(dims[j] >= 0 && dims[j] < latents.cols(), "nn_error: dimension ", dims[j], " out of range");
            x.col(static_cast<Index>(j)) = latents.col(dims[j]);
        }
    }
    Index errors = 0;
    for (Index i = 0; i < x.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        Index best_j = -1;
        for (Index j = 0; j < x.rows(); ++j) {
            if (j == i) continue;
            const double d = (x.row(i) - x.row(j)).squaredNorm();
            if (d < best) {  // strict: ties go to the lowest index
                best = d;
                best_j = j;
            }
        }
        if (labels[static_cast<std::size_t>(best_j)] != labels[static_cast<std::size_t>(i)]) ++errors;
    }
    return errors;
}

double mean_squared_error(const Matrix& predicted, const Matrix& truth) {
    require(predicted.rows() == truth.rows() && predicted.cols() == truth.cols(), "mean_squared_error: shape mismatch");
    return (predicted - truth).squaredNorm() / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// Flat GP baseline

Matrix FlatGp::predict(const Matrix& inputs) const {
    Matrix c = kernel.gram(train_inputs, train_inputs);
    c.diagonal().array() += noise_variance;
    const CholeskyResult chol = jitter_cholesky(c, "flat GP K_NN");
    const Matrix k_star = kernel.gram(inputs, train_inputs);
    Matrix out = k_star * chol.solve(train_targets);
    out.rowwise() += offset.transpose();
    return out;
}

FlatGp fit_flat_gp(const Matrix& x, const Matrix& y, int max_iterations) {
    require(x.rows() == y.rows(), "fit_flat_gp: row mismatch");
    FlatGp gp;
    gp.offset = y.colwise().mean();
    gp.train_targets = y.rowwise() - gp.offset.transpose();
    gp.train_inputs = x;

    Vector w0(x.cols());
    for (Index q = 0; q < x.cols(); ++q) {
        const double mu = x.col(q).mean();
        const double var = (x.col(q).array() - mu).square().mean();
        w0[q] = var > 1e-12 ? 1.0 / var : 1.0;
    }
    const double y_var = gp.train_targets.array().square().mean();
    gp.kernel = ArdKernel(std::max(y_var, 1e-4), w0);
    gp.noise_variance = std::max(0.1 * y_var, 1e-6);

    // Optimize log kernel params and log noise by L-BFGS through the generic
    // quadratic objective interface.
    const Index np = gp.kernel.param_count();
    Vector t(np + 1);
    t.head(np) = gp.kernel.params().array().log();
    t[np] = std::log(gp.noise_variance);

    Objective obj = [&](const Vector& tt) -> std::pair<double, Vector> {
        ArdKernel k = gp.kernel;
        k.set_params(tt.head(np).array().exp());
        const double noise = std::exp(tt[np]);
        const GpMarginalGradients g = gp_log_marginal_gradients(gp.train_targets, x, k, noise);
        Vector grad(np + 1);
        grad.head(np) = -g.d_kernel_params.cwiseProduct(k.params());
        grad[np] = -g.d_noise_variance * noise;
        return {-g.value, grad};
    };

    // Plain L-BFGS loop over the small hyperparameter vector.
    Vector grad;
    double f = 0.0;
    std::tie(f, grad) = obj(t);
    std::vector<Vector> s_hist, y_hist;
    std::vector<double> rho;
    for (int it = 0; it < max_iterations; ++it) {
        if (grad.norm() < 1e-8) break;
        Vector dir = -grad;
        if (!s_hist.empty()) {
            std::vector<double> a(s_hist.size());
            for (std::size_t i = s_hist.size(); i-- > 0;) {
                a[i] = rho[i] * s_hist[i].dot(dir);
                dir -= a[i] * y_hist[i];
            }
            dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            for (std::size_t i = 0; i < s_hist.size(); ++i) dir += (a[i] - rho[i] * y_hist[i].dot(dir)) * s_hist[i];
        }
        if (dir.dot(grad) >= 0.0) dir = -grad;
        double alpha = 1.0;
        double f_new = f;
        Vector g_new = grad, t_new = t;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            t_new = t + alpha * dir;
            try {
                std::tie(f_new, g_new) = obj(t_new);
                if (std::isfinite(f_new) && f_new <= f + 1e-4 * alpha * dir.dot(grad)) {
                    accepted = true;
                    break;
                }
            } catch (const NumericalError&) {
            }
            alpha *= 0.5;
        }
        if (!accepted) break;
        const Vector s = t_new - t;
        const Vector yv = g_new - grad;
        if (s.dot(yv) > 1e-12) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho.push_back(1.0 / s.dot(yv));
            if (s_hist.size() > 10) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho.erase(rho.begin());
            }
        }
        const double f_prev = f;
        t = t_new;
        f = f_new;
        grad = g_new;
        if (std::abs(f_prev - f) < 1e-10 * std::max(1.0, std::abs(f))) break;
    }

    gp.kernel.set_params(t.head(np).array().exp());
    gp.noise_variance = std::exp(t[np]);
    gp.log_marginal = -f;
    return gp;
}

// ---------------------------------------------------------------------------
// Experiment datasets

ToyHierarchyData toy_hierarchy_data(Index n, std::uint64_t seed) {
    HierarchySampler sampler;
    sampler.top_dim = 1;
    // Middle-layer noise keeps the second intermediate dimension carrying
    // signal of its own; with near-zero noise the two signals collapse onto
    // a 1-D curve and the depth structure is unidentifiable.
    sampler.layers.emplace_back(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 1.0, 1)), 0.04, 2);
    sampler.layers.emplace_back(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 1.0, 2)), 1e-3, 10);
    auto layers = sample_hierarchy(sampler, n, seed);

    ToyHierarchyData data;
    data.truth = {layers[0], layers[1]};
    data.observations = layers[2];
    data.true_dims = {2, 1};  // leaf mapping sees 2 dims, top mapping 1
    return data;
}

ToyRegressionData toy_regression_data(std::uint64_t seed) {
    const Index n = 120;
    Matrix design(n, 1);
    for (Index i = 0; i < n; ++i) design(i, 0) = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(n - 1);

    auto warp_kernel = std::make_unique<SumKernel>();
    warp_kernel->add(std::make_unique<LinearKernel>(1.0, 1));
    warp_kernel->add(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 1.0, 1)));

    HierarchySampler sampler;
    sampler.fixed_design = design;
    sampler.layers.emplace_back(std::move(warp_kernel), 1e-3, 1);
    sampler.layers.emplace_back(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 1.0, 1)), 1e-3, 10);
    auto layers = sample_hierarchy(sampler, n, seed);

    ToyRegressionData data;
    data.inputs = design;
    data.warped = layers[1];
    data.outputs = layers[2];
    const auto train = Rng(seed).stream(77).sample_without_replacement(n, 25);
    std::vector<char> is_train(static_cast<std::size_t>(n), 0);
    for (Index i : train) is_train[static_cast<std::size_t>(i)] = 1;
    data.train_index.assign(train.begin(), train.end());
    std::sort(data.train_index.begin(), data.train_index.end());
    for (Index i = 0; i < n; ++i)
        if (!is_train[static_cast<std::size_t>(i)]) data.test_index.push_back(i);
    return data;
}

LabeledData synthetic_digits_data(std::uint64_t seed) {
    const Index per_class = 50;
    const Index n = 3 * per_class;
    Rng rng(seed);

    // Clustered 2-D top layer, then a two-level GP warp to 256 pixels. The
    // clusters overlap enough that pixel-space nearest neighbour makes
    // mistakes, leaving the latent layers something to improve on.
    Matrix top(n, 2);
    LabeledData data;
    const double centers[3][2] = {{0.0, 0.0}, {2.2, 0.0}, {0.0, 2.2}};
    Rng top_rng = rng.stream(1);
    for (Index c = 0; c < 3; ++c) {
        for (Index i = 0; i < per_class; ++i) {
            const Index row = c * per_class + i;
            top(row, 0) = centers[c][0] + 0.7 * top_rng.normal();
            top(row, 1) = centers[c][1] + 0.7 * top_rng.normal();
            data.labels.push_back(static_cast<int>(c));
        }
    }

    HierarchySampler sampler;
    sampler.fixed_design = top;
    sampler.layers.emplace_back(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 1.5, 2)), 0.05, 6);
    sampler.layers.emplace_back(std::make_unique<ArdKernel>(ArdKernel::from_lengthscale(1.0, 2.0, 6)), 0.01, 256);
    auto layers = sample_hierarchy(sampler, n, rng.stream(2).seed());

    // Squash to [0,1] like normalized pixel data.
    Matrix pix = layers.back();
    const double lo = pix.minCoeff();
    const double hi = pix.maxCoeff();
    data.features = (pix.array() - lo) / std::max(hi - lo, 1e-12);
    return data;
}

// ---------------------------------------------------------------------------
// Supervised construction

Matrix RegressionModel::standardized(const Matrix& x) const {
    Matrix out = x.rowwise() - input_offset.transpose();
    for (Index q = 0; q < out.cols(); ++q) out.col(q) /= input_scale[q];
    return out;
}

Matrix RegressionModel::predict(const Matrix& x) const {
    return predict_outputs(model, standardized(x), model.depth(), 0);
}

RegressionModel regression_model(const Matrix& x, const Matrix& y, const std::vector<Index>& hidden_dims,
                                 Index inducing_count, std::uint64_t seed, RegressionInit init) {
    require(x.rows() == y.rows(), "regression_model: row mismatch");
    RegressionModel rm;
    rm.input_offset = x.colwise().mean();
    rm.input_scale = Vector(x.cols());
    for (Index q = 0; q < x.cols(); ++q) {
        const double sd = std::sqrt((x.col(q).array() - rm.input_offset[q]).square().mean());
        rm.input_scale[q] = sd > 1e-12 ? sd : 1.0;
    }
    const Matrix z = rm.standardized(x);

    std::vector<Index> dims = hidden_dims;
    dims.push_back(z.cols());  // parent layer holds the observed inputs
    std::vector<Index> k(dims.size(), inducing_count);
    rm.model = greedy_init(y, dims, k, seed);
    rm.model.q_parent.means = z;
    rm.model.q_parent.variances.setConstant(kRegressionInputVariance);

    // Identity style starts the hidden layers at the inputs themselves (no
    // warp); PCA-of-Y keeps the greedy stacked spaces. Either one can fold
    // on a given draw, so restarts try both.
    Rng rng(seed);
    if (init == RegressionInit::Identity) {
        for (Index h = 1; h < rm.model.depth(); ++h) {
            auto& q = rm.model.layers[static_cast<std::size_t>(h)].q_out;
            for (Index j = 0; j < std::min<Index>(q.dims(), z.cols()); ++j) q.means.col(j) = z.col(j);
        }
    }
    // Re-anchor every mapping's inducing inputs on its refreshed input means.
    for (Index i = 0; i < rm.model.depth(); ++i) {
        const Matrix& input_means = rm.model.input_of(i).means;
        const auto idx = rng.stream(900 + static_cast<std::uint64_t>(i))
                             .sample_without_replacement(input_means.rows(), inducing_count);
        for (auto& grp : rm.model.layers[static_cast<std::size_t>(i)].groups)
            for (Index r = 0; r < inducing_count; ++r)
                grp.inducing.row(r) = input_means.row(idx[static_cast<std::size_t>(r)]);
    }
    return rm;
}

}  // namespace deepgp
