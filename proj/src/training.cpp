#include "deepgp/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

namespace deepgp {

const char* param_kind_name(ParamKind kind) {
    switch (kind) {
        case ParamKind::KernelVariance: return "kernel_variance";
        case ParamKind::KernelWeights: return "kernel_weights";
        case ParamKind::Inducing: return "inducing";
        case ParamKind::NoiseVariance: return "noise_variance";
        case ParamKind::QMeans: return "q_means";
        case ParamKind::QLogVariances: return "q_variances";
        case ParamKind::ParentMeans: return "parent_means";
        case ParamKind::ParentLogVariances: return "parent_variances";
    }
    return "?";
}

std::string Segment::name() const {
    std::string s = param_kind_name(kind);
    if (layer >= 0) s += cat("[layer=", layer, "]");
    if (group >= 0) s += cat("[group=", group, "]");
    return s;
}

const Segment* ParameterLayout::find(ParamKind kind, Index layer, Index group) const {
    for (const auto& s : segments)
        if (s.kind == kind && s.layer == layer && s.group == group) return &s;
    return nullptr;
}

namespace {

bool is_log_scaled(ParamKind kind) {
    switch (kind) {
        case ParamKind::KernelVariance:
        case ParamKind::KernelWeights:
        case ParamKind::NoiseVariance:
        case ParamKind::QLogVariances:
        case ParamKind::ParentLogVariances: return true;
        default: return false;
    }
}

bool is_floored(ParamKind kind) {
    return kind == ParamKind::NoiseVariance || kind == ParamKind::QLogVariances ||
           kind == ParamKind::ParentLogVariances;
}

double to_packed(ParamKind kind, double v) {
    if (!is_log_scaled(kind)) return v;
    const double base = is_floored(kind) ? v - kVarianceFloor : v;
    require<Error>(base > 0.0, "pack: ", param_kind_name(kind), " must exceed ",
                   is_floored(kind) ? kVarianceFloor : 0.0, ", got ", v);
    return std::log(base);
}

double from_packed(ParamKind kind, double t) {
    if (!is_log_scaled(kind)) return t;
    const double v = std::exp(t);
    return is_floored(kind) ? v + kVarianceFloor : v;
}

// d(value)/d(packed)
double transform_jacobian(ParamKind kind, double value) {
    if (!is_log_scaled(kind)) return 1.0;
    return is_floored(kind) ? value - kVarianceFloor : value;
}

}  // namespace

ParameterLayout make_layout(const DeepModel& model) {
    model.validate();
    ParameterLayout layout;
    Index at = 0;
    auto push = [&](ParamKind kind, Index layer, Index group, Index count) {
        layout.segments.push_back({kind, layer, group, at, count});
        at += count;
    };
    for (Index i = 0; i < model.depth(); ++i) {
        const auto& layer = model.layers[static_cast<std::size_t>(i)];
        for (std::size_t g = 0; g < layer.groups.size(); ++g) {
            const auto& grp = layer.groups[g];
            push(ParamKind::KernelVariance, i, static_cast<Index>(g), 1);
            push(ParamKind::KernelWeights, i, static_cast<Index>(g), grp.kernel.weights.size());
            push(ParamKind::Inducing, i, static_cast<Index>(g), grp.inducing.size());
            push(ParamKind::NoiseVariance, i, static_cast<Index>(g), 1);
        }
    }
    for (Index h = 1; h < model.depth(); ++h) {
        const auto& q = model.layers[static_cast<std::size_t>(h)].q_out;
        push(ParamKind::QMeans, h, -1, q.means.size());
        push(ParamKind::QLogVariances, h, -1, q.variances.size());
    }
    push(ParamKind::ParentMeans, -1, -1, model.q_parent.means.size());
    push(ParamKind::ParentLogVariances, -1, -1, model.q_parent.variances.size());
    layout.total = at;
    return layout;
}

namespace {

// Row-major copy in/out keeps the packed order independent of Eigen's
// default storage.
void write_matrix(Vector& x, Index offset, const Matrix& m, ParamKind kind) {
    Index at = offset;
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) x[at++] = to_packed(kind, m(i, j));
}

void read_matrix(const Vector& x, Index offset, Matrix& m, ParamKind kind) {
    Index at = offset;
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = from_packed(kind, x[at++]);
}

void write_gradient(Vector& g, Index offset, const Matrix& dm, const Matrix& values, ParamKind kind) {
    Index at = offset;
    for (Index i = 0; i < dm.rows(); ++i)
        for (Index j = 0; j < dm.cols(); ++j) g[at++] = dm(i, j) * transform_jacobian(kind, values(i, j));
}

}  // namespace

Vector pack(const DeepModel& model, const ParameterLayout& layout) {
    Vector x(layout.total);
    for (const auto& seg : layout.segments) {
        switch (seg.kind) {
            case ParamKind::KernelVariance: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                x[seg.offset] = to_packed(seg.kind, grp.kernel.variance);
                break;
            }
            case ParamKind::KernelWeights: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                for (Index q = 0; q < grp.kernel.weights.size(); ++q)
                    x[seg.offset + q] = to_packed(seg.kind, grp.kernel.weights[q]);
                break;
            }
            case ParamKind::Inducing: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                write_matrix(x, seg.offset, grp.inducing, seg.kind);
                break;
            }
            case ParamKind::NoiseVariance: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                x[seg.offset] = to_packed(seg.kind, grp.noise_variance);
                break;
            }
            case ParamKind::QMeans:
                write_matrix(x, seg.offset, model.layers[static_cast<std::size_t>(seg.layer)].q_out.means, seg.kind);
                break;
            case ParamKind::QLogVariances:
                write_matrix(x, seg.offset, model.layers[static_cast<std::size_t>(seg.layer)].q_out.variances, seg.kind);
                break;
            case ParamKind::ParentMeans: write_matrix(x, seg.offset, model.q_parent.means, seg.kind); break;
            case ParamKind::ParentLogVariances: write_matrix(x, seg.offset, model.q_parent.variances, seg.kind); break;
        }
    }
    return x;
}

DeepModel unpack(const DeepModel& prototype, const ParameterLayout& layout, const Vector& packed) {
    require(packed.size() == layout.total, "unpack: vector has ", packed.size(), " entries, layout expects ",
            layout.total);
    DeepModel model = prototype;
    for (const auto& seg : layout.segments) {
        switch (seg.kind) {
            case ParamKind::KernelVariance: {
                auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                grp.kernel.variance = from_packed(seg.kind, packed[seg.offset]);
                break;
            }
            case ParamKind::KernelWeights: {
                auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                for (Index q = 0; q < grp.kernel.weights.size(); ++q)
                    grp.kernel.weights[q] = from_packed(seg.kind, packed[seg.offset + q]);
                break;
            }
            case ParamKind::Inducing: {
                auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                read_matrix(packed, seg.offset, grp.inducing, seg.kind);
                break;
            }
            case ParamKind::NoiseVariance: {
                auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                grp.noise_variance = from_packed(seg.kind, packed[seg.offset]);
                break;
            }
            case ParamKind::QMeans:
                read_matrix(packed, seg.offset, model.layers[static_cast<std::size_t>(seg.layer)].q_out.means, seg.kind);
                break;
            case ParamKind::QLogVariances:
                read_matrix(packed, seg.offset, model.layers[static_cast<std::size_t>(seg.layer)].q_out.variances,
                            seg.kind);
                break;
            case ParamKind::ParentMeans: read_matrix(packed, seg.offset, model.q_parent.means, seg.kind); break;
            case ParamKind::ParentLogVariances:
                read_matrix(packed, seg.offset, model.q_parent.variances, seg.kind);
                break;
        }
    }
    return model;
}

Vector pack_gradients(const DeepModel& model, const ParameterLayout& layout, const BoundGradients& grads) {
    Vector g = Vector::Zero(layout.total);
    for (const auto& seg : layout.segments) {
        switch (seg.kind) {
            case ParamKind::KernelVariance: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                const auto& gg = grads.groups[static_cast<std::size_t>(seg.layer)][static_cast<std::size_t>(seg.group)];
                g[seg.offset] = gg.d_kernel_variance * transform_jacobian(seg.kind, grp.kernel.variance);
                break;
            }
            case ParamKind::KernelWeights: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                const auto& gg = grads.groups[static_cast<std::size_t>(seg.layer)][static_cast<std::size_t>(seg.group)];
                for (Index q = 0; q < grp.kernel.weights.size(); ++q)
                    g[seg.offset + q] = gg.d_kernel_weights[q] * transform_jacobian(seg.kind, grp.kernel.weights[q]);
                break;
            }
            case ParamKind::Inducing: {
                const auto& gg = grads.groups[static_cast<std::size_t>(seg.layer)][static_cast<std::size_t>(seg.group)];
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                write_gradient(g, seg.offset, gg.d_inducing, grp.inducing, seg.kind);
                break;
            }
            case ParamKind::NoiseVariance: {
                const auto& grp = model.layers[static_cast<std::size_t>(seg.layer)].groups[static_cast<std::size_t>(seg.group)];
                const auto& gg = grads.groups[static_cast<std::size_t>(seg.layer)][static_cast<std::size_t>(seg.group)];
                g[seg.offset] = gg.d_noise_variance * transform_jacobian(seg.kind, grp.noise_variance);
                break;
            }
            case ParamKind::QMeans: {
                const auto& q = model.layers[static_cast<std::size_t>(seg.layer)].q_out;
                write_gradient(g, seg.offset, grads.q_hidden[static_cast<std::size_t>(seg.layer - 1)].d_means, q.means,
                               seg.kind);
                break;
            }
            case ParamKind::QLogVariances: {
                const auto& q = model.layers[static_cast<std::size_t>(seg.layer)].q_out;
                write_gradient(g, seg.offset, grads.q_hidden[static_cast<std::size_t>(seg.layer - 1)].d_variances,
                               q.variances, seg.kind);
                break;
            }
            case ParamKind::ParentMeans:
                write_gradient(g, seg.offset, grads.q_parent.d_means, model.q_parent.means, seg.kind);
                break;
            case ParamKind::ParentLogVariances:
                write_gradient(g, seg.offset, grads.q_parent.d_variances, model.q_parent.variances, seg.kind);
                break;
        }
    }
    return g;
}

std::pair<double, Vector> packed_objective(const DeepModel& prototype, const ParameterLayout& layout,
                                           const Vector& packed) {
    const DeepModel model = unpack(prototype, layout, packed);
    auto [report, grads] = evidence_and_gradients(model);
    return {report.total, pack_gradients(model, layout, grads)};
}

// ---------------------------------------------------------------------------
// PCA + greedy initialization

Matrix pca_scores(const Matrix& m, Index dims, Rng rng, bool* padded) {
    require(dims >= 1, "pca_scores: dims must be >= 1");
    const Index n = m.rows();
    Matrix centered = m.rowwise() - m.colwise().mean();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const double rank_tol = 1e-10 * std::max(sv.size() > 0 ? sv[0] : 0.0, 1e-300);
    Index rank = 0;
    while (rank < sv.size() && sv[rank] > rank_tol) ++rank;

    Matrix scores(n, dims);
    const Index keep = std::min(dims, rank);
    if (keep > 0) scores.leftCols(keep) = svd.matrixU().leftCols(keep) * sv.head(keep).asDiagonal();
    if (padded) *padded = keep < dims;
    for (Index j = keep; j < dims; ++j) scores.col(j) = 1e-2 * rng.normal_matrix(n, 1);

    for (Index j = 0; j < dims; ++j) {
        const double sd = std::sqrt(scores.col(j).squaredNorm() / static_cast<double>(n));
        if (sd > 1e-12) scores.col(j) /= sd;
    }
    return scores;
}

namespace {

double mean_column_variance(const Matrix& m, const std::vector<Index>& cols) {
    double acc = 0.0;
    for (Index c : cols) {
        const double mu = m.col(c).mean();
        acc += (m.col(c).array() - mu).square().mean();
    }
    return acc / static_cast<double>(cols.size());
}

std::vector<Index> all_columns(Index d) {
    std::vector<Index> cols(static_cast<std::size_t>(d));
    for (Index i = 0; i < d; ++i) cols[static_cast<std::size_t>(i)] = i;
    return cols;
}

Matrix sample_rows(const Matrix& source, Index count, Rng rng) {
    const auto idx = rng.sample_without_replacement(source.rows(), count);
    Matrix out(count, source.cols());
    for (Index i = 0; i < count; ++i) out.row(i) = source.row(idx[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace

DeepModel greedy_init(const Matrix& y, const std::vector<Index>& layer_dims, const std::vector<Index>& inducing_counts,
                      std::uint64_t seed, const std::vector<GroupSpec>* groups) {
    require(!layer_dims.empty(), "greedy_init: layer_dims must not be empty");
    require(inducing_counts.size() == layer_dims.size(), "greedy_init: need one inducing count per mapping");
    const Index n = y.rows();
    const Index depth = static_cast<Index>(layer_dims.size());
    for (std::size_t h = 0; h < layer_dims.size(); ++h) {
        require(layer_dims[h] >= 1, "greedy_init: layer dim ", h, " must be >= 1");
        require(inducing_counts[h] >= 1 && inducing_counts[h] <= n, "greedy_init: inducing count ", h,
                " must be in [1, N]");
    }
    Rng rng(seed);

    DeepModel model;
    model.output_offset = y.colwise().mean();
    model.data = y.rowwise() - model.output_offset.transpose();

    // Stacked PCA, bottom-up.
    std::vector<Matrix> means(layer_dims.size());
    const Matrix* below = &y;
    for (std::size_t h = 0; h < layer_dims.size(); ++h) {
        means[h] = pca_scores(*below, layer_dims[h], rng.stream(100 + static_cast<std::uint64_t>(h)));
        below = &means[h];
    }

    model.layers.resize(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i) {
        auto& layer = model.layers[static_cast<std::size_t>(i)];
        const Matrix& input_means = means[static_cast<std::size_t>(i)];
        const Index q_in = input_means.cols();
        const Matrix& outputs = (i == 0) ? model.data : means[static_cast<std::size_t>(i - 1)];

        std::vector<std::vector<Index>> parts;
        if (groups && static_cast<std::size_t>(i) < groups->size() &&
            !(*groups)[static_cast<std::size_t>(i)].partitions.empty())
            parts = (*groups)[static_cast<std::size_t>(i)].partitions;
        else
            parts = {all_columns(outputs.cols())};

        for (std::size_t g = 0; g < parts.size(); ++g) {
            GpGroup grp;
            grp.columns = parts[g];
            grp.kernel = ArdKernel(1.0, Vector::Constant(q_in, 1.0 / static_cast<double>(q_in)));
            grp.inducing = sample_rows(input_means, inducing_counts[static_cast<std::size_t>(i)],
                                       rng.stream(200 + static_cast<std::uint64_t>(i) * 16 + g));
            grp.noise_variance = std::max(0.01 * mean_column_variance(outputs, grp.columns), 10.0 * kVarianceFloor);
            layer.groups.push_back(std::move(grp));
        }
        if (i > 0) {
            layer.q_out.means = means[static_cast<std::size_t>(i - 1)];
            layer.q_out.variances = Matrix::Constant(n, layer_dims[static_cast<std::size_t>(i - 1)], 0.5);
        }
    }
    model.q_parent.means = means.back();
    model.q_parent.variances = Matrix::Constant(n, layer_dims.back(), 0.5);
    model.validate();
    return model;
}

// ---------------------------------------------------------------------------
// L-BFGS with strong Wolfe line search (minimization of -bound)

namespace {

struct FreeMask {
    std::vector<Index> free_idx;  // packed indices that move

    Vector gather(const Vector& full) const {
        Vector out(static_cast<Index>(free_idx.size()));
        for (std::size_t i = 0; i < free_idx.size(); ++i) out[static_cast<Index>(i)] = full[free_idx[i]];
        return out;
    }
    void scatter(const Vector& part, Vector& full) const {
        for (std::size_t i = 0; i < free_idx.size(); ++i) full[free_idx[i]] = part[static_cast<Index>(i)];
    }
};

FreeMask make_mask(const ParameterLayout& layout, bool freeze_variances, bool freeze_parent) {
    FreeMask mask;
    for (const auto& seg : layout.segments) {
        const bool frozen_kind =
            freeze_variances && (seg.kind == ParamKind::KernelVariance || seg.kind == ParamKind::NoiseVariance);
        const bool frozen_parent =
            freeze_parent && (seg.kind == ParamKind::ParentMeans || seg.kind == ParamKind::ParentLogVariances);
        if (frozen_kind || frozen_parent) continue;
        for (Index i = 0; i < seg.count; ++i) mask.free_idx.push_back(seg.offset + i);
    }
    return mask;
}

struct Evaluation {
    double f = std::numeric_limits<double>::quiet_NaN();  // -bound
    Vector grad;                                          // over free coordinates
    BoundReport report;
    bool finite = false;
};

class PhaseProblem {
public:
    PhaseProblem(const DeepModel& prototype, const ParameterLayout& layout, const FreeMask& mask, Vector full)
        : prototype_(prototype), layout_(layout), mask_(mask), full_(std::move(full)) {}

    Evaluation eval(const Vector& x_free) {
        Evaluation ev;
        mask_.scatter(x_free, full_);
        try {
            const DeepModel model = unpack(prototype_, layout_, full_);
            auto [report, grads] = evidence_and_gradients(model);
            const Vector g_full = pack_gradients(model, layout_, grads);
            ev.report = std::move(report);
            ev.f = -ev.report.total;
            ev.grad = -mask_.gather(g_full);
            ev.finite = std::isfinite(ev.f) && ev.grad.allFinite();
        } catch (const NumericalError&) {
            ev.finite = false;
        }
        return ev;
    }

    const Vector& full() const { return full_; }

private:
    const DeepModel& prototype_;
    const ParameterLayout& layout_;
    const FreeMask& mask_;
    Vector full_;
};

struct LineSearchResult {
    double alpha = 0.0;
    Evaluation eval;
    bool ok = false;
    bool saw_finite = false;  // any trial step evaluated to a finite bound
};

constexpr double kWolfeC1 = 1e-4;
constexpr double kWolfeC2 = 0.9;
constexpr double kMaxStepInf = 10.0;  // per-iteration cap on packed coordinates

LineSearchResult wolfe_search(PhaseProblem& problem, const Vector& x, const Evaluation& at_x, const Vector& dir,
                              double alpha_init) {
    const double f0 = at_x.f;
    const double d0 = at_x.grad.dot(dir);
    LineSearchResult result;
    if (d0 >= 0.0) return result;  // not a descent direction

    const double dir_inf = dir.cwiseAbs().maxCoeff();
    const double alpha_cap = dir_inf > 0.0 ? std::max(kMaxStepInf / dir_inf, alpha_init) : 1e10;

    auto phi = [&](double alpha) {
        Evaluation ev = problem.eval(x + alpha * dir);
        if (ev.finite) result.saw_finite = true;
        return ev;
    };

    auto zoom = [&](double lo, double hi, Evaluation ev_lo) -> LineSearchResult {
        LineSearchResult r;
        for (int it = 0; it < 50; ++it) {
            const double alpha = 0.5 * (lo + hi);
            Evaluation ev = phi(alpha);
            if (!ev.finite || ev.f > f0 + kWolfeC1 * alpha * d0 || ev.f >= ev_lo.f) {
                hi = alpha;
            } else {
                const double d = ev.grad.dot(dir);
                if (std::abs(d) <= -kWolfeC2 * d0) {
                    r.alpha = alpha;
                    r.eval = std::move(ev);
                    r.ok = true;
                    r.saw_finite = result.saw_finite;
                    return r;
                }
                if (d * (hi - lo) >= 0.0) hi = lo;
                lo = alpha;
                ev_lo = std::move(ev);
            }
            if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
        }
        if (ev_lo.finite && ev_lo.f < f0) {  // sufficient-decrease fallback
            r.alpha = lo;
            r.eval = std::move(ev_lo);
            r.ok = lo > 0.0;
        }
        r.saw_finite = result.saw_finite;
        return r;
    };

    double alpha_prev = 0.0;
    Evaluation ev_prev = at_x;
    double alpha = alpha_init;
    for (int it = 0; it < 30; ++it) {
        Evaluation ev = phi(alpha);
        if (!ev.finite) {
            // Step overshot into a non-finite region; bracket shrinks toward
            // the last finite point.
            auto r = zoom(alpha_prev, alpha, ev_prev);
            if (r.ok || alpha_prev > 0.0) return r;
            alpha *= 0.1;
            if (alpha < 1e-20) return result;
            continue;
        }
        if (ev.f > f0 + kWolfeC1 * alpha * d0 || (it > 0 && ev.f >= ev_prev.f)) return zoom(alpha_prev, alpha, ev_prev);
        const double d = ev.grad.dot(dir);
        if (std::abs(d) <= -kWolfeC2 * d0) {
            result.alpha = alpha;
            result.eval = std::move(ev);
            result.ok = true;
            return result;
        }
        if (d >= 0.0) return zoom(alpha, alpha_prev, ev);
        alpha_prev = alpha;
        ev_prev = std::move(ev);
        if (alpha >= alpha_cap) break;
        alpha = std::min(2.0 * alpha, alpha_cap);
    }
    if (ev_prev.finite && ev_prev.f < f0 && alpha_prev > 0.0) {
        result.alpha = alpha_prev;
        result.eval = std::move(ev_prev);
        result.ok = true;
    }
    return result;
}

struct PhaseOutcome {
    Vector x;
    Evaluation eval;
    bool converged = false;
    bool hit_gradient_floor = false;
    int iterations = 0;
};

PhaseOutcome run_lbfgs_phase(PhaseProblem& problem, Vector x, const OptimizerConfig& config, int max_iters,
                             int iteration_base, std::vector<BoundReport>& trace, const TraceSink& sink,
                             bool emit_initial) {
    PhaseOutcome out;
    Evaluation cur = problem.eval(x);
    require<NumericalError>(cur.finite, "optimize: bound is not finite at the starting point");
    if (emit_initial) {
        trace.push_back(cur.report);
        if (sink) sink({iteration_base, cur.report, cur.grad.norm(), 0.0});
    }

    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int it = 0; it < max_iters; ++it) {
        const double gnorm = cur.grad.norm();
        if (gnorm < config.gradient_floor) {
            out.converged = true;
            out.hit_gradient_floor = true;
            break;
        }

        // Two-loop recursion.
        Vector dir = -cur.grad;
        if (!s_hist.empty()) {
            std::vector<double> alpha_hist(s_hist.size());
            for (std::size_t i = s_hist.size(); i-- > 0;) {
                alpha_hist[i] = rho_hist[i] * s_hist[i].dot(dir);
                dir -= alpha_hist[i] * y_hist[i];
            }
            const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            dir *= gamma;
            for (std::size_t i = 0; i < s_hist.size(); ++i) {
                const double beta = rho_hist[i] * y_hist[i].dot(dir);
                dir += (alpha_hist[i] - beta) * s_hist[i];
            }
        }
        if (dir.dot(cur.grad) >= 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -cur.grad;
        }

        const double alpha_init = (s_hist.empty() && it == 0) ? std::min(1.0, 1.0 / std::max(1.0, gnorm)) : 1.0;
        LineSearchResult ls = wolfe_search(problem, x, cur, dir, alpha_init);
        bool any_finite_trial = ls.saw_finite;
        if (!ls.ok && !s_hist.empty()) {  // retry steepest descent from scratch
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -cur.grad;
            ls = wolfe_search(problem, x, cur, dir, std::min(1.0, 1.0 / std::max(1.0, gnorm)));
            any_finite_trial = any_finite_trial || ls.saw_finite;
        }
        if (!ls.ok) {
            if (any_finite_trial) {
                // Finite trial steps exist but none improves: the search
                // direction resolution is exhausted at this (finite) point.
                out.converged = true;
                break;
            }
            throw NumericalError(cat("optimize: no finite step exists from the current point; bound=", -cur.f,
                                     ", |grad|=", cur.grad.norm(), ", total=", cur.report.total,
                                     ", kl_parent=", cur.report.kl_parent));
        }

        const Vector x_new = x + ls.alpha * dir;
        const Vector s = x_new - x;
        const Vector yv = ls.eval.grad - cur.grad;
        const double sy = s.dot(yv);
        if (sy > 1e-10 * s.norm() * yv.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > config.lbfgs_memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double f_prev = cur.f;
        x = x_new;
        cur = std::move(ls.eval);
        ++out.iterations;
        trace.push_back(cur.report);
        if (sink) sink({iteration_base + out.iterations, cur.report, cur.grad.norm(), ls.alpha});

        if (std::abs(f_prev - cur.f) <= config.tolerance * std::max(1.0, std::abs(cur.f))) {
            out.converged = true;
            break;
        }
    }
    out.x = std::move(x);
    out.eval = std::move(cur);
    return out;
}

}  // namespace

OptimizeResult optimize(const DeepModel& model, const OptimizerConfig& config, const TraceSink& sink) {
    require(config.tolerance > 0.0, "optimize: tolerance must be > 0");
    require(config.frozen_iterations <= config.max_iterations,
            "optimize: frozen_iterations exceeds max_iterations");
    model.validate();
    const ParameterLayout layout = make_layout(model);
    Vector full = pack(model, layout);

    OptimizeResult result;
    result.status = OptimizeStatus::Converged;

    int used = 0;
    bool final_converged = false;

    // Phase 1: variances pinned while the geometry settles.
    const int phase1 = std::min(config.frozen_iterations, config.max_iterations);
    if (phase1 > 0) {
        const FreeMask mask = make_mask(layout, true, config.freeze_parent);
        PhaseProblem problem(model, layout, mask, full);
        PhaseOutcome out =
            run_lbfgs_phase(problem, mask.gather(full), config, phase1, 0, result.trace, sink, true);
        used = out.iterations;
        mask.scatter(out.x, full);
        result.gradient_norm = out.eval.grad.norm();
    }

    {
        const FreeMask mask = make_mask(layout, false, config.freeze_parent);
        PhaseProblem problem(model, layout, mask, full);
        PhaseOutcome out = run_lbfgs_phase(problem, mask.gather(full), config, config.max_iterations - used, used,
                                           result.trace, sink, phase1 == 0);
        used += out.iterations;
        mask.scatter(out.x, full);
        final_converged = out.converged;
        result.gradient_norm = out.eval.grad.norm();
    }

    result.model = unpack(model, layout, full);
    result.final_packed = std::move(full);
    result.iterations = used;
    result.status = final_converged ? OptimizeStatus::Converged : OptimizeStatus::IterationCap;
    return result;
}

OptimizeResult optimize_restarts(const RestartInit& init, const OptimizerConfig& config, const TraceSink& sink) {
    require(config.restarts >= 1, "optimize_restarts: need at least one restart");
    std::optional<OptimizeResult> best;
    for (int r = 0; r < config.restarts; ++r) {
        const std::uint64_t restart_seed = Rng(config.seed).stream(static_cast<std::uint64_t>(r)).seed();
        OptimizerConfig sub = config;
        sub.seed = restart_seed;
        OptimizeResult res = optimize(init(r, restart_seed), sub, r == 0 ? sink : TraceSink{});
        if (!best || res.trace.back().total > best->trace.back().total) best = std::move(res);
    }
    return std::move(*best);
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport check_gradients(const Objective& objective, const Vector& x0, double step, double tolerance,
                                double absolute_floor, const ParameterLayout* layout, Index max_coordinates,
                                std::uint64_t seed) {
    require(step > 0.0 && tolerance > 0.0, "check_gradients: step and tolerance must be > 0");
    const auto [f0, g0] = objective(x0);
    require(std::isfinite(f0), "check_gradients: objective not finite at x0");

    std::vector<Index> coords;
    if (max_coordinates < 0 || max_coordinates >= x0.size()) {
        coords.resize(static_cast<std::size_t>(x0.size()));
        for (Index i = 0; i < x0.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
        coords = Rng(seed).sample_without_replacement(x0.size(), max_coordinates);
        std::sort(coords.begin(), coords.end());
    }

    GradCheckReport report;
    std::map<std::string, double> seg_max;
    auto segment_of = [&](Index i) -> std::string {
        if (!layout) return "all";
        for (const auto& s : layout->segments)
            if (i >= s.offset && i < s.offset + s.count) return s.name();
        return "?";
    };

    Vector x = x0;
    for (Index i : coords) {
        const double h = step * std::max(1.0, std::abs(x0[i]));
        x[i] = x0[i] + h;
        const double fp = objective(x).first;
        x[i] = x0[i] - h;
        const double fm = objective(x).first;
        x[i] = x0[i];
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = g0[i];
        const double scale = std::max({std::abs(analytic), std::abs(numeric), absolute_floor / tolerance});
        GradCheckEntry e;
        e.coordinate = i;
        e.segment = segment_of(i);
        e.analytic = analytic;
        e.numeric = numeric;
        e.error = std::abs(analytic - numeric) / scale;
        e.pass = e.error <= tolerance;
        report.max_error = std::max(report.max_error, e.error);
        auto [it, inserted] = seg_max.try_emplace(e.segment, e.error);
        if (!inserted) it->second = std::max(it->second, e.error);
        if (!e.pass) report.flagged.push_back(i);
        report.entries.push_back(std::move(e));
    }
    report.segment_max.assign(seg_max.begin(), seg_max.end());
    return report;
}

GradCheckReport check_model_gradients(const DeepModel& model, double step, double tolerance, Index max_coordinates,
                                      std::uint64_t seed) {
    const ParameterLayout layout = make_layout(model);
    const Vector x0 = pack(model, layout);
    Objective obj = [&](const Vector& x) { return packed_objective(model, layout, x); };
    return check_gradients(obj, x0, step, tolerance, 1e-7, &layout, max_coordinates, seed);
}

}  // namespace deepgp
