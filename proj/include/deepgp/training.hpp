#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepgp/bound.hpp"
#include "deepgp/rng.hpp"

namespace deepgp {

enum class ParamKind {
    KernelVariance,
    KernelWeights,
    Inducing,
    NoiseVariance,
    QMeans,
    QLogVariances,
    ParentMeans,
    ParentLogVariances,
};

const char* param_kind_name(ParamKind kind);

// One contiguous block of the packed vector. Positive quantities are stored
// as logs; variance-like entries additionally keep a 1e-8 floor after the
// inverse transform so entropies stay finite.
struct Segment {
    ParamKind kind;
    Index layer = -1;  // mapping index for group params, hidden-layer index for q params
    Index group = -1;
    Index offset = 0;
    Index count = 0;
    std::string name() const;
};

struct ParameterLayout {
    std::vector<Segment> segments;
    Index total = 0;

    const Segment* find(ParamKind kind, Index layer, Index group) const;
};

constexpr double kVarianceFloor = 1e-8;

ParameterLayout make_layout(const DeepModel& model);
Vector pack(const DeepModel& model, const ParameterLayout& layout);
DeepModel unpack(const DeepModel& prototype, const ParameterLayout& layout, const Vector& packed);
// Chain rule through the pack transforms (d bound / d packed coordinate).
Vector pack_gradients(const DeepModel& model, const ParameterLayout& layout, const BoundGradients& grads);

struct OptimizerConfig {
    int max_iterations = 500;
    double tolerance = 1e-7;        // relative bound change between accepted steps
    int frozen_iterations = 50;     // kernel + noise variances held fixed this long
    bool freeze_parent = false;     // pin q(Z), used by the regression construction
    std::uint64_t seed = 0;
    double gradient_floor = 1e-10;
    int lbfgs_memory = 10;
    int restarts = 1;
};

enum class OptimizeStatus { Converged, IterationCap };

struct TraceRecord {
    int iteration = 0;
    BoundReport report;
    double gradient_norm = 0.0;
    double step_size = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

struct OptimizeResult {
    DeepModel model;
    Vector final_packed;             // frozen coordinates bitwise untouched here
    std::vector<BoundReport> trace;  // initial state plus every accepted step
    OptimizeStatus status = OptimizeStatus::Converged;
    int iterations = 0;
    double gradient_norm = 0.0;
};

// Line-searched L-BFGS ascent on the packed vector. Accepted steps never
// decrease the bound (strong Wolfe); throws NumericalError with a term dump
// when no finite step exists.
OptimizeResult optimize(const DeepModel& model, const OptimizerConfig& config, const TraceSink& sink = {});

// Independent restarts from reseeded initializations; best final bound wins,
// ties broken by lowest restart index. The init functor sees the restart
// index and its derived seed.
using RestartInit = std::function<DeepModel(int restart, std::uint64_t seed)>;
OptimizeResult optimize_restarts(const RestartInit& init, const OptimizerConfig& config, const TraceSink& sink = {});

// Stacked-PCA initialization: hidden layer 1 = leading principal components
// of Y scaled to unit per-dimension variance, each further layer the PCA of
// the one below; q variances 0.5, inducing inputs sampled from each mapping's
// input means, kernel variances 1, ARD weights 1/Q, noise 0.01 x mean output
// variance per group. layer_dims runs bottom-up and ends with the parent.
DeepModel greedy_init(const Matrix& y, const std::vector<Index>& layer_dims, const std::vector<Index>& inducing_counts,
                      std::uint64_t seed, const std::vector<GroupSpec>* groups = nullptr);

// Leading PCA scores with deterministic small-noise padding past the rank.
Matrix pca_scores(const Matrix& m, Index dims, Rng rng, bool* padded = nullptr);

struct GradCheckEntry {
    Index coordinate = 0;
    std::string segment;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;  // |a-n| / max(|a|, |n|, floor/tolerance)
    bool pass = true;
};

struct GradCheckReport {
    double max_error = 0.0;
    std::vector<GradCheckEntry> entries;                      // every checked coordinate
    std::vector<std::pair<std::string, double>> segment_max;  // per-segment max error
    std::vector<Index> flagged;                               // coordinates beyond tolerance
    bool ok() const { return flagged.empty(); }
};

using Objective = std::function<std::pair<double, Vector>(const Vector&)>;

// Central finite differences against the analytic gradient. A coordinate
// passes when |analytic - numeric| <= max(tolerance*scale, absolute_floor).
GradCheckReport check_gradients(const Objective& objective, const Vector& x0, double step, double tolerance,
                                double absolute_floor = 1e-7, const ParameterLayout* layout = nullptr,
                                Index max_coordinates = -1, std::uint64_t seed = 0);

GradCheckReport check_model_gradients(const DeepModel& model, double step = 1e-5, double tolerance = 1e-5,
                                      Index max_coordinates = -1, std::uint64_t seed = 0);

// Bound objective over the packed vector (gradient ascent sign convention).
std::pair<double, Vector> packed_objective(const DeepModel& prototype, const ParameterLayout& layout,
                                           const Vector& packed);

}  // namespace deepgp
