#pragma once

#include <optional>
#include <vector>

#include "deepgp/kernels.hpp"
#include "deepgp/variational.hpp"

namespace deepgp {

// One GP mapping over a subset of a layer's output columns. A layer without
// horizontal splitting has a single group owning every column.
struct GpGroup {
    std::vector<Index> columns;  // owned output columns, disjoint across groups
    ArdKernel kernel;            // input dimension = the layer's input dimension
    Matrix inducing;             // K x Q_in pseudo-inputs
    double noise_variance = 0.01;
};

// One level of the cascade. The leaf layer (index 0) observes Y and carries
// no q_out; hidden layers carry the variational distribution over their
// outputs X_h.
struct LayerState {
    std::vector<GpGroup> groups;
    DiagonalGaussianField q_out;

    Index output_dim() const;
    Index inducing_count() const { return groups.empty() ? 0 : groups.front().inducing.rows(); }
};

// Partition of one layer's output columns, by construction mirrored in the
// layer's group list.
struct GroupSpec {
    std::vector<std::vector<Index>> partitions;  // disjoint, covering
};

// Cascade of GP mappings from leaf (observes Y) to top, plus the variational
// distribution over the parent node Z whose prior is fixed at N(0, I).
struct DeepModel {
    std::vector<LayerState> layers;  // [0] = leaf mapping
    DiagonalGaussianField q_parent;  // q(Z)
    Matrix data;                     // N x D observations (stored centered)
    Vector output_offset;            // column means removed from raw observations

    Index depth() const { return static_cast<Index>(layers.size()); }
    Index points() const { return data.rows(); }
    // Input distribution of mapping `layer`: q_out of the layer above, or
    // q(Z) for the topmost mapping.
    const DiagonalGaussianField& input_of(Index layer) const;
    Index input_dim(Index layer) const { return input_of(layer).dims(); }
    Index output_dim(Index layer) const;
    void validate() const;
};

// Value of F_v and its decomposition. The total is assembled as
// sum(leaf_terms) + sum(mid_terms) + sum(entropies) - kl_parent.
struct BoundReport {
    double total = 0.0;
    double per_datapoint = 0.0;
    std::vector<double> leaf_terms;               // one per leaf group
    std::vector<std::vector<double>> mid_terms;   // [hidden layer h-1][group]
    std::vector<double> entropies;                // one per hidden layer
    double kl_parent = 0.0;

    double sum_of_parts() const;
};

// Gradients of the bound arranged like the model.
struct GroupGradients {
    double d_kernel_variance = 0.0;
    Vector d_kernel_weights;
    Matrix d_inducing;
    double d_noise_variance = 0.0;
};

struct FieldGradients {
    Matrix d_means;
    Matrix d_variances;
};

struct BoundGradients {
    std::vector<std::vector<GroupGradients>> groups;  // [layer][group]
    std::vector<FieldGradients> q_hidden;             // [hidden layer h-1]
    FieldGradients q_parent;
};

// Baseline diagonal boost on every K_MM factorization inside the bound,
// relative to the kernel variance. A fixed boost keeps the objective smooth
// where inducing Grams run ill-conditioned; escalation only takes over past
// it.
constexpr double kInducingJitterScale = 1e-6;

// Exact flat-GP log marginal: sum_d log N(y_d | 0, K_NN + noise*I). O(N^3);
// the baseline and bound-tightness oracle, never used inside the bound.
double gp_log_marginal(const Matrix& y, const Matrix& x, const Kernel& kernel, double noise_variance);

struct GpMarginalGradients {
    double value = 0.0;
    Vector d_kernel_params;
    double d_noise_variance = 0.0;
};
GpMarginalGradients gp_log_marginal_gradients(const Matrix& y, const Matrix& x, const Kernel& kernel,
                                              double noise_variance);

// Collapsed contribution of a leaf mapping for the given output columns.
double leaf_term(const Matrix& y_group, const DiagonalGaussianField& q_in, const GpGroup& group);

// Collapsed contribution of an intermediate mapping: same algebraic form with
// Y^T Y replaced by the <XX^T> statistic of q_out restricted to the group.
double mid_term(const DiagonalGaussianField& q_out, const DiagonalGaussianField& q_in, const GpGroup& group);

BoundReport evidence_lower_bound(const DeepModel& model);
std::pair<BoundReport, BoundGradients> evidence_and_gradients(const DeepModel& model);

}  // namespace deepgp
