#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deepgp/bound.hpp"
#include "deepgp/rng.hpp"
#include "deepgp/training.hpp"

namespace deepgp {

// One generative level of a sampling stack, top-down.
struct SamplerLayerSpec {
    std::unique_ptr<Kernel> kernel;
    double noise_variance = 1e-3;
    Index output_dim = 1;

    SamplerLayerSpec() = default;
    SamplerLayerSpec(std::unique_ptr<Kernel> k, double noise, Index dim)
        : kernel(std::move(k)), noise_variance(noise), output_dim(dim) {}
    SamplerLayerSpec(const SamplerLayerSpec& other)
        : kernel(other.kernel->clone()), noise_variance(other.noise_variance), output_dim(other.output_dim) {}
    SamplerLayerSpec& operator=(const SamplerLayerSpec& other) {
        kernel = other.kernel->clone();
        noise_variance = other.noise_variance;
        output_dim = other.output_dim;
        return *this;
    }
};

// Generative stack of GP mappings used for toy data and ground truth. The
// top inputs are standard normal draws unless a fixed design is supplied.
struct HierarchySampler {
    Index top_dim = 1;
    std::optional<Matrix> fixed_design;
    std::vector<SamplerLayerSpec> layers;  // top-down
};

// All layers top-down: element 0 is the top input, last is the leaf output.
std::vector<Matrix> sample_hierarchy(const HierarchySampler& sampler, Index n, std::uint64_t seed);

// Deterministic mean propagation through the learned sparse posteriors,
// starting with values for layer `from` (depth() = parent Z) down to layer
// `to` (0 = observation space, offset restored).
Matrix predict_outputs(const DeepModel& model, const Matrix& inputs, Index from, Index to = 0);

// Scaled ARD relevance per mapping group: weights multiplied by the input
// variance per dimension, masked at 1e-2 of the per-group maximum.
struct GroupArdProfile {
    Index layer = 0;
    Index group = 0;
    Vector weights;
    Vector scaled;
    std::vector<bool> relevant;
    Index relevant_count = 0;
};
std::vector<GroupArdProfile> ard_profile(const DeepModel& model);
constexpr double kArdRelevanceRatio = 1e-2;

struct PerturbationSpec {
    enum class Kind { Grid, Jitter };
    Kind kind = Kind::Jitter;
    double scale = 1.0;
    Index base_point = -1;  // -1: mean of the layer's posterior means
};

// Posterior means at layer h perturbed along the two dominant (scaled-ARD)
// dimensions of the mapping that consumes the layer, then propagated to the
// observation space.
Matrix sample_from_layer(const DeepModel& model, Index layer, const PerturbationSpec& spec, Index count,
                         std::uint64_t seed);

// Leave-one-out 1-nearest-neighbour label mismatches on the selected
// dimensions (Euclidean; ties resolved toward the lowest index).
Index nn_error(const Matrix& latents, const std::vector<int>& labels, const std::vector<Index>& dims = {});

double mean_squared_error(const Matrix& predicted, const Matrix& truth);

// Exact GP regression baseline, hyperparameters fitted by L-BFGS on the log
// marginal likelihood.
struct FlatGp {
    ArdKernel kernel;
    double noise_variance = 0.1;
    Matrix train_inputs;
    Matrix train_targets;  // centered
    Vector offset;
    double log_marginal = 0.0;

    Matrix predict(const Matrix& inputs) const;
};
FlatGp fit_flat_gp(const Matrix& x, const Matrix& y, int max_iterations = 200);

// ---------------------------------------------------------------------------
// Experiment datasets

struct ToyHierarchyData {
    Matrix observations;          // N x 10
    std::vector<Matrix> truth;    // top-down: [N x 1, N x 2]
    std::vector<Index> true_dims; // relevant dimension count per mapping, bottom-up
};
// Three-level stack: 1-D standard normal top, two 1-D intermediate signals,
// 10-D leaf; quadratic-exponential kernels, variance 1, lengthscale 1,
// noise 1e-3.
ToyHierarchyData toy_hierarchy_data(Index n, std::uint64_t seed);

struct ToyRegressionData {
    Matrix inputs;        // 120 x 1 equally spaced
    Matrix warped;        // 120 x 1 hidden layer (ground truth)
    Matrix outputs;       // 120 x 10
    std::vector<Index> train_index;  // 25 rows
    std::vector<Index> test_index;
};
ToyRegressionData toy_regression_data(std::uint64_t seed);

struct LabeledData {
    Matrix features;
    std::vector<int> labels;
};
// 150-point, 3-cluster, 256-pixel stand-in for the digit subset, drawn from
// a two-level GP stack over clustered top inputs.
LabeledData synthetic_digits_data(std::uint64_t seed);

// Hidden-layer initialization style for the supervised construction. The
// identity warp and stacked PCA land in different optimization basins;
// restarts alternate between them and the bound picks the winner.
enum class RegressionInit { Identity, PcaOfOutputs };

// Deep GP for supervised regression: q(Z) pinned at the (standardized)
// observed inputs with small fixed variances; optimize with freeze_parent.
struct RegressionModel {
    DeepModel model;
    Vector input_offset;
    Vector input_scale;

    Matrix standardized(const Matrix& x) const;
    Matrix predict(const Matrix& x) const;
};
RegressionModel regression_model(const Matrix& x, const Matrix& y, const std::vector<Index>& hidden_dims,
                                 Index inducing_count, std::uint64_t seed,
                                 RegressionInit init = RegressionInit::Identity);
constexpr double kRegressionInputVariance = 1e-6;

}  // namespace deepgp
