#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepgp/bound.hpp"

namespace deepgp {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { ToyHierarchy, ToyRegression, Digits, Custom };
const char* kind_name(ExperimentKind kind);
ExperimentKind kind_from_name(const std::string& name);

struct HierarchyConfig {
    std::vector<Index> layer_dims;  // bottom-up; the last entry is the parent
    std::vector<Index> inducing;    // one per mapping
    std::vector<GroupSpec> groups;  // optional, per mapping layer
};

struct OptimizerSection {
    int max_iterations = 500;
    double tolerance = 1e-7;
    int frozen_iterations = 50;
    int restarts = 3;
};

struct DataSection {
    std::string dataset;
    std::string split;
    std::string usps;
    std::string label_column = "label";
};

struct GeneratorSection {
    Index n = 100;
};

struct SweepSection {
    std::vector<int> depths;
    std::vector<std::vector<Index>> dims_per_depth;
};

// Parsed, validated run configuration. Unknown keys anywhere in the file are
// rejected; defaults are resolved per experiment kind so the manifest snapshot
// alone reproduces a run.
struct RunConfig {
    int version = 1;
    ExperimentKind kind = ExperimentKind::Custom;
    std::uint64_t seed = 0;
    std::string out = "out";
    int threads = 1;
    DataSection data;
    HierarchyConfig hierarchy;
    OptimizerSection optimizer;
    GeneratorSection generator;
    SweepSection sweep;

    static RunConfig from_json(const Json& j);
    static RunConfig load(const std::filesystem::path& path);
    Json to_json() const;

    // Fill kind-dependent defaults for any hierarchy/sweep fields left empty.
    void resolve_defaults();
};

constexpr int kConfigVersion = 1;
constexpr const char* kBuildId = "deepgp 0.1.0";

}  // namespace deepgp
