#include "deepgp/config.hpp"

#include <fstream>
#include <set>

namespace deepgp {

const char* kind_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::ToyHierarchy: return "toy-hierarchy";
        case ExperimentKind::ToyRegression: return "toy-regression";
        case ExperimentKind::Digits: return "digits";
        case ExperimentKind::Custom: return "custom";
    }
    return "?";
}

ExperimentKind kind_from_name(const std::string& name) {
    if (name == "toy-hierarchy") return ExperimentKind::ToyHierarchy;
    if (name == "toy-regression") return ExperimentKind::ToyRegression;
    if (name == "digits") return ExperimentKind::Digits;
    if (name == "custom") return ExperimentKind::Custom;
    throw ConfigError(cat("config: unknown experiment kind '", name,
                          "' (expected toy-hierarchy | toy-regression | digits | custom)"));
}

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    require<ConfigError>(j.is_object(), "config: ", where, " must be an object");
    for (const auto& [key, value] : j.items())
        require<ConfigError>(allowed.count(key) > 0, "config: unknown key '", where, ".", key, "'");
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(cat("config: bad value for '", key, "': ", e.what()));
    }
}

std::vector<Index> index_list(const Json& j, const char* key) {
    std::vector<Index> out;
    if (!j.contains(key) || j.at(key).is_null()) return out;
    const Json& arr = j.at(key);
    if (arr.is_number_integer()) {
        out.push_back(arr.get<Index>());
        return out;
    }
    require<ConfigError>(arr.is_array(), "config: '", key, "' must be an integer or array");
    for (const auto& v : arr) out.push_back(v.get<Index>());
    return out;
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
    check_keys(j, {"version", "kind", "seed", "out", "threads", "data", "hierarchy", "optimizer", "generator", "sweep"},
               "(root)");
    RunConfig c;
    require<ConfigError>(j.contains("version"), "config: missing 'version'");
    c.version = j.at("version").get<int>();
    require<ConfigError>(c.version == kConfigVersion, "config: version ", c.version, " unsupported (expected ",
                         kConfigVersion, ")");
    require<ConfigError>(j.contains("kind"), "config: missing 'kind'");
    c.kind = kind_from_name(j.at("kind").get<std::string>());
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.out = get_or<std::string>(j, "out", "out");
    switch (c.kind) {  // per-kind optimizer baselines, overridable below
        case ExperimentKind::ToyHierarchy:
            c.optimizer = {2000, 1e-8, 60, 1};
            break;
        case ExperimentKind::ToyRegression:
            c.optimizer = {800, 1e-8, 60, 4};
            break;
        case ExperimentKind::Digits:
            c.optimizer = {800, 1e-8, 60, 2};
            break;
        case ExperimentKind::Custom:
            break;
    }
    c.threads = get_or<int>(j, "threads", 1);
    require<ConfigError>(c.threads >= 1, "config: threads must be >= 1");

    if (j.contains("data")) {
        const Json& d = j.at("data");
        check_keys(d, {"dataset", "split", "usps", "label_column"}, "data");
        c.data.dataset = get_or<std::string>(d, "dataset", "");
        c.data.split = get_or<std::string>(d, "split", "");
        c.data.usps = get_or<std::string>(d, "usps", "");
        c.data.label_column = get_or<std::string>(d, "label_column", "label");
    }
    if (j.contains("hierarchy")) {
        const Json& h = j.at("hierarchy");
        check_keys(h, {"layer_dims", "inducing", "groups"}, "hierarchy");
        c.hierarchy.layer_dims = index_list(h, "layer_dims");
        c.hierarchy.inducing = index_list(h, "inducing");
        if (h.contains("groups") && !h.at("groups").is_null()) {
            require<ConfigError>(h.at("groups").is_array(), "config: hierarchy.groups must be an array");
            for (const auto& g : h.at("groups")) {
                check_keys(g, {"layer", "partition"}, "hierarchy.groups[]");
                const Index layer = g.at("layer").get<Index>();
                require<ConfigError>(layer >= 0, "config: group layer must be >= 0");
                if (static_cast<std::size_t>(layer) >= c.hierarchy.groups.size())
                    c.hierarchy.groups.resize(static_cast<std::size_t>(layer) + 1);
                GroupSpec spec;
                for (const auto& part : g.at("partition")) {
                    std::vector<Index> cols;
                    for (const auto& v : part) cols.push_back(v.get<Index>());
                    spec.partitions.push_back(std::move(cols));
                }
                c.hierarchy.groups[static_cast<std::size_t>(layer)] = std::move(spec);
            }
        }
    }
    if (j.contains("optimizer")) {
        const Json& o = j.at("optimizer");
        check_keys(o, {"max_iterations", "tolerance", "frozen_iterations", "restarts"}, "optimizer");
        c.optimizer.max_iterations = get_or<int>(o, "max_iterations", c.optimizer.max_iterations);
        c.optimizer.tolerance = get_or<double>(o, "tolerance", c.optimizer.tolerance);
        c.optimizer.frozen_iterations = get_or<int>(o, "frozen_iterations", c.optimizer.frozen_iterations);
        c.optimizer.restarts = get_or<int>(o, "restarts", c.optimizer.restarts);
        require<ConfigError>(c.optimizer.tolerance > 0.0, "config: optimizer.tolerance must be > 0");
        require<ConfigError>(c.optimizer.max_iterations >= 1, "config: optimizer.max_iterations must be >= 1");
        require<ConfigError>(c.optimizer.frozen_iterations >= 0, "config: optimizer.frozen_iterations must be >= 0");
        require<ConfigError>(c.optimizer.frozen_iterations <= c.optimizer.max_iterations,
                             "config: optimizer.frozen_iterations exceeds max_iterations");
        require<ConfigError>(c.optimizer.restarts >= 1, "config: optimizer.restarts must be >= 1");
    }
    if (j.contains("generator")) {
        const Json& g = j.at("generator");
        check_keys(g, {"n"}, "generator");
        c.generator.n = get_or<Index>(g, "n", c.generator.n);
        require<ConfigError>(c.generator.n >= 2, "config: generator.n must be >= 2");
    }
    if (j.contains("sweep")) {
        const Json& s = j.at("sweep");
        check_keys(s, {"depths", "dims_per_depth"}, "sweep");
        if (s.contains("depths") && !s.at("depths").is_null())
            for (const auto& v : s.at("depths")) c.sweep.depths.push_back(v.get<int>());
        if (s.contains("dims_per_depth") && !s.at("dims_per_depth").is_null())
            for (const auto& row : s.at("dims_per_depth")) {
                std::vector<Index> dims;
                for (const auto& v : row) dims.push_back(v.get<Index>());
                c.sweep.dims_per_depth.push_back(std::move(dims));
            }
    }
    c.resolve_defaults();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require<ConfigError>(in.good(), "config: cannot open ", path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError(cat("config: ", path.string(), " is not valid JSON: ", e.what()));
    }
    return from_json(j);
}

void RunConfig::resolve_defaults() {
    if (hierarchy.layer_dims.empty()) {
        switch (kind) {
            case ExperimentKind::ToyHierarchy: hierarchy.layer_dims = {4, 3}; break;
            case ExperimentKind::ToyRegression: hierarchy.layer_dims = {1}; break;  // hidden warp; parent = inputs
            case ExperimentKind::Digits: hierarchy.layer_dims = {10, 6}; break;
            case ExperimentKind::Custom: hierarchy.layer_dims = {5, 3}; break;
        }
    }
    const std::size_t mappings =
        hierarchy.layer_dims.size() + (kind == ExperimentKind::ToyRegression ? 1 : 0);
    if (hierarchy.inducing.empty()) {
        Index k = 0;
        switch (kind) {
            case ExperimentKind::ToyHierarchy: k = 20; break;
            case ExperimentKind::ToyRegression: k = 20; break;
            case ExperimentKind::Digits: k = 25; break;
            case ExperimentKind::Custom: k = 15; break;
        }
        hierarchy.inducing.assign(mappings, k);
    } else if (hierarchy.inducing.size() == 1 && mappings > 1) {
        hierarchy.inducing.assign(mappings, hierarchy.inducing[0]);
    }
    require<ConfigError>(hierarchy.inducing.size() == mappings, "config: hierarchy.inducing needs ", mappings,
                         " entries (one per mapping), got ", hierarchy.inducing.size());
    for (Index k : hierarchy.inducing) require<ConfigError>(k >= 1, "config: inducing counts must be >= 1");
    for (Index q : hierarchy.layer_dims) require<ConfigError>(q >= 1, "config: layer dims must be >= 1");

    if (kind == ExperimentKind::Digits && sweep.dims_per_depth.empty())
        sweep.dims_per_depth = {{10}, {10, 6}, {10, 6, 4}, {10, 6, 4, 3}, {10, 6, 4, 3, 2}};
    if (sweep.depths.empty() && !sweep.dims_per_depth.empty())
        for (std::size_t d = 1; d <= sweep.dims_per_depth.size(); ++d) sweep.depths.push_back(static_cast<int>(d));
}

Json RunConfig::to_json() const {
    Json j;
    j["version"] = version;
    j["kind"] = kind_name(kind);
    j["seed"] = seed;
    j["out"] = out;
    j["threads"] = threads;
    j["data"] = Json{{"dataset", data.dataset},
                     {"split", data.split},
                     {"usps", data.usps},
                     {"label_column", data.label_column}};
    Json groups = Json::array();
    for (std::size_t layer = 0; layer < hierarchy.groups.size(); ++layer) {
        if (hierarchy.groups[layer].partitions.empty()) continue;
        Json partition = Json::array();
        for (const auto& cols : hierarchy.groups[layer].partitions) partition.push_back(cols);
        groups.push_back(Json{{"layer", layer}, {"partition", partition}});
    }
    j["hierarchy"] = Json{{"layer_dims", hierarchy.layer_dims}, {"inducing", hierarchy.inducing}, {"groups", groups}};
    j["optimizer"] = Json{{"max_iterations", optimizer.max_iterations},
                          {"tolerance", optimizer.tolerance},
                          {"frozen_iterations", optimizer.frozen_iterations},
                          {"restarts", optimizer.restarts}};
    j["generator"] = Json{{"n", generator.n}};
    Json dims = Json::array();
    for (const auto& row : sweep.dims_per_depth) dims.push_back(row);
    j["sweep"] = Json{{"depths", sweep.depths}, {"dims_per_depth", dims}};
    return j;
}

}  // namespace deepgp
