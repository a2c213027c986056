#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deepgp/config.hpp"
#include "deepgp/training.hpp"

namespace deepgp {

// Self-describing trained-model container: one text header line, a JSON
// metadata line, then the packed parameters as little-endian 64-bit floats.
// Round trips are bit-identical; version mismatches refuse to load.
struct ModelArchive {
    int format_version = 1;
    std::string build = kBuildId;
    Json config;  // resolved RunConfig snapshot
    std::uint64_t seed = 0;
    int iterations = 0;
    std::string status;  // "converged" | "iteration-cap"
    BoundReport final_report;

    // Model skeleton (shapes only; values live in `packed`).
    Index points = 0;
    Index observed_dim = 0;
    std::vector<Index> layer_dims;                         // bottom-up incl. parent
    std::vector<std::vector<std::vector<Index>>> columns;  // [layer][group] -> output columns
    std::vector<std::vector<Index>> inducing_counts;       // [layer][group]
    Vector output_offset;
    Vector input_offset;  // regression models only (otherwise empty)
    Vector input_scale;
    bool freeze_parent = false;

    Vector packed;

    void save(const std::filesystem::path& path) const;
    static ModelArchive load(const std::filesystem::path& path);

    static ModelArchive from_model(const DeepModel& model, const Json& config_snapshot);
    // Prototype with the archived shapes; parameters from `packed`. raw_y is
    // the uncentered observation matrix the model was trained on.
    DeepModel instantiate(const Matrix& raw_y) const;
};

}  // namespace deepgp
