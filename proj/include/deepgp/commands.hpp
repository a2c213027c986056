#pragma once

#include <filesystem>

#include "deepgp/archive.hpp"
#include "deepgp/config.hpp"
#include "deepgp/modelgen.hpp"

namespace deepgp {

// Exit-code contract: 0 converged/ok, 2 iteration cap, 3 numerical failure,
// 4 config error, 1 other I/O failure.
constexpr int kExitOk = 0;
constexpr int kExitIterationCap = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitConfig = 4;
constexpr int kExitOther = 1;

struct LoadedDataset {
    Matrix y;             // observations the model is trained on
    Matrix inputs;        // regression: training inputs
    Matrix test_inputs;   // regression: held-out inputs
    Matrix test_y;
    std::vector<int> labels;  // labeled kinds
};

LoadedDataset load_dataset(const RunConfig& config);

struct TrainOutcome {
    ModelArchive archive;
    OptimizeStatus status = OptimizeStatus::Converged;
    DeepModel model;
};

// In-process train (no files written); cmd_train wraps this with archive,
// trace, and manifest emission.
TrainOutcome train_model(const RunConfig& config, const LoadedDataset& data, const TraceSink& sink = {});

int cmd_generate(const RunConfig& config);
int cmd_train(const RunConfig& config);
int cmd_evaluate(const RunConfig& config, const std::filesystem::path& archive_path);
int cmd_check_grad(const RunConfig& config);
int cmd_sweep_depth(const RunConfig& config);

// Full command-line entry point used by the binary (and by tests).
int run_cli(int argc, const char* const* argv);

}  // namespace deepgp
