#include "deepgp/commands.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "deepgp/io.hpp"
#include "deepgp/svg.hpp"

namespace deepgp {

namespace fs = std::filesystem;

namespace {

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("DEEPGP_LOG");
        if (!env) return 1;
        const std::string v(env);
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

template <typename... Args>
void log_info(const Args&... args) {
    if (log_level() >= 1) std::cerr << "[deepgp] " << cat(args...) << '\n';
}

// Snapshot for manifests and archives. The output directory is where results
// landed, not part of what reproduces them; keeping it would break
// byte-identical reruns into fresh directories.
Json config_snapshot(const RunConfig& config) {
    Json j = config.to_json();
    j["out"] = "";
    return j;
}

Json manifest_base(const char* command, const RunConfig& config) {
    Json m;
    m["command"] = command;
    m["build"] = kBuildId;
    m["config"] = config_snapshot(config);
    m["inputs"] = Json::object();
    m["outputs"] = Json::array();
    return m;
}

void add_input_hash(Json& manifest, const std::string& name, const fs::path& path) {
    manifest["inputs"][name] = Json{{"path", path.string()}, {"hash", file_hash(path)}};
}

void write_manifest(Json manifest, const fs::path& dir) {
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

fs::path out_dir(const RunConfig& config) {
    fs::path dir(config.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), "cannot create output directory ", dir.string());
    return dir;
}

std::vector<std::string> numbered_header(const std::string& prefix, Index count) {
    std::vector<std::string> h;
    for (Index i = 0; i < count; ++i) h.push_back(cat(prefix, i));
    return h;
}

Matrix with_index_column(const Matrix& values) {
    Matrix out(values.rows(), values.cols() + 1);
    for (Index i = 0; i < values.rows(); ++i) out(i, 0) = static_cast<double>(i);
    out.rightCols(values.cols()) = values;
    return out;
}

std::vector<Index> csv_index_list(const Table& split, const std::string& role_wanted) {
    const Index idx_col = split.column("index");
    const Index role_col = split.column("role");
    require(idx_col >= 0 && role_col >= 0, "split file needs 'index' and 'role' columns");
    const double want = role_wanted == "train" ? 1.0 : 0.0;
    std::vector<Index> rows;
    for (Index r = 0; r < split.values.rows(); ++r)
        if (split.values(r, role_col) == want) rows.push_back(static_cast<Index>(split.values(r, idx_col)));
    return rows;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset loading

LoadedDataset load_dataset(const RunConfig& config) {
    require<ConfigError>(!config.data.dataset.empty(), "config: data.dataset is required for this command");
    const Table table = read_csv(config.data.dataset);
    LoadedDataset data;
    switch (config.kind) {
        case ExperimentKind::ToyRegression: {
            const Index x_col = table.column("x");
            require<ConfigError>(x_col == 0, "toy-regression dataset must start with an 'x' column");
            require<ConfigError>(!config.data.split.empty(), "toy-regression needs data.split");
            const Table split = read_csv(config.data.split);
            const auto train = csv_index_list(split, "train");
            const auto test = csv_index_list(split, "test");
            const Matrix x = table.values.col(0);
            const Matrix y = table.values.rightCols(table.values.cols() - 1);
            data.inputs = take_rows(x, train);
            data.y = take_rows(y, train);
            data.test_inputs = take_rows(x, test);
            data.test_y = take_rows(y, test);
            break;
        }
        case ExperimentKind::Digits: {
            const Index label_col = table.column(config.data.label_column);
            require<ConfigError>(label_col >= 0, "digits dataset is missing the '", config.data.label_column,
                                 "' column");
            for (Index r = 0; r < table.values.rows(); ++r)
                data.labels.push_back(static_cast<int>(table.values(r, label_col)));
            Matrix y(table.values.rows(), table.values.cols() - 1);
            Index at = 0;
            for (Index c = 0; c < table.values.cols(); ++c)
                if (c != label_col) y.col(at++) = table.values.col(c);
            data.y = std::move(y);
            break;
        }
        case ExperimentKind::ToyHierarchy:
        case ExperimentKind::Custom: {
            const Index label_col = table.column(config.data.label_column);
            if (label_col >= 0) {
                for (Index r = 0; r < table.values.rows(); ++r)
                    data.labels.push_back(static_cast<int>(table.values(r, label_col)));
                Matrix y(table.values.rows(), table.values.cols() - 1);
                Index at = 0;
                for (Index c = 0; c < table.values.cols(); ++c)
                    if (c != label_col) y.col(at++) = table.values.col(c);
                data.y = std::move(y);
            } else {
                data.y = table.values;
            }
            break;
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// generate

namespace {

void generate_toy_hierarchy(const RunConfig& config, const fs::path& dir, Json& manifest) {
    const ToyHierarchyData data = toy_hierarchy_data(config.generator.n, config.seed);
    write_csv(dir / "dataset.csv", numbered_header("y", data.observations.cols()), data.observations);
    write_csv(dir / "truth_top.csv", numbered_header("z", data.truth[0].cols()), data.truth[0]);
    write_csv(dir / "truth_mid.csv", numbered_header("x", data.truth[1].cols()), data.truth[1]);
    manifest["generator"] = Json{{"true_dims_bottom_up", data.true_dims}, {"n", config.generator.n}};
    manifest["outputs"] = {"dataset.csv", "truth_top.csv", "truth_mid.csv"};
}

void generate_toy_regression(const RunConfig& config, const fs::path& dir, Json& manifest) {
    const ToyRegressionData data = toy_regression_data(config.seed);
    Matrix table(data.inputs.rows(), 1 + data.outputs.cols());
    table.col(0) = data.inputs.col(0);
    table.rightCols(data.outputs.cols()) = data.outputs;
    std::vector<std::string> header{"x"};
    for (Index i = 0; i < data.outputs.cols(); ++i) header.push_back(cat("y", i));
    write_csv(dir / "dataset.csv", header, table);
    write_csv(dir / "truth_warp.csv", {"w0"}, data.warped);

    Matrix split(data.inputs.rows(), 2);
    for (Index i = 0; i < data.inputs.rows(); ++i) {
        split(i, 0) = static_cast<double>(i);
        split(i, 1) = 0.0;
    }
    for (Index i : data.train_index) split(i, 1) = 1.0;
    write_csv(dir / "split.csv", {"index", "role"}, split);
    manifest["generator"] = Json{{"n", data.inputs.rows()}, {"train_points", data.train_index.size()}};
    manifest["outputs"] = {"dataset.csv", "truth_warp.csv", "split.csv"};
}

void generate_digits(const RunConfig& config, const fs::path& dir, Json& manifest) {
    Matrix features;
    std::vector<int> labels;
    if (!config.data.usps.empty()) {
        const Table usps = read_csv(config.data.usps);
        add_input_hash(manifest, "usps", config.data.usps);
        const Index label_col = usps.column(config.data.label_column) >= 0 ? usps.column(config.data.label_column) : 0;
        require<ConfigError>(usps.values.cols() == 257, "USPS CSV must have a label plus 256 pixel columns, got ",
                             usps.values.cols());
        Matrix pix(usps.values.rows(), 256);
        Index at = 0;
        for (Index c = 0; c < usps.values.cols(); ++c)
            if (c != label_col) pix.col(at++) = usps.values.col(c);
        // Accept [-1,1] or [0,1] pixel encodings; normalize to [0,1].
        if (pix.minCoeff() < -0.01) pix = (pix.array() + 1.0) / 2.0;
        pix = pix.cwiseMax(0.0).cwiseMin(1.0);

        const int wanted[3] = {0, 1, 6};
        std::vector<Index> keep;
        Rng rng(config.seed);
        for (int cls = 0; cls < 3; ++cls) {
            std::vector<Index> pool;
            for (Index r = 0; r < usps.values.rows(); ++r)
                if (static_cast<int>(usps.values(r, label_col)) == wanted[cls]) pool.push_back(r);
            require<ConfigError>(static_cast<Index>(pool.size()) >= 50, "USPS CSV has only ", pool.size(),
                                 " rows of digit ", wanted[cls], "; need 50");
            const auto pick = rng.stream(static_cast<std::uint64_t>(cls)).sample_without_replacement(
                static_cast<Index>(pool.size()), 50);
            for (Index i : pick) keep.push_back(pool[static_cast<std::size_t>(i)]);
        }
        std::sort(keep.begin(), keep.end());
        features = take_rows(pix, keep);
        for (Index r : keep) labels.push_back(static_cast<int>(usps.values(r, label_col)));
        manifest["generator"] = Json{{"source", "usps"}, {"classes", {0, 1, 6}}, {"per_class", 50}};
    } else {
        const LabeledData synth = synthetic_digits_data(config.seed);
        features = synth.features;
        labels = synth.labels;
        manifest["generator"] = Json{{"source", "synthetic"}, {"classes", {0, 1, 2}}, {"per_class", 50}};
    }
    Matrix table(features.rows(), features.cols() + 1);
    for (Index r = 0; r < features.rows(); ++r) table(r, 0) = labels[static_cast<std::size_t>(r)];
    table.rightCols(features.cols()) = features;
    std::vector<std::string> header{"label"};
    for (Index i = 0; i < features.cols(); ++i) header.push_back(cat("p", i));
    write_csv(dir / "dataset.csv", header, table);
    manifest["outputs"] = {"dataset.csv"};
}

}  // namespace

int cmd_generate(const RunConfig& config) {
    const fs::path dir = out_dir(config);
    Json manifest = manifest_base("generate", config);
    switch (config.kind) {
        case ExperimentKind::ToyHierarchy: generate_toy_hierarchy(config, dir, manifest); break;
        case ExperimentKind::ToyRegression: generate_toy_regression(config, dir, manifest); break;
        case ExperimentKind::Digits: generate_digits(config, dir, manifest); break;
        case ExperimentKind::Custom:
            throw ConfigError("generate: kind 'custom' has no generator; provide your own dataset");
    }
    write_manifest(std::move(manifest), dir);
    log_info("generate: wrote dataset under ", dir.string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

TrainOutcome train_model(const RunConfig& config, const LoadedDataset& data, const TraceSink& sink) {
    OptimizerConfig opt;
    opt.max_iterations = config.optimizer.max_iterations;
    opt.tolerance = config.optimizer.tolerance;
    opt.frozen_iterations = config.optimizer.frozen_iterations;
    opt.restarts = config.optimizer.restarts;
    opt.seed = config.seed;

    TrainOutcome outcome;
    Vector input_offset, input_scale;
    RestartInit init;
    if (config.kind == ExperimentKind::ToyRegression) {
        opt.freeze_parent = true;
        init = [&](int restart, std::uint64_t s) {
            const RegressionInit style = restart % 2 == 0 ? RegressionInit::Identity : RegressionInit::PcaOfOutputs;
            RegressionModel rm = regression_model(data.inputs, data.y, config.hierarchy.layer_dims,
                                                  config.hierarchy.inducing.front(), s, style);
            input_offset = rm.input_offset;
            input_scale = rm.input_scale;
            return rm.model;
        };
    } else {
        const auto* groups = config.hierarchy.groups.empty() ? nullptr : &config.hierarchy.groups;
        init = [&, groups](int, std::uint64_t s) {
            return greedy_init(data.y, config.hierarchy.layer_dims, config.hierarchy.inducing, s, groups);
        };
    }

    OptimizeResult result = optimize_restarts(init, opt, sink);
    outcome.status = result.status;
    outcome.archive = ModelArchive::from_model(result.model, config_snapshot(config));
    outcome.archive.seed = config.seed;
    outcome.archive.iterations = result.iterations;
    outcome.archive.status = result.status == OptimizeStatus::Converged ? "converged" : "iteration-cap";
    outcome.archive.final_report = result.trace.back();
    outcome.archive.freeze_parent = opt.freeze_parent;
    if (input_offset.size()) {
        outcome.archive.input_offset = input_offset;
        outcome.archive.input_scale = input_scale;
    }
    outcome.model = std::move(result.model);
    return outcome;
}

int cmd_train(const RunConfig& config) {
    const fs::path dir = out_dir(config);
    const LoadedDataset data = load_dataset(config);

    std::ofstream trace_file(dir / "trace.jsonl", std::ios::binary);
    require(trace_file.good(), "train: cannot open trace file");
    TraceSink sink = [&](const TraceRecord& rec) {
        Json line;
        line["iteration"] = rec.iteration;
        line["total"] = rec.report.total;
        line["per_datapoint"] = rec.report.per_datapoint;
        line["leaf_terms"] = rec.report.leaf_terms;
        line["mid_terms"] = rec.report.mid_terms;
        line["entropies"] = rec.report.entropies;
        line["kl_parent"] = rec.report.kl_parent;
        line["gradient_norm"] = rec.gradient_norm;
        line["step_size"] = rec.step_size;
        trace_file << line.dump() << '\n';
    };

    TrainOutcome outcome = train_model(config, data, sink);
    outcome.archive.save(dir / "model.dgp");

    Json manifest = manifest_base("train", config);
    add_input_hash(manifest, "dataset", config.data.dataset);
    if (!config.data.split.empty()) add_input_hash(manifest, "split", config.data.split);
    manifest["outputs"] = {"model.dgp", "trace.jsonl"};
    manifest["result"] = Json{{"status", outcome.archive.status},
                              {"iterations", outcome.archive.iterations},
                              {"bound", outcome.archive.final_report.total},
                              {"bound_per_datapoint", outcome.archive.final_report.per_datapoint}};
    write_manifest(std::move(manifest), dir);

    log_info("train: bound ", outcome.archive.final_report.total, " (",
             outcome.archive.final_report.per_datapoint, " per datapoint), status ", outcome.archive.status);
    return outcome.status == OptimizeStatus::Converged ? kExitOk : kExitIterationCap;
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

void emit_ard(const DeepModel& model, const fs::path& dir, std::vector<std::string>& outputs) {
    const auto profiles = ard_profile(model);
    Index rows = 0;
    for (const auto& p : profiles) rows += p.weights.size();
    Matrix table(rows, 6);
    Index at = 0;
    std::vector<std::string> names;
    std::vector<Vector> bars;
    for (const auto& p : profiles) {
        names.push_back(cat("L", p.layer, "g", p.group));
        bars.push_back(p.scaled);
        for (Index q = 0; q < p.weights.size(); ++q) {
            table(at, 0) = static_cast<double>(p.layer);
            table(at, 1) = static_cast<double>(p.group);
            table(at, 2) = static_cast<double>(q);
            table(at, 3) = p.weights[q];
            table(at, 4) = p.scaled[q];
            table(at, 5) = p.relevant[static_cast<std::size_t>(q)] ? 1.0 : 0.0;
            ++at;
        }
    }
    write_csv(dir / "ard.csv", {"layer", "group", "dimension", "weight", "scaled", "relevant"}, table);
    svg_bars(dir / "ard.svg", names, bars, "ARD relevance per mapping (input-variance scaled)");
    outputs.push_back("ard.csv");
    outputs.push_back("ard.svg");
}

std::vector<Index> relevant_dims_of_top(const DeepModel& model) {
    const auto profiles = ard_profile(model);
    // Consumer of the parent layer = the top mapping (layer depth-1, group 0).
    for (const auto& p : profiles) {
        if (p.layer == model.depth() - 1 && p.group == 0) {
            std::vector<Index> dims;
            for (Index q = 0; q < p.scaled.size(); ++q)
                if (p.relevant[static_cast<std::size_t>(q)]) dims.push_back(q);
            if (dims.size() < 2) {  // keep at least two dims for plots
                dims.clear();
                std::vector<Index> order(static_cast<std::size_t>(p.scaled.size()));
                for (Index q = 0; q < p.scaled.size(); ++q) order[static_cast<std::size_t>(q)] = q;
                std::stable_sort(order.begin(), order.end(),
                                 [&](Index a, Index b) { return p.scaled[a] > p.scaled[b]; });
                for (Index i = 0; i < std::min<Index>(2, static_cast<Index>(order.size())); ++i)
                    dims.push_back(order[static_cast<std::size_t>(i)]);
                std::sort(dims.begin(), dims.end());
            }
            return dims;
        }
    }
    return {};
}

void emit_latents(const DeepModel& model, const std::vector<int>& labels, const fs::path& dir,
                  std::vector<std::string>& outputs) {
    for (Index h = 1; h < model.depth(); ++h) {
        const auto& q = model.layers[static_cast<std::size_t>(h)].q_out;
        const std::string name = cat("latents_layer", h, ".csv");
        write_csv(dir / name, numbered_header("mean", q.dims()), q.means);
        outputs.push_back(name);
    }
    write_csv(dir / "latents_parent.csv", numbered_header("mean", model.q_parent.dims()), model.q_parent.means);
    outputs.push_back("latents_parent.csv");

    const auto dims = relevant_dims_of_top(model);
    if (dims.size() >= 2) {
        Matrix xy(model.q_parent.points(), 2);
        xy.col(0) = model.q_parent.means.col(dims[0]);
        xy.col(1) = model.q_parent.means.col(dims[1]);
        svg_scatter(dir / "latents_parent.svg", xy, labels,
                    cat("Top layer projection (dims ", dims[0], ", ", dims[1], ")"));
        outputs.push_back("latents_parent.svg");
    }
}

}  // namespace

int cmd_evaluate(const RunConfig& config, const fs::path& archive_path) {
    const fs::path dir = out_dir(config);
    const LoadedDataset data = load_dataset(config);
    const ModelArchive archive = ModelArchive::load(archive_path);
    const DeepModel model = archive.instantiate(data.y);

    Json manifest = manifest_base("evaluate", config);
    add_input_hash(manifest, "dataset", config.data.dataset);
    add_input_hash(manifest, "archive", archive_path);
    std::vector<std::string> outputs;

    Json metrics;
    metrics["bound_total"] = archive.final_report.total;
    metrics["bound_per_datapoint"] = archive.final_report.per_datapoint;
    metrics["depth"] = model.depth();

    emit_ard(model, dir, outputs);
    emit_latents(model, data.labels, dir, outputs);

    if (config.kind == ExperimentKind::ToyRegression) {
        RegressionModel rm;
        rm.model = model;
        rm.input_offset = archive.input_offset;
        rm.input_scale = archive.input_scale;
        const Matrix pred = rm.predict(data.test_inputs);
        metrics["test_mse"] = mean_squared_error(pred, data.test_y);

        const FlatGp flat = fit_flat_gp(data.inputs, data.y);
        const Matrix flat_pred = flat.predict(data.test_inputs);
        metrics["flat_gp_test_mse"] = mean_squared_error(flat_pred, data.test_y);
        metrics["flat_gp_log_marginal"] = flat.log_marginal;

        Matrix table(pred.rows(), 1 + pred.cols());
        table.col(0) = data.test_inputs.col(0);
        table.rightCols(pred.cols()) = pred;
        std::vector<std::string> header{"x"};
        for (Index i = 0; i < pred.cols(); ++i) header.push_back(cat("pred", i));
        write_csv(dir / "predictions_test.csv", header, table);
        svg_lines(dir / "predictions_test.svg", data.test_inputs, pred, "Deep GP mean predictions on held-out inputs");
        outputs.push_back("predictions_test.csv");
        outputs.push_back("predictions_test.svg");
    }

    if (!data.labels.empty()) {
        const auto dims = relevant_dims_of_top(model);
        metrics["nn_errors_top"] = static_cast<double>(nn_error(model.q_parent.means, data.labels, dims));
        metrics["nn_errors_top_all_dims"] = static_cast<double>(nn_error(model.q_parent.means, data.labels));
        metrics["nn_errors_pixels"] = static_cast<double>(nn_error(data.y, data.labels));
    }

    // Per-layer generative samples along the dominant dimensions.
    const Index side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(model.data.cols()))));
    const bool image_like = side * side == model.data.cols() && side >= 4;
    for (Index h = 1; h <= model.depth(); ++h) {
        PerturbationSpec spec;
        spec.kind = PerturbationSpec::Kind::Grid;
        spec.scale = 2.0;
        const Matrix samples = sample_from_layer(model, h, spec, 9, config.seed);
        const std::string name = h == model.depth() ? std::string("samples_parent") : cat("samples_layer", h);
        write_csv(dir / (name + ".csv"), numbered_header("y", samples.cols()), samples);
        outputs.push_back(name + ".csv");
        if (image_like) {
            svg_image_grid(dir / (name + ".svg"), samples, side, cat("Samples perturbing layer ", h));
            outputs.push_back(name + ".svg");
        }
    }

    Matrix metric_row(1, static_cast<Index>(metrics.size()));
    std::vector<std::string> metric_names;
    Index mc = 0;
    for (const auto& [key, value] : metrics.items()) {
        metric_names.push_back(key);
        metric_row(0, mc++) = value.get<double>();
    }
    write_csv(dir / "metrics.csv", metric_names, metric_row);
    outputs.push_back("metrics.csv");

    manifest["outputs"] = outputs;
    write_manifest(std::move(manifest), dir);
    log_info("evaluate: wrote ", outputs.size(), " files under ", dir.string());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// check-grad

int cmd_check_grad(const RunConfig& config) {
    const fs::path dir = out_dir(config);
    const LoadedDataset data = load_dataset(config);
    TrainOutcome seeded;  // build the initial model only
    RunConfig probe = config;
    probe.optimizer.max_iterations = 1;
    probe.optimizer.frozen_iterations = 0;
    probe.optimizer.restarts = 1;

    DeepModel model;
    if (config.kind == ExperimentKind::ToyRegression) {
        model = regression_model(data.inputs, data.y, config.hierarchy.layer_dims, config.hierarchy.inducing.front(),
                                 config.seed)
                    .model;
    } else {
        const auto* groups = config.hierarchy.groups.empty() ? nullptr : &config.hierarchy.groups;
        model = greedy_init(data.y, config.hierarchy.layer_dims, config.hierarchy.inducing, config.seed, groups);
    }

    const GradCheckReport report = check_model_gradients(model, 1e-5, 1e-5, 200, config.seed);
    Matrix table(static_cast<Index>(report.entries.size()), 5);
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
        const auto& e = report.entries[i];
        table(static_cast<Index>(i), 0) = static_cast<double>(e.coordinate);
        table(static_cast<Index>(i), 1) = e.analytic;
        table(static_cast<Index>(i), 2) = e.numeric;
        table(static_cast<Index>(i), 3) = e.error;
        table(static_cast<Index>(i), 4) = e.pass ? 1.0 : 0.0;
    }
    write_csv(dir / "checkgrad.csv", {"coordinate", "analytic", "numeric", "error", "pass"}, table);

    std::cout << "check-grad: max relative error " << format_double(report.max_error) << ", "
              << report.flagged.size() << " flagged of " << report.entries.size() << " checked\n";
    for (const auto& [segment, err] : report.segment_max)
        std::cout << "  " << segment << ": " << format_double(err) << "\n";

    Json manifest = manifest_base("check-grad", config);
    add_input_hash(manifest, "dataset", config.data.dataset);
    manifest["outputs"] = {"checkgrad.csv"};
    manifest["result"] = Json{{"max_error", report.max_error}, {"flagged", report.flagged.size()}};
    write_manifest(std::move(manifest), dir);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep-depth

int cmd_sweep_depth(const RunConfig& config) {
    require<ConfigError>(!config.sweep.dims_per_depth.empty(),
                         "sweep-depth: config.sweep.dims_per_depth is required for this kind");
    const fs::path dir = out_dir(config);
    const LoadedDataset data = load_dataset(config);

    Matrix table(static_cast<Index>(config.sweep.depths.size()), 6);
    Index row = 0;
    double best_bound = -std::numeric_limits<double>::infinity();
    int best_depth = 0;
    for (int depth : config.sweep.depths) {
        require<ConfigError>(depth >= 1 && static_cast<std::size_t>(depth) <= config.sweep.dims_per_depth.size(),
                             "sweep-depth: no dims configured for depth ", depth);
        RunConfig sub = config;
        sub.hierarchy.layer_dims = config.sweep.dims_per_depth[static_cast<std::size_t>(depth - 1)];
        sub.hierarchy.inducing.assign(sub.hierarchy.layer_dims.size(), config.hierarchy.inducing.front());
        TrainOutcome outcome = train_model(sub, data);
        outcome.archive.save(dir / cat("model_depth", depth, ".dgp"));

        Index nn_top = -1;
        if (!data.labels.empty()) {
            const auto dims = relevant_dims_of_top(outcome.model);
            nn_top = nn_error(outcome.model.q_parent.means, data.labels, dims);
        }
        table(row, 0) = depth;
        table(row, 1) = outcome.archive.final_report.total;
        table(row, 2) = outcome.archive.final_report.per_datapoint;
        table(row, 3) = static_cast<double>(nn_top);
        table(row, 4) = outcome.archive.iterations;
        table(row, 5) = outcome.status == OptimizeStatus::Converged ? 1.0 : 0.0;
        if (outcome.archive.final_report.per_datapoint > best_bound) {
            best_bound = outcome.archive.final_report.per_datapoint;
            best_depth = depth;
        }
        log_info("sweep-depth: depth ", depth, " bound/datapoint ", outcome.archive.final_report.per_datapoint,
                 " nn_top ", nn_top);
        ++row;
    }
    write_csv(dir / "sweep.csv", {"depth", "bound", "bound_per_datapoint", "nn_errors_top", "iterations", "converged"},
              table);

    Json manifest = manifest_base("sweep-depth", config);
    add_input_hash(manifest, "dataset", config.data.dataset);
    manifest["outputs"] = {"sweep.csv"};
    manifest["result"] = Json{{"best_depth", best_depth}, {"best_bound_per_datapoint", best_bound}};
    write_manifest(std::move(manifest), dir);
    std::cout << "sweep-depth: best depth " << best_depth << " (bound/datapoint " << format_double(best_bound)
              << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// CLI front end

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Deep Gaussian process experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string archive_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> restarts;
    std::optional<int> max_iters;
    std::optional<int> threads;

    auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
        auto* opt = cmd->add_option("--config", config_path, "JSON run configuration");
        if (needs_config) opt->required();
        cmd->add_option("--seed", seed, "Override config seed");
        cmd->add_option("--out", out, "Override output directory");
        cmd->add_option("--restarts", restarts, "Override optimizer restarts");
        cmd->add_option("--max-iters", max_iters, "Override optimizer iteration cap");
        cmd->add_option("--threads", threads, "Worker threads for linear algebra");
    };

    CLI::App* generate = app.add_subcommand("generate", "Write an experiment dataset");
    add_common(generate);
    CLI::App* train = app.add_subcommand("train", "Fit a deep GP and archive it");
    add_common(train);
    CLI::App* evaluate = app.add_subcommand("evaluate", "Metrics and plot data from an archive");
    add_common(evaluate);
    evaluate->add_option("--archive", archive_path, "Trained model archive")->required();
    CLI::App* check = app.add_subcommand("check-grad", "Finite-difference gradient audit");
    add_common(check);
    CLI::App* sweep = app.add_subcommand("sweep-depth", "Train and evaluate across depths");
    add_common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig config = RunConfig::load(config_path);
        if (seed) config.seed = *seed;
        if (out) config.out = *out;
        if (restarts) config.optimizer.restarts = *restarts;
        if (max_iters) config.optimizer.max_iterations = *max_iters;
        if (threads) config.threads = *threads;
        require<ConfigError>(config.optimizer.frozen_iterations <= config.optimizer.max_iterations,
                             "config: optimizer.frozen_iterations exceeds max_iterations");
        Eigen::setNbThreads(config.threads);

        if (app.got_subcommand(generate)) return cmd_generate(config);
        if (app.got_subcommand(train)) return cmd_train(config);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(config, archive_path);
        if (app.got_subcommand(check)) return cmd_check_grad(config);
        if (app.got_subcommand(sweep)) return cmd_sweep_depth(config);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
}

}  // namespace deepgp
