#include "deepgp/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "deepgp/io.hpp"

static_assert(std::endian::native == std::endian::little, "archive encoding assumes a little-endian host");

namespace deepgp {

namespace {

constexpr const char* kMagic = "DEEPGP-ARCHIVE";

Json report_to_json(const BoundReport& r) {
    return Json{{"total", r.total},         {"per_datapoint", r.per_datapoint}, {"leaf_terms", r.leaf_terms},
                {"mid_terms", r.mid_terms}, {"entropies", r.entropies},         {"kl_parent", r.kl_parent}};
}

BoundReport report_from_json(const Json& j) {
    BoundReport r;
    r.total = j.at("total").get<double>();
    r.per_datapoint = j.at("per_datapoint").get<double>();
    r.leaf_terms = j.at("leaf_terms").get<std::vector<double>>();
    r.mid_terms = j.at("mid_terms").get<std::vector<std::vector<double>>>();
    r.entropies = j.at("entropies").get<std::vector<double>>();
    r.kl_parent = j.at("kl_parent").get<double>();
    return r;
}

Json vector_to_json(const Vector& v) {
    Json arr = Json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Vector vector_from_json(const Json& j) {
    Vector v(static_cast<Index>(j.size()));
    Index i = 0;
    for (const auto& x : j) v[i++] = x.get<double>();
    return v;
}

}  // namespace

void ModelArchive::save(const std::filesystem::path& path) const {
    Json meta;
    meta["build"] = build;
    meta["config"] = config;
    meta["provenance"] = Json{{"seed", seed}, {"iterations", iterations}, {"status", status}};
    meta["bound"] = report_to_json(final_report);
    Json cols = Json::array();
    for (const auto& layer : columns) {
        Json layer_json = Json::array();
        for (const auto& group : layer) layer_json.push_back(group);
        cols.push_back(layer_json);
    }
    meta["model"] = Json{{"points", points},
                         {"observed_dim", observed_dim},
                         {"layer_dims", layer_dims},
                         {"columns", cols},
                         {"inducing_counts", inducing_counts},
                         {"output_offset", vector_to_json(output_offset)},
                         {"input_offset", vector_to_json(input_offset)},
                         {"input_scale", vector_to_json(input_scale)},
                         {"freeze_parent", freeze_parent}};
    meta["parameter_count"] = packed.size();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "archive: cannot open ", path.string(), " for writing");
    out << kMagic << ' ' << format_version << '\n';
    out << meta.dump() << '\n';
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size() * sizeof(double)));
    require(out.good(), "archive: write failed for ", path.string());
}

ModelArchive ModelArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "archive: cannot open ", path.string());
    std::string magic_line;
    require(static_cast<bool>(std::getline(in, magic_line)), "archive: ", path.string(), " is empty");
    std::istringstream magic_stream(magic_line);
    std::string magic;
    int version = -1;
    magic_stream >> magic >> version;
    require<ConfigError>(magic == kMagic, "archive: ", path.string(), " is not a model archive");
    require<ConfigError>(version == 1, "archive: ", path.string(), " has format version ", version,
                         "; this build reads version 1 only and refuses to reinterpret");

    std::string meta_line;
    require(static_cast<bool>(std::getline(in, meta_line)), "archive: missing metadata line");
    Json meta;
    try {
        meta = Json::parse(meta_line);
    } catch (const Json::exception& e) {
        throw ConfigError(cat("archive: bad metadata: ", e.what()));
    }

    ModelArchive a;
    a.format_version = version;
    a.build = meta.at("build").get<std::string>();
    a.config = meta.at("config");
    a.seed = meta.at("provenance").at("seed").get<std::uint64_t>();
    a.iterations = meta.at("provenance").at("iterations").get<int>();
    a.status = meta.at("provenance").at("status").get<std::string>();
    a.final_report = report_from_json(meta.at("bound"));
    const Json& model = meta.at("model");
    a.points = model.at("points").get<Index>();
    a.observed_dim = model.at("observed_dim").get<Index>();
    a.layer_dims = model.at("layer_dims").get<std::vector<Index>>();
    for (const auto& layer : model.at("columns")) {
        std::vector<std::vector<Index>> groups;
        for (const auto& group : layer) groups.push_back(group.get<std::vector<Index>>());
        a.columns.push_back(std::move(groups));
    }
    a.inducing_counts = model.at("inducing_counts").get<std::vector<std::vector<Index>>>();
    a.output_offset = vector_from_json(model.at("output_offset"));
    a.input_offset = vector_from_json(model.at("input_offset"));
    a.input_scale = vector_from_json(model.at("input_scale"));
    a.freeze_parent = model.at("freeze_parent").get<bool>();

    const Index count = meta.at("parameter_count").get<Index>();
    a.packed.resize(count);
    in.read(reinterpret_cast<char*>(a.packed.data()), static_cast<std::streamsize>(count * sizeof(double)));
    require(in.gcount() == static_cast<std::streamsize>(count * sizeof(double)), "archive: truncated parameter block");
    return a;
}

ModelArchive ModelArchive::from_model(const DeepModel& model, const Json& config_snapshot) {
    model.validate();
    ModelArchive a;
    a.config = config_snapshot;
    a.points = model.points();
    a.observed_dim = model.data.cols();
    a.output_offset = model.output_offset.size() ? model.output_offset : Vector::Zero(model.data.cols());
    for (Index i = 0; i < model.depth(); ++i) {
        const auto& layer = model.layers[static_cast<std::size_t>(i)];
        std::vector<std::vector<Index>> cols;
        std::vector<Index> ks;
        for (const auto& grp : layer.groups) {
            cols.push_back(grp.columns);
            ks.push_back(grp.inducing.rows());
        }
        a.columns.push_back(std::move(cols));
        a.inducing_counts.push_back(std::move(ks));
        a.layer_dims.push_back(i + 1 < model.depth() ? model.input_dim(i) : -1);
    }
    a.layer_dims.back() = model.q_parent.dims();
    const ParameterLayout layout = make_layout(model);
    a.packed = pack(model, layout);
    return a;
}

DeepModel ModelArchive::instantiate(const Matrix& raw_y) const {
    require(raw_y.rows() == points, "archive: dataset has ", raw_y.rows(), " rows, archive expects ", points);
    require(raw_y.cols() == observed_dim, "archive: dataset has ", raw_y.cols(), " columns, archive expects ",
            observed_dim);
    DeepModel proto;
    proto.output_offset = output_offset;
    proto.data = raw_y.rowwise() - output_offset.transpose();
    const Index depth = static_cast<Index>(layer_dims.size());
    proto.layers.resize(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i) {
        auto& layer = proto.layers[static_cast<std::size_t>(i)];
        const Index q_in = layer_dims[static_cast<std::size_t>(i)];
        for (std::size_t g = 0; g < columns[static_cast<std::size_t>(i)].size(); ++g) {
            GpGroup grp;
            grp.columns = columns[static_cast<std::size_t>(i)][g];
            grp.kernel = ArdKernel(1.0, Vector::Constant(q_in, 1.0));
            grp.inducing = Matrix::Zero(inducing_counts[static_cast<std::size_t>(i)][g], q_in);
            grp.noise_variance = 1.0;
            layer.groups.push_back(std::move(grp));
        }
        if (i > 0) {
            const Index q_dim = layer_dims[static_cast<std::size_t>(i - 1)];
            layer.q_out.means = Matrix::Zero(points, q_dim);
            layer.q_out.variances = Matrix::Ones(points, q_dim);
        }
    }
    proto.q_parent.means = Matrix::Zero(points, layer_dims.back());
    proto.q_parent.variances = Matrix::Ones(points, layer_dims.back());

    const ParameterLayout layout = make_layout(proto);
    require(layout.total == packed.size(), "archive: parameter count ", packed.size(), " does not match layout (",
            layout.total, ")");
    return unpack(proto, layout, packed);
}

}  // namespace deepgp
