#include "specflow/serialize.hpp"

#include <fstream>

#include <json.hpp>

#include "specflow/io.hpp"

namespace specflow {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json parse_json_file(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("missing artifact: " + path.string());
    try {
        return json::parse(read_text_file(path.string()));
    } catch (const json::exception& e) {
        throw ParseError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void expect_kind(const json& j, const std::string& kind, const fs::path& path) {
    if (!j.contains("kind") || j.at("kind") != kind)
        throw ParseError(path.string() + " is not a " + kind + " artifact");
}

fs::path payload_path(const json& j, const fs::path& json_path) {
    fs::path p = json_path.parent_path() / j.at("payload").get<std::string>();
    if (!fs::exists(p)) throw MissingArtifact("missing artifact: " + p.string());
    return p;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string() + " for reading");
    return is;
}

void write_json_file(const fs::path& path, const json& j) {
    write_text_file(path.string(), j.dump(2) + "\n");
}

// Suite payload layout: feature_mean, feature_scale, then per model in oxide
// order: w1, b1, w2, and a 5-vector [target_mean, target_scale, b2,
// train_r2, degenerate flag].
void write_suite_payload(std::ostream& os, const RegressionSuite& suite) {
    bin_write_vector(os, suite.feature_mean);
    bin_write_vector(os, suite.feature_scale);
    for (const auto& m : suite.models) {
        bin_write_matrix(os, m.w1);
        bin_write_vector(os, m.b1);
        bin_write_vector(os, m.w2);
        Vector scalars(5);
        scalars << m.target_mean, m.target_scale, m.b2, m.train_r2,
            (m.degenerate_target ? 1.0 : 0.0);
        bin_write_vector(os, scalars);
    }
}

RegressionSuite read_suite_payload(std::istream& is, InputMode mode, int hidden_width,
                                   std::uint64_t seed,
                                   const std::vector<std::string>& oxides) {
    RegressionSuite suite;
    suite.input_mode = mode;
    suite.hidden_width = hidden_width;
    suite.seed = seed;
    suite.feature_mean = bin_read_vector(is);
    suite.feature_scale = bin_read_vector(is);
    for (const auto& name : oxides) {
        CompositionModel m;
        m.oxide_name = name;
        m.w1 = bin_read_matrix(is);
        m.b1 = bin_read_vector(is);
        m.w2 = bin_read_vector(is);
        Vector scalars = bin_read_vector(is);
        if (scalars.size() != 5) throw ParseError("corrupt suite payload");
        m.target_mean = scalars(0);
        m.target_scale = scalars(1);
        m.b2 = scalars(2);
        m.train_r2 = scalars(3);
        m.degenerate_target = scalars(4) != 0.0;
        suite.models.push_back(std::move(m));
    }
    return suite;
}

}  // namespace

std::vector<fs::path> save_nmf(const NmfModel& model, const fs::path& dir,
                               const std::string& stem) {
    const fs::path json_path = dir / (stem + ".json");
    const fs::path bin_path = dir / (stem + ".bin");
    json j;
    j["kind"] = "nmf";
    j["rank"] = model.rank;
    j["fit_error"] = model.fit_error;
    j["n_iter"] = model.n_iter;
    j["seed"] = model.seed;
    j["objective_trace"] = model.objective_trace;
    j["payload"] = bin_path.filename().string();
    {
        auto os = open_out(bin_path);
        bin_write_matrix(os, model.basis);
        bin_write_matrix(os, model.components);
        Vector grid = Eigen::Map<const Vector>(model.channel_grid.data(),
                                               static_cast<Index>(model.channel_grid.size()));
        bin_write_vector(os, grid);
    }
    write_json_file(json_path, j);
    return {json_path, bin_path};
}

NmfModel load_nmf(const fs::path& json_path) {
    json j = parse_json_file(json_path);
    expect_kind(j, "nmf", json_path);
    try {
        NmfModel model;
        model.rank = j.at("rank").get<int>();
        model.fit_error = j.at("fit_error").get<double>();
        model.n_iter = j.at("n_iter").get<int>();
        model.seed = j.at("seed").get<std::uint64_t>();
        model.objective_trace = j.at("objective_trace").get<std::vector<double>>();
        auto is = open_in(payload_path(j, json_path));
        model.basis = bin_read_matrix(is);
        model.components = bin_read_matrix(is);
        Vector grid = bin_read_vector(is);
        model.channel_grid.assign(grid.data(), grid.data() + grid.size());
        return model;
    } catch (const json::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }
}

std::vector<fs::path> save_flow(const FlowModel& model, const fs::path& dir,
                                const std::string& stem) {
    const fs::path json_path = dir / (stem + ".json");
    const fs::path bin_path = dir / (stem + ".bin");
    json j;
    j["kind"] = "flow";
    j["dim"] = model.dim;
    j["hidden_width"] = model.hidden_width;
    j["scale_clamp"] = model.scale_clamp;
    j["seed"] = model.seed;
    json layers = json::array();
    for (const auto& layer : model.layers)
        layers.push_back({{"pass", layer.pass_idx}, {"act", layer.act_idx}});
    j["layers"] = layers;
    j["payload"] = bin_path.filename().string();
    {
        auto os = open_out(bin_path);
        bin_write_vector(os, model.standardize_mean);
        bin_write_vector(os, model.standardize_scale);
        bin_write_vector(os, model.params());
    }
    write_json_file(json_path, j);
    return {json_path, bin_path};
}

FlowModel load_flow(const fs::path& json_path) {
    json j = parse_json_file(json_path);
    expect_kind(j, "flow", json_path);
    try {
        FlowModel model;
        model.dim = j.at("dim").get<int>();
        model.hidden_width = j.at("hidden_width").get<int>();
        model.scale_clamp = j.at("scale_clamp").get<double>();
        model.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& lj : j.at("layers")) {
            CouplingLayer layer;
            layer.pass_idx = lj.at("pass").get<std::vector<int>>();
            layer.act_idx = lj.at("act").get<std::vector<int>>();
            const auto in = static_cast<Index>(layer.pass_idx.size());
            const auto out = static_cast<Index>(layer.act_idx.size());
            for (CouplingNet* net : {&layer.scale_net, &layer.shift_net}) {
                net->w1 = Matrix::Zero(model.hidden_width, in);
                net->b1 = Vector::Zero(model.hidden_width);
                net->w2 = Matrix::Zero(out, model.hidden_width);
                net->b2 = Vector::Zero(out);
            }
            model.layers.push_back(std::move(layer));
        }
        auto is = open_in(payload_path(j, json_path));
        model.standardize_mean = bin_read_vector(is);
        model.standardize_scale = bin_read_vector(is);
        model.set_params(bin_read_vector(is));
        return model;
    } catch (const json::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }
}

std::vector<fs::path> save_suite(const RegressionSuite& suite, const fs::path& dir,
                                 const std::string& stem) {
    const fs::path json_path = dir / (stem + ".json");
    const fs::path bin_path = dir / (stem + ".bin");
    json j;
    j["kind"] = "regression_suite";
    j["input_mode"] = to_string(suite.input_mode);
    j["hidden_width"] = suite.hidden_width;
    j["seed"] = suite.seed;
    j["feature_dim"] = suite.feature_mean.size();
    json oxides = json::array();
    for (const auto& m : suite.models) oxides.push_back(m.oxide_name);
    j["oxides"] = oxides;
    j["payload"] = bin_path.filename().string();
    {
        auto os = open_out(bin_path);
        write_suite_payload(os, suite);
    }
    write_json_file(json_path, j);
    return {json_path, bin_path};
}

RegressionSuite load_suite(const fs::path& json_path) {
    json j = parse_json_file(json_path);
    expect_kind(j, "regression_suite", json_path);
    try {
        auto mode = input_mode_from_string(j.at("input_mode").get<std::string>());
        auto oxides = j.at("oxides").get<std::vector<std::string>>();
        auto is = open_in(payload_path(j, json_path));
        return read_suite_payload(is, mode, j.at("hidden_width").get<int>(),
                                  j.at("seed").get<std::uint64_t>(), oxides);
    } catch (const json::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }
}

std::vector<fs::path> save_ensemble(const BootstrapEnsemble& ensemble, const fs::path& dir,
                                    const std::string& stem) {
    const fs::path json_path = dir / (stem + ".json");
    const fs::path bin_path = dir / (stem + ".bin");
    const auto& first = ensemble.replicates.front();
    json j;
    j["kind"] = "bootstrap_ensemble";
    j["B"] = ensemble.B;
    j["base_seed"] = ensemble.base_seed;
    j["input_mode"] = to_string(first.input_mode);
    j["hidden_width"] = first.hidden_width;
    j["oxides"] = ensemble.oxide_names;
    j["payload"] = bin_path.filename().string();
    {
        auto os = open_out(bin_path);
        bin_write_matrix(os, ensemble.residual_store);
        for (const auto& suite : ensemble.replicates) write_suite_payload(os, suite);
    }
    write_json_file(json_path, j);
    return {json_path, bin_path};
}

BootstrapEnsemble load_ensemble(const fs::path& json_path) {
    json j = parse_json_file(json_path);
    expect_kind(j, "bootstrap_ensemble", json_path);
    try {
        BootstrapEnsemble ensemble;
        ensemble.B = j.at("B").get<int>();
        ensemble.base_seed = j.at("base_seed").get<std::uint64_t>();
        ensemble.oxide_names = j.at("oxides").get<std::vector<std::string>>();
        auto mode = input_mode_from_string(j.at("input_mode").get<std::string>());
        const int hidden = j.at("hidden_width").get<int>();
        auto is = open_in(payload_path(j, json_path));
        ensemble.residual_store = bin_read_matrix(is);
        for (int rep = 0; rep < ensemble.B; ++rep) {
            ensemble.replicates.push_back(
                read_suite_payload(is, mode, hidden,
                                   ensemble.base_seed + static_cast<std::uint64_t>(rep),
                                   ensemble.oxide_names));
        }
        return ensemble;
    } catch (const json::exception& e) {
        throw ParseError(json_path.string() + ": " + e.what());
    }
}

}  // namespace specflow
