#include "specflow/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "specflow/flow.hpp"
#include "specflow/io.hpp"
#include "specflow/serialize.hpp"

namespace specflow {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) known = true;
        if (!known)
            throw InvalidConfig("unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw InvalidConfig(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// Rejects a non-empty target unless force is set.
void ensure_out_dir_usable(const fs::path& out_dir, bool force) {
    try {
        if (fs::exists(out_dir)) {
            if (!fs::is_directory(out_dir))
                throw ValidationError(out_dir.string() + " exists and is not a directory");
            if (!fs::is_empty(out_dir) && !force)
                throw ValidationError("output directory " + out_dir.string() +
                                      " is not empty; pass --force to overwrite");
        }
    } catch (const fs::filesystem_error& e) {
        throw IoError(std::string("cannot inspect output directory: ") + e.what());
    }
}

// Clears a forced non-empty target and creates the directory. Inputs must be
// loaded before this runs.
void prepare_out_dir(const fs::path& out_dir, bool force) {
    ensure_out_dir_usable(out_dir, force);
    try {
        if (fs::exists(out_dir) && !fs::is_empty(out_dir)) fs::remove_all(out_dir);
        fs::create_directories(out_dir);
    } catch (const fs::filesystem_error& e) {
        throw IoError(std::string("cannot prepare output directory: ") + e.what());
    }
}

json vector_json(const std::vector<double>& v) { return json(v); }

json double_or_null(double x) {
    if (std::isnan(x)) return nullptr;
    return x;
}

void write_json_file(const fs::path& path, const json& j) {
    write_text_file(path.string(), j.dump(2) + "\n");
}

json parse_json_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }
}

struct Timer {
    std::vector<StageTiming>& timings;
    double t0 = 0.0;
    explicit Timer(std::vector<StageTiming>& t) : timings(t) {}
    template <typename F>
    auto stage(const std::string& name, F&& fn) {
        t0 = now_seconds();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            timings.push_back({name, now_seconds() - t0});
        } else {
            auto result = fn();
            timings.push_back({name, now_seconds() - t0});
            return result;
        }
    }
};

void require_rows(const SpectraMatrix& spectra, const fs::path& path) {
    if (spectra.values.rows() < 1)
        throw EmptyDataset(path.string() + " holds no spectra rows");
}

}  // namespace

void PipelineConfig::validate() const {
    synth.validate();
    if (!(split.holdout_fraction > 0.0 && split.holdout_fraction < 1.0))
        throw InvalidConfig("split.holdout_fraction must lie in (0, 1)");
    if (nmf.rank < 1) throw InvalidConfig("nmf.rank must be >= 1");
    for (int r : nmf.rank_candidates)
        if (r < 1) throw InvalidConfig("nmf.rank_candidates entries must be >= 1");
    if (nmf.max_iter < 1) throw InvalidConfig("nmf.max_iter must be >= 1");
    if (!(nmf.tol >= 0.0)) throw InvalidConfig("nmf.tol must be >= 0");
    if (flow.n_layers < 1 || flow.hidden_width < 1 || flow.epochs < 1 || flow.batch_size < 1 ||
        !(flow.lr > 0.0))
        throw InvalidConfig("bad flow stage configuration");
    if (regress.hidden_width < 1 || regress.epochs < 0 || regress.batch_size < 1 ||
        !(regress.lr > 0.0))
        throw InvalidConfig("bad regress stage configuration");
    if (uq.B < 2) throw InvalidConfig("uq.B must be >= 2");
    if (!(uq.level > 0.0 && uq.level < 1.0)) throw InvalidConfig("uq.level must lie in (0, 1)");
}

PipelineConfig parse_config(const std::string& json_text) {
    json j = parse_json_text(json_text);
    if (!j.is_object()) throw InvalidConfig("config root must be a JSON object");
    check_keys(j, {"spectra", "compositions", "synth", "split", "nmf", "flow", "regress", "uq",
                   "seed"},
               "config");

    PipelineConfig cfg;
    maybe(j, "spectra", cfg.spectra);
    maybe(j, "compositions", cfg.compositions);
    maybe(j, "seed", cfg.seed);

    if (j.contains("synth")) {
        const json& s = j.at("synth");
        check_keys(s,
                   {"n_samples", "n_channels", "lines_per_oxide", "peak_width", "baseline_level",
                    "noise_sigma"},
                   "synth");
        maybe(s, "n_samples", cfg.synth.n_samples);
        maybe(s, "n_channels", cfg.synth.n_channels);
        maybe(s, "lines_per_oxide", cfg.synth.lines_per_oxide);
        maybe(s, "peak_width", cfg.synth.peak_width);
        maybe(s, "baseline_level", cfg.synth.baseline_level);
        maybe(s, "noise_sigma", cfg.synth.noise_sigma);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        check_keys(s, {"holdout_fraction"}, "split");
        maybe(s, "holdout_fraction", cfg.split.holdout_fraction);
    }
    if (j.contains("nmf")) {
        const json& s = j.at("nmf");
        check_keys(s, {"rank", "rank_candidates", "max_iter", "tol"}, "nmf");
        if (s.contains("rank") && s.contains("rank_candidates"))
            throw InvalidConfig("nmf.rank and nmf.rank_candidates are mutually exclusive");
        maybe(s, "rank", cfg.nmf.rank);
        maybe(s, "rank_candidates", cfg.nmf.rank_candidates);
        maybe(s, "max_iter", cfg.nmf.max_iter);
        maybe(s, "tol", cfg.nmf.tol);
    }
    if (j.contains("flow")) {
        const json& s = j.at("flow");
        check_keys(s, {"n_layers", "hidden_width", "epochs", "lr", "batch_size"}, "flow");
        maybe(s, "n_layers", cfg.flow.n_layers);
        maybe(s, "hidden_width", cfg.flow.hidden_width);
        maybe(s, "epochs", cfg.flow.epochs);
        maybe(s, "lr", cfg.flow.lr);
        maybe(s, "batch_size", cfg.flow.batch_size);
    }
    if (j.contains("regress")) {
        const json& s = j.at("regress");
        check_keys(s, {"input_mode", "hidden_width", "epochs", "lr", "batch_size"}, "regress");
        if (s.contains("input_mode"))
            cfg.regress.input_mode = input_mode_from_string(s.at("input_mode").get<std::string>());
        maybe(s, "hidden_width", cfg.regress.hidden_width);
        maybe(s, "epochs", cfg.regress.epochs);
        maybe(s, "lr", cfg.regress.lr);
        maybe(s, "batch_size", cfg.regress.batch_size);
    }
    if (j.contains("uq")) {
        const json& s = j.at("uq");
        check_keys(s, {"B", "level"}, "uq");
        maybe(s, "B", cfg.uq.B);
        maybe(s, "level", cfg.uq.level);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
    return parse_config(read_text_file(path.string()));
}

std::string config_json(const PipelineConfig& cfg) {
    json j;
    j["spectra"] = cfg.spectra;
    j["compositions"] = cfg.compositions;
    j["seed"] = cfg.seed;
    j["synth"] = {{"n_samples", cfg.synth.n_samples},
                  {"n_channels", cfg.synth.n_channels},
                  {"lines_per_oxide", cfg.synth.lines_per_oxide},
                  {"peak_width", cfg.synth.peak_width},
                  {"baseline_level", cfg.synth.baseline_level},
                  {"noise_sigma", cfg.synth.noise_sigma}};
    j["split"] = {{"holdout_fraction", cfg.split.holdout_fraction}};
    j["nmf"] = {{"max_iter", cfg.nmf.max_iter}, {"tol", cfg.nmf.tol}};
    if (cfg.nmf.rank_candidates.empty())
        j["nmf"]["rank"] = cfg.nmf.rank;
    else
        j["nmf"]["rank_candidates"] = cfg.nmf.rank_candidates;
    j["flow"] = {{"n_layers", cfg.flow.n_layers},
                 {"hidden_width", cfg.flow.hidden_width},
                 {"epochs", cfg.flow.epochs},
                 {"lr", cfg.flow.lr},
                 {"batch_size", cfg.flow.batch_size}};
    j["regress"] = {{"input_mode", to_string(cfg.regress.input_mode)},
                    {"hidden_width", cfg.regress.hidden_width},
                    {"epochs", cfg.regress.epochs},
                    {"lr", cfg.regress.lr},
                    {"batch_size", cfg.regress.batch_size}};
    j["uq"] = {{"B", cfg.uq.B}, {"level", cfg.uq.level}};
    return j.dump(2) + "\n";
}

std::vector<fs::path> run_synth(const PipelineConfig& cfg, const fs::path& out_dir, bool force) {
    cfg.validate();
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.seed;
    SynthDataset data = synth_dataset(sc);

    prepare_out_dir(out_dir, force);
    const fs::path spectra_path = out_dir / "spectra.csv";
    const fs::path comps_path = out_dir / "compositions.csv";
    const fs::path meta_path = out_dir / "synth_meta.json";
    save_spectra(spectra_path.string(), data.spectra);
    save_compositions(comps_path.string(), data.compositions);

    json meta;
    meta["n_samples"] = sc.n_samples;
    meta["n_channels"] = sc.n_channels;
    meta["lines_per_oxide"] = sc.lines_per_oxide;
    meta["peak_width"] = sc.peak_width;
    meta["baseline_level"] = sc.baseline_level;
    meta["noise_sigma"] = sc.noise_sigma;
    meta["seed"] = sc.seed;
    json centers = json::array();
    for (const auto& per_oxide : data.meta.line_centers) centers.push_back(per_oxide);
    meta["line_centers"] = centers;
    write_json_file(meta_path, meta);
    return {spectra_path, comps_path, meta_path};
}

FitOutputs run_fit(const PipelineConfig& cfg, const fs::path& out_dir, bool force) {
    cfg.validate();
    if (cfg.spectra.empty() || cfg.compositions.empty())
        throw InvalidConfig("fit needs both spectra and compositions paths in the config");

    ensure_out_dir_usable(out_dir, force);

    FitOutputs out;
    out.out_dir = out_dir;
    Timer timer(out.timings);

    SpectraMatrix spectra;
    CompositionMatrix comps;
    timer.stage("load", [&] {
        spectra = load_spectra(cfg.spectra);
        comps = align_compositions(spectra, load_compositions(cfg.compositions));
        spectra.validate();
        comps.validate();
    });

    SplitResult split = timer.stage("split", [&] {
        return split_dataset(spectra, comps, cfg.split.holdout_fraction, cfg.seed);
    });

    NmfOptions nmf_opts{cfg.nmf.max_iter, cfg.nmf.tol, cfg.seed};
    RankSelection rank_sel;
    out.selected_rank = cfg.nmf.rank;
    if (!cfg.nmf.rank_candidates.empty()) {
        rank_sel = timer.stage("rank_selection", [&] {
            return select_rank(split.train_spectra, cfg.nmf.rank_candidates, 5, cfg.seed,
                               nmf_opts);
        });
        out.selected_rank = rank_sel.chosen_rank;
    }

    NmfModel nmf = timer.stage("nmf", [&] {
        return nmf_fit(split.train_spectra, out.selected_rank, nmf_opts);
    });

    auto [flow, flow_report] = timer.stage("flow", [&] {
        FlowModel init = new_flow(out.selected_rank, cfg.flow.n_layers, cfg.flow.hidden_width,
                                  cfg.seed);
        FlowTrainConfig ft{cfg.flow.epochs, cfg.flow.lr, cfg.flow.batch_size, cfg.seed};
        return train_flow(init, nmf.basis, ft);
    });

    const Matrix& features = cfg.regress.input_mode == InputMode::latent
                                 ? nmf.basis
                                 : split.train_spectra.values;
    RegressConfig rc{cfg.regress.hidden_width, cfg.regress.epochs, cfg.regress.lr,
                     cfg.regress.batch_size, cfg.seed};
    RegressionSuite suite = timer.stage("regress", [&] {
        return train_suite(features, split.train_compositions, rc, cfg.regress.input_mode);
    });

    BootstrapEnsemble ensemble = timer.stage("uq", [&] {
        return bootstrap_fit(features, split.train_compositions, cfg.uq.B, rc, cfg.seed,
                             cfg.regress.input_mode);
    });

    prepare_out_dir(out_dir, force);
    std::vector<fs::path> artifacts;
    timer.stage("serialize", [&] {
        json sj;
        sj["seed"] = cfg.seed;
        sj["holdout_fraction"] = cfg.split.holdout_fraction;
        sj["train_indices"] = split.train_indices;
        sj["holdout_indices"] = split.holdout_indices;
        sj["train_ids"] = split.train_spectra.sample_ids;
        sj["holdout_ids"] = split.holdout_spectra.sample_ids;
        const fs::path split_path = out_dir / "split.json";
        write_json_file(split_path, sj);
        artifacts.push_back(split_path);

        const fs::path hs = out_dir / "holdout_spectra.csv";
        const fs::path hc = out_dir / "holdout_compositions.csv";
        save_spectra(hs.string(), split.holdout_spectra);
        save_compositions(hc.string(), split.holdout_compositions);
        artifacts.push_back(hs);
        artifacts.push_back(hc);

        if (!cfg.nmf.rank_candidates.empty()) {
            json rj;
            rj["candidate_ranks"] = rank_sel.candidate_ranks;
            rj["cv_errors"] = vector_json(rank_sel.cv_errors);
            rj["chosen_rank"] = rank_sel.chosen_rank;
            const fs::path rp = out_dir / "rank_selection.json";
            write_json_file(rp, rj);
            artifacts.push_back(rp);
        }

        for (auto& p : save_nmf(nmf, out_dir)) artifacts.push_back(p);
        for (auto& p : save_flow(flow, out_dir)) artifacts.push_back(p);
        for (auto& p : save_suite(suite, out_dir)) artifacts.push_back(p);
        for (auto& p : save_ensemble(ensemble, out_dir)) artifacts.push_back(p);

        json tj;
        tj["epoch_nll"] = vector_json(flow_report.epoch_nll);
        json r2 = json::array();
        for (const auto& m : suite.models) r2.push_back(double_or_null(m.train_r2));
        tj["suite_train_r2"] = r2;
        tj["nmf_fit_error"] = nmf.fit_error;
        tj["nmf_iterations"] = nmf.n_iter;
        const fs::path tp = out_dir / "training_report.json";
        write_json_file(tp, tj);
        artifacts.push_back(tp);
    });

    for (const auto& p : artifacts)
        out.artifact_hashes[p.filename().string()] = file_hash_hex(p.string());

    json manifest;
    manifest["command"] = "fit";
    manifest["seed"] = cfg.seed;
    manifest["selected_rank"] = out.selected_rank;
    manifest["config"] = parse_json_text(config_json(cfg));
    json hashes;
    for (const auto& [name, hash] : out.artifact_hashes) hashes[name] = hash;
    manifest["artifacts"] = hashes;
    json timings;
    for (const auto& t : out.timings) timings[t.stage] = t.seconds;
    manifest["timings"] = timings;
    out.manifest_path = out_dir / "manifest.json";
    write_json_file(out.manifest_path, manifest);
    return out;
}

SampleOutputs run_sample(const fs::path& model_dir, int n, std::uint64_t seed,
                         const fs::path& out_dir, bool force) {
    if (n < 1) throw InvalidConfig("sample count must be >= 1");
    NmfModel nmf = load_nmf(model_dir / "nmf.json");
    FlowModel flow = load_flow(model_dir / "flow.json");

    Matrix latent = flow.sample(n, seed);
    SampleOutputs out;
    out.total = latent.size();
    out.clamped = (latent.array() < 0.0).count();
    out.clamp_rate = static_cast<double>(out.clamped) / static_cast<double>(out.total);
    latent = latent.cwiseMax(0.0);

    SpectraMatrix generated = nmf.inverse_transform(latent);
    prepare_out_dir(out_dir, force);
    out.csv_path = out_dir / "generated_spectra.csv";
    save_spectra(out.csv_path.string(), generated);

    json meta;
    meta["n"] = n;
    meta["seed"] = seed;
    meta["clamped_entries"] = out.clamped;
    meta["total_entries"] = out.total;
    meta["clamp_rate"] = out.clamp_rate;
    write_json_file(out_dir / "sample_meta.json", meta);
    return out;
}

PredictOutputs run_predict(const fs::path& model_dir, const fs::path& spectra_path,
                           const std::optional<fs::path>& truths_path, double level,
                           const fs::path& out_dir, bool force) {
    if (!(level > 0.0 && level < 1.0))
        throw InvalidConfig("confidence level must lie in (0, 1)");
    NmfModel nmf = load_nmf(model_dir / "nmf.json");
    BootstrapEnsemble ensemble = load_ensemble(model_dir / "ensemble.json");

    SpectraMatrix spectra = load_spectra(spectra_path.string());
    require_rows(spectra, spectra_path);
    std::optional<CompositionMatrix> truths;
    if (truths_path) truths = align_compositions(spectra, load_compositions(truths_path->string()));

    Matrix latent = nmf.transform(spectra);
    const Matrix& features = ensemble.replicates.front().input_mode == InputMode::latent
                                 ? latent
                                 : spectra.values;
    auto intervals = predict_intervals(ensemble, features, level);

    prepare_out_dir(out_dir, force);
    PredictOutputs out;
    out.intervals_path = out_dir / "intervals.csv";
    std::ostringstream csv;
    csv << "sample_id,oxide,level,lower,point,upper\n";
    for (std::size_t s = 0; s < intervals.size(); ++s) {
        for (const auto& pi : intervals[s]) {
            csv << spectra.sample_ids[s] << ',' << pi.oxide << ',' << format_double(pi.level)
                << ',' << format_double(pi.lower) << ',' << format_double(pi.point) << ','
                << format_double(pi.upper) << '\n';
        }
    }
    write_text_file(out.intervals_path.string(), csv.str());

    if (truths) {
        CoverageReport report;
        report.oxide_names = ensemble.oxide_names;
        report.coverage_percent = coverage(intervals, *truths);
        report.level = level;
        report.n_samples = spectra.values.rows();
        report.B = ensemble.B;
        report.seed = ensemble.base_seed;

        const auto t = static_cast<Index>(ensemble.oxide_names.size());
        out.point_r2.resize(static_cast<std::size_t>(t));
        for (Index j = 0; j < t; ++j) {
            Vector points(spectra.values.rows());
            for (Index s = 0; s < spectra.values.rows(); ++s)
                points(s) = intervals[static_cast<std::size_t>(s)][static_cast<std::size_t>(j)]
                                .point;
            try {
                out.point_r2[static_cast<std::size_t>(j)] =
                    r2_score(truths->values.col(j), points);
            } catch (const DegenerateVariance&) {
                out.point_r2[static_cast<std::size_t>(j)] =
                    std::numeric_limits<double>::quiet_NaN();
            }
        }

        json cj;
        cj["oxides"] = report.oxide_names;
        cj["coverage_percent"] = vector_json(report.coverage_percent);
        json r2 = json::array();
        for (double v : out.point_r2) r2.push_back(double_or_null(v));
        cj["point_r2"] = r2;
        cj["level"] = report.level;
        cj["n_samples"] = report.n_samples;
        cj["B"] = report.B;
        cj["seed"] = report.seed;
        out.coverage_path = out_dir / "coverage.json";
        write_json_file(*out.coverage_path, cj);
        out.report = std::move(report);
    }
    return out;
}

fs::path run_logprob(const fs::path& model_dir, const fs::path& spectra_path,
                     const fs::path& out_dir, bool force) {
    NmfModel nmf = load_nmf(model_dir / "nmf.json");
    FlowModel flow = load_flow(model_dir / "flow.json");

    SpectraMatrix spectra = load_spectra(spectra_path.string());
    require_rows(spectra, spectra_path);
    Matrix latent = nmf.transform(spectra);
    Vector lp = flow.log_prob_rows(latent);

    prepare_out_dir(out_dir, force);
    const fs::path out_path = out_dir / "logprob.csv";
    std::ostringstream csv;
    csv << "sample_id,log_prob\n";
    for (Index i = 0; i < lp.size(); ++i)
        csv << spectra.sample_ids[static_cast<std::size_t>(i)] << ','
            << format_double(lp(i)) << '\n';
    write_text_file(out_path.string(), csv.str());
    return out_path;
}

}  // namespace specflow
