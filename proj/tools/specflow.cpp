#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "specflow/pipeline.hpp"

namespace {

specflow::PipelineConfig resolve_config(const std::string& config_path, bool seed_given,
                                        std::uint64_t seed) {
    specflow::PipelineConfig cfg;
    if (!config_path.empty()) cfg = specflow::load_config(config_path);
    if (seed_given) cfg.seed = seed;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NMF + normalizing-flow density model over spectra, with per-oxide "
                 "composition prediction intervals"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool force = false;

    std::string model_dir;
    std::string spectra_path;
    std::string truths_path;
    int n_samples = 1;
    double level = 0.95;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* c = sub->add_option("--config", config_path, "pipeline config JSON");
        if (need_config) c->required();
        sub->add_option("--seed", seed, "seed override");
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_flag("--force", force, "overwrite a non-empty output directory");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic spectra dataset");
    add_common(synth, false);
    synth->callback([&] {
        auto cfg = resolve_config(config_path, synth->count("--seed") > 0, seed);
        auto files = specflow::run_synth(cfg, out_dir, force);
        for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
    });

    auto* fit = app.add_subcommand("fit", "fit nmf, flow, regressors and bootstrap ensemble");
    add_common(fit, true);
    fit->callback([&] {
        auto cfg = resolve_config(config_path, fit->count("--seed") > 0, seed);
        auto out = specflow::run_fit(cfg, out_dir, force);
        std::cout << "selected rank " << out.selected_rank << '\n';
        for (const auto& t : out.timings)
            std::cout << t.stage << ": " << t.seconds << " s\n";
        std::cout << "wrote " << out.artifact_hashes.size() << " artifacts, manifest "
                  << out.manifest_path.string() << '\n';
    });

    auto* sample = app.add_subcommand("sample", "draw spectra from a fitted model");
    sample->add_option("model_dir", model_dir, "fit output directory")->required();
    sample->add_option("--n", n_samples, "number of spectra to draw");
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--out", out_dir, "output directory")->required();
    sample->add_flag("--force", force, "overwrite a non-empty output directory");
    sample->callback([&] {
        auto out = specflow::run_sample(model_dir, n_samples, seed, out_dir, force);
        std::cout << "clamp rate: " << out.clamp_rate << " (" << out.clamped << " of "
                  << out.total << " latent entries)\n";
        std::cout << "wrote " << out.csv_path.string() << '\n';
    });

    auto* predict = app.add_subcommand("predict", "prediction intervals for spectra");
    predict->add_option("model_dir", model_dir, "fit output directory")->required();
    predict->add_option("spectra", spectra_path, "spectra CSV")->required();
    predict->add_option("--truths", truths_path, "compositions CSV for coverage scoring");
    predict->add_option("--level", level, "confidence level in (0, 1)");
    predict->add_option("--out", out_dir, "output directory")->required();
    predict->add_flag("--force", force, "overwrite a non-empty output directory");
    predict->callback([&] {
        std::optional<std::filesystem::path> truths;
        if (!truths_path.empty()) truths = truths_path;
        auto out = specflow::run_predict(model_dir, spectra_path, truths, level, out_dir, force);
        std::cout << "wrote " << out.intervals_path.string() << '\n';
        if (out.report) {
            for (std::size_t i = 0; i < out.report->oxide_names.size(); ++i)
                std::cout << out.report->oxide_names[i] << ": "
                          << out.report->coverage_percent[i] << "% covered\n";
            std::cout << "wrote " << out.coverage_path->string() << '\n';
        }
    });

    auto* logprob = app.add_subcommand("logprob", "latent log-density of spectra");
    logprob->add_option("model_dir", model_dir, "fit output directory")->required();
    logprob->add_option("spectra", spectra_path, "spectra CSV")->required();
    logprob->add_option("--out", out_dir, "output directory")->required();
    logprob->add_flag("--force", force, "overwrite a non-empty output directory");
    logprob->callback([&] {
        auto out = specflow::run_logprob(model_dir, spectra_path, out_dir, force);
        std::cout << "wrote " << out.string() << '\n';
    });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const specflow::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const specflow::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const specflow::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
