#include "doctest.h"

#include "specflow/io.hpp"
#include "specflow/spectra.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <string>

using namespace specflow;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Path of the built command-line binary. ctest exports SPECFLOW_BIN; the
// fallbacks cover running the test binary by hand from the build tree.
std::string cli_path() {
    if (const char* env = std::getenv("SPECFLOW_BIN"); env != nullptr && *env != '\0')
        return env;
    for (const char* cand : {"tools/specflow", "../tools/specflow", "build/tools/specflow"})
        if (fs::exists(cand)) return cand;
    return "specflow";
}

TempDir& capture_dir() {
    static TempDir dir("cli_capture");
    return dir;
}

// Runs the binary with the given arguments, captures combined stdout/stderr,
// and returns the exit status.
int run_cli(const std::string& args, std::string* output = nullptr) {
    static int counter = 0;
    const std::string out_file = capture_dir().file("out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = cli_path() + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output != nullptr) *output = read_text_file(out_file);
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

int count_lines_containing(const std::string& text, const std::string& needle) {
    int n = 0;
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

std::string tiny_config_json(const fs::path& data_dir) {
    json j;
    j["spectra"] = (data_dir / "spectra.csv").string();
    j["compositions"] = (data_dir / "compositions.csv").string();
    j["seed"] = 11;
    j["synth"] = {{"n_samples", 30}, {"n_channels", 60}, {"lines_per_oxide", 2},
                  {"noise_sigma", 0.2}};
    j["split"] = {{"holdout_fraction", 0.3}};
    j["nmf"] = {{"rank", 3}, {"max_iter", 200}, {"tol", 1e-5}};
    j["flow"] = {{"n_layers", 2}, {"hidden_width", 8}, {"epochs", 30}, {"batch_size", 16}};
    j["regress"] = {{"hidden_width", 8}, {"epochs", 60}, {"batch_size", 16}};
    j["uq"] = {{"B", 4}};
    return j.dump();
}

// One shared synth + fit workspace so the subcommand cases do not refit the
// model per test. Built lazily on first use, removed at process exit.
struct Workspace {
    TempDir dir{"cli_ws"};
    fs::path config = dir.path / "config.json";
    fs::path data = dir.path / "data";
    fs::path run = dir.path / "run";

    Workspace() {
        write_text_file(config.string(), tiny_config_json(data));
        REQUIRE(run_cli("synth --config " + config.string() + " --out " + data.string()) == 0);
        REQUIRE(run_cli("fit --config " + config.string() + " --out " + run.string()) == 0);
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("cli: help and argument errors use the documented exit codes") {
    std::string out;
    CHECK(run_cli("--help", &out) == 0);
    for (const char* sub : {"synth", "fit", "sample", "predict", "logprob"})
        CHECK(contains(out, sub));

    CHECK(run_cli("", &out) == 1);
    CHECK(run_cli("frobnicate", &out) == 1);
    CHECK(run_cli("fit --out somewhere", &out) == 1);
    CHECK(contains(out, "--config"));
    CHECK(run_cli("synth", &out) == 1);
    CHECK(contains(out, "--out"));
}

TEST_CASE("cli: synth reports written files and refuses an occupied directory") {
    TempDir dir("cli_synth");
    const std::string cfg_path = dir.file("config.json");
    write_text_file(cfg_path, tiny_config_json(dir.path / "data"));
    const std::string out_arg = " --config " + cfg_path + " --out " + (dir.path / "data").string();

    std::string out;
    CHECK(run_cli("synth" + out_arg, &out) == 0);
    CHECK(count_lines_containing(out, "wrote ") == 3);
    CHECK(contains(out, "spectra.csv"));
    CHECK(contains(out, "compositions.csv"));

    CHECK(run_cli("synth" + out_arg, &out) == 1);
    CHECK(contains(out, "--force"));
    CHECK(run_cli("synth" + out_arg + " --force", &out) == 0);
}

TEST_CASE("cli: fit prints the selected rank, stage timings and manifest path") {
    std::string out;
    TempDir dir("cli_fit");
    CHECK(run_cli("fit --config " + ws().config.string() + " --out " +
                      (dir.path / "run").string(),
                  &out) == 0);
    CHECK(contains(out, "selected rank 3"));
    for (const char* stage : {"load", "split", "nmf", "flow", "regress", "uq", "serialize"})
        CHECK(contains(out, std::string(stage) + ": "));
    CHECK(contains(out, "manifest"));
    CHECK(fs::exists(dir.path / "run" / "manifest.json"));

    CHECK(run_cli("fit --config " + dir.file("missing.json") + " --out " +
                      (dir.path / "run2").string(),
                  &out) == 2);
}

TEST_CASE("cli: sample reports the clamp rate and is seed-deterministic") {
    TempDir dir("cli_sample");
    const std::string base = "sample " + ws().run.string() + " --n 5 --seed 7 --out ";

    std::string out;
    CHECK(run_cli(base + (dir.path / "a").string(), &out) == 0);
    CHECK(contains(out, "clamp rate: "));
    CHECK(contains(out, " of 15 latent entries)"));
    CHECK(contains(out, "generated_spectra.csv"));

    SpectraMatrix drawn = load_spectra((dir.path / "a" / "generated_spectra.csv").string());
    CHECK(drawn.values.rows() == 5);
    CHECK(drawn.values.cols() == 60);
    CHECK(drawn.values.minCoeff() >= 0.0);

    CHECK(run_cli(base + (dir.path / "b").string(), &out) == 0);
    CHECK(file_hash_hex((dir.path / "a" / "generated_spectra.csv").string()) ==
          file_hash_hex((dir.path / "b" / "generated_spectra.csv").string()));

    CHECK(run_cli("sample " + ws().run.string() + " --n 5 --seed 8 --out " +
                      (dir.path / "c").string(),
                  &out) == 0);
    CHECK(file_hash_hex((dir.path / "a" / "generated_spectra.csv").string()) !=
          file_hash_hex((dir.path / "c" / "generated_spectra.csv").string()));

    CHECK(run_cli("sample " + ws().run.string() + " --n 0 --out " + (dir.path / "d").string(),
                  &out) == 1);
    CHECK(run_cli("sample " + dir.file("no_model") + " --out " + (dir.path / "e").string(),
                  &out) == 2);
}

TEST_CASE("cli: predict writes intervals and prints per-oxide coverage with truths") {
    TempDir dir("cli_predict");
    const std::string spectra = (ws().data / "spectra.csv").string();
    const std::string truths = (ws().data / "compositions.csv").string();

    std::string out;
    CHECK(run_cli("predict " + ws().run.string() + " " + spectra + " --truths " + truths +
                      " --level 0.9 --out " + (dir.path / "p").string(),
                  &out) == 0);
    CHECK(count_lines_containing(out, "% covered") == 8);
    CHECK(contains(out, "SiO2: "));
    CHECK(contains(out, "coverage.json"));

    const std::string intervals = read_text_file((dir.path / "p" / "intervals.csv").string());
    CHECK(contains(intervals, "sample_id,oxide,level,lower,point,upper"));

    CHECK(run_cli("predict " + ws().run.string() + " " + spectra + " --out " +
                      (dir.path / "q").string(),
                  &out) == 0);
    CHECK(count_lines_containing(out, "% covered") == 0);
    CHECK(!fs::exists(dir.path / "q" / "coverage.json"));

    CHECK(run_cli("predict " + ws().run.string() + " " + spectra + " --level 1.0 --out " +
                      (dir.path / "r").string(),
                  &out) == 1);
}

TEST_CASE("cli: logprob writes one score per sample and flags non-finite input") {
    TempDir dir("cli_logprob");
    const std::string spectra = (ws().data / "spectra.csv").string();

    std::string out;
    CHECK(run_cli("logprob " + ws().run.string() + " " + spectra + " --out " +
                      (dir.path / "lp").string(),
                  &out) == 0);
    const std::string scores = read_text_file((dir.path / "lp" / "logprob.csv").string());
    CHECK(contains(scores, "sample_id,log_prob"));
    CHECK(count_lines_containing(scores, "\n") >= 31);

    SpectraMatrix bad = load_spectra(spectra);
    bad.values(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const std::string bad_path = dir.file("bad_spectra.csv");
    save_spectra(bad_path, bad);
    CHECK(run_cli("logprob " + ws().run.string() + " " + bad_path + " --out " +
                      (dir.path / "lp_bad").string(),
                  &out) == 3);
    CHECK(contains(out, "numeric error"));
}
