#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "specflow/flow.hpp"
#include "specflow/nmf.hpp"
#include "specflow/regress.hpp"
#include "specflow/uq.hpp"

namespace specflow {

// Every model saves as <stem>.json (structure and scalars) plus <stem>.bin
// (matrix and vector payloads, raw little-endian doubles). Loading takes the
// JSON path, resolves the payload next to it, and throws MissingArtifact
// when either file is absent. Each save returns the paths it wrote.

std::vector<std::filesystem::path> save_nmf(const NmfModel& model,
                                            const std::filesystem::path& dir,
                                            const std::string& stem = "nmf");
NmfModel load_nmf(const std::filesystem::path& json_path);

std::vector<std::filesystem::path> save_flow(const FlowModel& model,
                                             const std::filesystem::path& dir,
                                             const std::string& stem = "flow");
FlowModel load_flow(const std::filesystem::path& json_path);

std::vector<std::filesystem::path> save_suite(const RegressionSuite& suite,
                                              const std::filesystem::path& dir,
                                              const std::string& stem = "suite");
RegressionSuite load_suite(const std::filesystem::path& json_path);

std::vector<std::filesystem::path> save_ensemble(const BootstrapEnsemble& ensemble,
                                                 const std::filesystem::path& dir,
                                                 const std::string& stem = "ensemble");
BootstrapEnsemble load_ensemble(const std::filesystem::path& json_path);

}  // namespace specflow
