#ifndef SPECFLOW_SPECTRA_HPP
#define SPECFLOW_SPECTRA_HPP

#include "specflow/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace specflow {

// N x M matrix of non-negative spectral intensities with a strictly
// increasing wavelength grid (nm) and one id per sample row.
struct SpectraMatrix {
    Matrix values;
    std::vector<double> channel_grid;
    std::vector<std::string> sample_ids;

    Index n_samples() const { return values.rows(); }
    Index n_channels() const { return values.cols(); }
    void validate() const;
};

// N x C matrix of oxide weight-percentages.
struct CompositionMatrix {
    Matrix values;
    std::vector<std::string> oxide_names;
    std::vector<std::string> sample_ids;

    Index n_samples() const { return values.rows(); }
    Index n_oxides() const { return values.cols(); }
    void validate() const;
};

// The eight major oxides used as default labels.
const std::vector<std::string>& default_oxide_names();

struct SynthConfig {
    int n_samples = 426;
    int n_channels = 5606;
    int lines_per_oxide = 30;
    double peak_width = 4.0;  // Gaussian FWHM, in channels
    double baseline_level = 1.0;
    double noise_sigma = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthMeta {
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> line_centers;  // per oxide, channel units
    double peak_width = 0.0;
    double baseline_level = 0.0;
    double noise_sigma = 0.0;
};

struct SynthDataset {
    SpectraMatrix spectra;
    CompositionMatrix compositions;
    SynthMeta meta;
};

// Emission-line template per pseudo-oxide: C x M, row c is the sum of
// unit-height Gaussians at that oxide's line centers. Deterministic in seed.
Matrix synth_line_templates(const SynthConfig& cfg);

// Compositions uniform on the simplex scaled to 100 wt.%; spectrum =
// baseline + composition * templates + Gaussian noise, entries clamped at 0.
SynthDataset synth_dataset(const SynthConfig& cfg);

// CSV interchange. Spectra: "wavelength,<g_1>,...,<g_M>" then one
// "<id>,<y_1>,...,<y_M>" row per sample. Compositions: header
// "sample_id,<oxide names>" then one row per sample. Values round-trip
// bit-exactly.
SpectraMatrix load_spectra(const std::string& path);
void save_spectra(const std::string& path, const SpectraMatrix& spectra);
CompositionMatrix load_compositions(const std::string& path);
void save_compositions(const std::string& path, const CompositionMatrix& comps);

// Reorders composition rows to match the spectra sample ids; throws
// MissingSample when an id has no composition row.
CompositionMatrix align_compositions(const SpectraMatrix& spectra,
                                     const CompositionMatrix& comps);

struct SplitResult {
    SpectraMatrix train_spectra;
    CompositionMatrix train_compositions;
    SpectraMatrix holdout_spectra;
    CompositionMatrix holdout_compositions;
    std::vector<Index> train_indices;
    std::vector<Index> holdout_indices;
};

// Disjoint train/holdout partition; holdout size = round(N * fraction),
// required to leave at least one sample on each side. Deterministic in seed.
SplitResult split_dataset(const SpectraMatrix& spectra, const CompositionMatrix& comps,
                          double holdout_fraction, std::uint64_t seed);

}  // namespace specflow

#endif
