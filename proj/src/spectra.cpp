#include "specflow/spectra.hpp"

#include "specflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace specflow {

namespace {

constexpr double kWavelengthMin = 240.0;  // nm, typical LIBS range
constexpr double kWavelengthMax = 905.0;

// FWHM -> Gaussian sigma
double fwhm_to_sigma(double fwhm) { return fwhm / 2.3548200450309493; }

std::vector<double> linear_grid(int m) {
    std::vector<double> grid(m);
    if (m == 1) {
        grid[0] = kWavelengthMin;
        return grid;
    }
    double step = (kWavelengthMax - kWavelengthMin) / (m - 1);
    for (int j = 0; j < m; ++j) grid[j] = kWavelengthMin + step * j;
    return grid;
}

std::vector<std::vector<double>> draw_line_centers(const SynthConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, cfg.n_channels - 1.0);
    std::vector<std::vector<double>> centers(default_oxide_names().size());
    for (auto& per_oxide : centers) {
        per_oxide.resize(cfg.lines_per_oxide);
        for (auto& c : per_oxide) c = unif(rng);
    }
    return centers;
}

Matrix templates_from_centers(const std::vector<std::vector<double>>& centers,
                              int n_channels, double peak_width) {
    const double sigma = fwhm_to_sigma(peak_width);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    Matrix t = Matrix::Zero(static_cast<Index>(centers.size()), n_channels);
    for (Index c = 0; c < t.rows(); ++c) {
        for (double center : centers[static_cast<std::size_t>(c)]) {
            for (int j = 0; j < n_channels; ++j) {
                double d = j - center;
                t(c, j) += std::exp(-d * d * inv2s2);
            }
        }
    }
    return t;
}

}  // namespace

void SpectraMatrix::validate() const {
    if (values.rows() < 1 || values.cols() < 1)
        throw SizeMismatch("spectra matrix must have at least one sample and one channel");
    if (static_cast<Index>(channel_grid.size()) != values.cols())
        throw SizeMismatch("channel grid length does not match column count");
    if (static_cast<Index>(sample_ids.size()) != values.rows())
        throw SizeMismatch("sample id count does not match row count");
    for (std::size_t j = 1; j < channel_grid.size(); ++j) {
        if (!(channel_grid[j] > channel_grid[j - 1]))
            throw NonMonotoneGrid("channel grid is not strictly increasing at index " +
                                  std::to_string(j));
    }
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            if (values(i, j) < 0.0)
                throw NegativeIntensity("negative intensity at row " + std::to_string(i) +
                                        ", col " + std::to_string(j));
        }
    }
}

void CompositionMatrix::validate() const {
    if (values.rows() < 1 || values.cols() < 1)
        throw SizeMismatch("composition matrix must have at least one sample and one oxide");
    if (static_cast<Index>(oxide_names.size()) != values.cols())
        throw SizeMismatch("oxide name count does not match column count");
    if (static_cast<Index>(sample_ids.size()) != values.rows())
        throw SizeMismatch("sample id count does not match row count");
    if (values.minCoeff() < 0.0)
        throw NegativeConcentration("negative concentration entry");
}

const std::vector<std::string>& default_oxide_names() {
    static const std::vector<std::string> names = {"SiO2", "TiO2",  "Al2O3", "FeOT",
                                                   "MgO",  "CaO",   "Na2O",  "K2O"};
    return names;
}

void SynthConfig::validate() const {
    if (n_samples < 1 || n_channels < 1 || lines_per_oxide < 1)
        throw InvalidConfig("synth counts must be >= 1");
    if (!(peak_width > 0.0)) throw InvalidConfig("peak_width must be > 0");
    if (baseline_level < 0.0) throw InvalidConfig("baseline_level must be >= 0");
    if (noise_sigma < 0.0) throw InvalidConfig("noise_sigma must be >= 0");
}

Matrix synth_line_templates(const SynthConfig& cfg) {
    cfg.validate();
    return templates_from_centers(draw_line_centers(cfg), cfg.n_channels, cfg.peak_width);
}

SynthDataset synth_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const Index n = cfg.n_samples;
    const Index m = cfg.n_channels;
    const auto& oxides = default_oxide_names();
    const Index c = static_cast<Index>(oxides.size());

    SynthDataset out;
    out.meta.seed = cfg.seed;
    out.meta.line_centers = draw_line_centers(cfg);
    out.meta.peak_width = cfg.peak_width;
    out.meta.baseline_level = cfg.baseline_level;
    out.meta.noise_sigma = cfg.noise_sigma;

    Matrix templates = templates_from_centers(out.meta.line_centers, cfg.n_channels,
                                              cfg.peak_width);

    // Draw order is fixed: line centers (above, same stream restarted), then
    // compositions sample-major, then noise row-major.
    std::mt19937_64 rng(cfg.seed);
    {
        std::uniform_real_distribution<double> unif(0.0, cfg.n_channels - 1.0);
        for (Index i = 0; i < c * cfg.lines_per_oxide; ++i) unif(rng);  // skip center draws
    }

    Matrix comp(n, c);
    std::exponential_distribution<double> expo(1.0);
    for (Index i = 0; i < n; ++i) {
        double total = 0.0;
        for (Index k = 0; k < c; ++k) {
            comp(i, k) = expo(rng);
            total += comp(i, k);
        }
        comp.row(i) *= 100.0 / total;
    }

    Matrix spectra = comp * templates;
    spectra.array() += cfg.baseline_level;
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < m; ++j) spectra(i, j) += noise(rng);
    }
    spectra = spectra.cwiseMax(0.0);

    out.spectra.values = std::move(spectra);
    out.spectra.channel_grid = linear_grid(cfg.n_channels);
    out.spectra.sample_ids.reserve(n);
    for (Index i = 0; i < n; ++i) out.spectra.sample_ids.push_back("s" + std::to_string(i));
    out.spectra.validate();

    out.compositions.values = std::move(comp);
    out.compositions.oxide_names = oxides;
    out.compositions.sample_ids = out.spectra.sample_ids;
    out.compositions.validate();
    return out;
}

SpectraMatrix load_spectra(const std::string& path) {
    auto lines = split_lines(read_text_file(path));
    if (lines.size() < 2) throw ParseError(path + ": expected a grid row and at least one sample");

    auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "wavelength")
        throw ParseError(path + ": first row must be 'wavelength,<g_1>,...,<g_M>'");
    const std::size_t m = header.size() - 1;

    SpectraMatrix s;
    s.channel_grid.resize(m);
    for (std::size_t j = 0; j < m; ++j)
        s.channel_grid[j] = parse_double(header[j + 1], path + " grid entry " + std::to_string(j));
    for (std::size_t j = 1; j < m; ++j) {
        if (!(s.channel_grid[j] > s.channel_grid[j - 1]))
            throw NonMonotoneGrid(path + ": grid not strictly increasing at entry " +
                                  std::to_string(j));
    }

    const std::size_t n = lines.size() - 1;
    s.values.resize(static_cast<Index>(n), static_cast<Index>(m));
    s.sample_ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto fields = split_csv_line(lines[i + 1]);
        if (fields.size() != m + 1)
            throw RaggedRow(path + ": row " + std::to_string(i + 2) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(m + 1));
        s.sample_ids.push_back(fields[0]);
        for (std::size_t j = 0; j < m; ++j) {
            double v = parse_double(fields[j + 1], path + " row " + std::to_string(i + 2));
            if (v < 0.0)
                throw NegativeIntensity(path + ": negative intensity at row " +
                                        std::to_string(i + 2) + ", col " + std::to_string(j + 1));
            s.values(static_cast<Index>(i), static_cast<Index>(j)) = v;
        }
    }
    s.validate();
    return s;
}

void save_spectra(const std::string& path, const SpectraMatrix& spectra) {
    spectra.validate();
    std::ostringstream out;
    out << "wavelength";
    for (double g : spectra.channel_grid) out << ',' << format_double(g);
    out << '\n';
    for (Index i = 0; i < spectra.n_samples(); ++i) {
        out << spectra.sample_ids[static_cast<std::size_t>(i)];
        for (Index j = 0; j < spectra.n_channels(); ++j)
            out << ',' << format_double(spectra.values(i, j));
        out << '\n';
    }
    write_text_file(path, out.str());
}

CompositionMatrix load_compositions(const std::string& path) {
    auto lines = split_lines(read_text_file(path));
    if (lines.size() < 2) throw ParseError(path + ": expected a header and at least one sample");

    auto header = split_csv_line(lines[0]);
    if (header.empty() || header[0] != "sample_id")
        throw ParseError(path + ": header must be 'sample_id,<oxide names>'");
    if (header.size() < 2) throw MissingSample(path + ": no oxide columns");
    const std::size_t c = header.size() - 1;

    CompositionMatrix comps;
    comps.oxide_names.assign(header.begin() + 1, header.end());
    const std::size_t n = lines.size() - 1;
    comps.values.resize(static_cast<Index>(n), static_cast<Index>(c));
    comps.sample_ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto fields = split_csv_line(lines[i + 1]);
        if (fields.size() != c + 1)
            throw RaggedRow(path + ": row " + std::to_string(i + 2) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(c + 1));
        comps.sample_ids.push_back(fields[0]);
        for (std::size_t j = 0; j < c; ++j) {
            double v = parse_double(fields[j + 1], path + " row " + std::to_string(i + 2));
            if (v < 0.0)
                throw NegativeConcentration(path + ": negative concentration at row " +
                                            std::to_string(i + 2));
            comps.values(static_cast<Index>(i), static_cast<Index>(j)) = v;
        }
    }
    comps.validate();
    return comps;
}

void save_compositions(const std::string& path, const CompositionMatrix& comps) {
    comps.validate();
    std::ostringstream out;
    out << "sample_id";
    for (const auto& name : comps.oxide_names) out << ',' << name;
    out << '\n';
    for (Index i = 0; i < comps.n_samples(); ++i) {
        out << comps.sample_ids[static_cast<std::size_t>(i)];
        for (Index j = 0; j < comps.n_oxides(); ++j) out << ',' << format_double(comps.values(i, j));
        out << '\n';
    }
    write_text_file(path, out.str());
}

CompositionMatrix align_compositions(const SpectraMatrix& spectra,
                                     const CompositionMatrix& comps) {
    std::unordered_map<std::string, Index> row_of;
    for (Index i = 0; i < comps.n_samples(); ++i)
        row_of.emplace(comps.sample_ids[static_cast<std::size_t>(i)], i);

    CompositionMatrix out;
    out.oxide_names = comps.oxide_names;
    out.sample_ids = spectra.sample_ids;
    out.values.resize(spectra.n_samples(), comps.n_oxides());
    for (Index i = 0; i < spectra.n_samples(); ++i) {
        auto it = row_of.find(spectra.sample_ids[static_cast<std::size_t>(i)]);
        if (it == row_of.end())
            throw MissingSample("no composition row for sample '" +
                                spectra.sample_ids[static_cast<std::size_t>(i)] + "'");
        out.values.row(i) = comps.values.row(it->second);
    }
    out.validate();
    return out;
}

SplitResult split_dataset(const SpectraMatrix& spectra, const CompositionMatrix& comps,
                          double holdout_fraction, std::uint64_t seed) {
    spectra.validate();
    comps.validate();
    const Index n = spectra.n_samples();
    if (comps.n_samples() != n)
        throw SizeMismatch("spectra and compositions disagree on sample count");
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
        throw InvalidConfig("holdout_fraction must lie in (0, 1)");
    const Index holdout_n = static_cast<Index>(std::llround(n * holdout_fraction));
    if (holdout_n < 1 || holdout_n >= n)
        throw InvalidConfig("holdout size " + std::to_string(holdout_n) +
                            " must leave at least one sample on each side");

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    SplitResult res;
    res.holdout_indices.assign(order.begin(), order.begin() + holdout_n);
    res.train_indices.assign(order.begin() + holdout_n, order.end());
    std::sort(res.holdout_indices.begin(), res.holdout_indices.end());
    std::sort(res.train_indices.begin(), res.train_indices.end());

    auto take = [&](const std::vector<Index>& idx, SpectraMatrix& sp, CompositionMatrix& cm) {
        sp.channel_grid = spectra.channel_grid;
        sp.values.resize(static_cast<Index>(idx.size()), spectra.n_channels());
        cm.oxide_names = comps.oxide_names;
        cm.values.resize(static_cast<Index>(idx.size()), comps.n_oxides());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            sp.values.row(static_cast<Index>(k)) = spectra.values.row(idx[k]);
            cm.values.row(static_cast<Index>(k)) = comps.values.row(idx[k]);
            sp.sample_ids.push_back(spectra.sample_ids[static_cast<std::size_t>(idx[k])]);
            cm.sample_ids.push_back(comps.sample_ids[static_cast<std::size_t>(idx[k])]);
        }
    };
    take(res.train_indices, res.train_spectra, res.train_compositions);
    take(res.holdout_indices, res.holdout_spectra, res.holdout_compositions);
    return res;
}

}  // namespace specflow
