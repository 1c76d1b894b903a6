#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trafficlm/model.hpp"

namespace trafficlm {

struct PowerLawFit {
    double alpha = 0.0;
    double xmin = 0.0;
    double ks_distance = 0.0;
    std::size_t n_tail = 0;
};

/// Continuous power-law fit p(x) ~ x^-alpha for x >= xmin. For each candidate
/// xmin (every distinct value leaving at least `min_tail` points) alpha is the
/// maximum-likelihood estimate 1 + n / sum(ln(x / xmin)); the xmin with the
/// smallest Kolmogorov-Smirnov distance wins. FitFailed when no candidate
/// qualifies or values are non-positive.
PowerLawFit fit_power_law(std::vector<double> values, std::size_t min_tail = 5);

/// Eigenvalues (ascending) of W^T W / N with W oriented N x M, N >= M.
std::vector<double> correlation_eigenvalues(const Eigen::MatrixXd &weight);

struct LayerSpectrum {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> eigenvalues;
    double lambda_max = 0.0;
    std::optional<PowerLawFit> fit;
    /// All eigenvalues equal (no tail to fit).
    bool degenerate = false;
    std::string note;
};

struct SpectrumReport {
    std::vector<LayerSpectrum> layers;

    /// layer,n_eigs,alpha,lambda_max (alpha empty when the fit failed).
    std::string to_csv() const;
};

/// Spectrum and power-law exponent of every 2-D weight with both sides >= 2.
SpectrumReport esd_alpha(const Classifier &model, std::size_t min_tail = 5);

/// Same, for a single named matrix.
LayerSpectrum layer_spectrum(const std::string &name, const Eigen::MatrixXd &weight, std::size_t min_tail = 5);

}  // namespace trafficlm
