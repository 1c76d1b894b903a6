#include "trafficlm/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trafficlm/error.hpp"

namespace trafficlm {

PowerLawFit fit_power_law(std::vector<double> values, std::size_t min_tail) {
    if (min_tail < 2) min_tail = 2;
    std::sort(values.begin(), values.end());
    // Zero eigenvalues carry no tail information.
    values.erase(values.begin(), std::upper_bound(values.begin(), values.end(), 0.0));
    const std::size_t n = values.size();
    if (n < min_tail) {
        throw FitFailed("only " + std::to_string(n) + " positive values, need " + std::to_string(min_tail));
    }

    std::vector<double> suffix_log(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) suffix_log[i] = suffix_log[i + 1] + std::log(values[i]);

    std::optional<PowerLawFit> best;
    for (std::size_t start = 0; start + min_tail <= n; ++start) {
        if (start > 0 && values[start] == values[start - 1]) continue;
        // A constant tail has no spread to fit; the log sum would only be round-off.
        if (values[start] == values.back()) break;
        const double xmin = values[start];
        const std::size_t tail = n - start;
        const double log_sum = suffix_log[start] - double(tail) * std::log(xmin);
        if (!(log_sum > 0.0)) continue;
        const double alpha = 1.0 + double(tail) / log_sum;
        double ks = 0.0;
        for (std::size_t i = 0; i < tail; ++i) {
            const double model_cdf = 1.0 - std::pow(values[start + i] / xmin, 1.0 - alpha);
            ks = std::max({ks, model_cdf - double(i) / double(tail), double(i + 1) / double(tail) - model_cdf});
        }
        if (!best || ks < best->ks_distance) best = PowerLawFit{alpha, xmin, ks, tail};
    }
    if (!best) throw FitFailed("no tail with " + std::to_string(min_tail) + " or more distinct-valued points");
    return *best;
}

std::vector<double> correlation_eigenvalues(const Eigen::MatrixXd &weight) {
    const Eigen::MatrixXd w = weight.rows() >= weight.cols() ? weight : Eigen::MatrixXd(weight.transpose());
    const Eigen::MatrixXd corr = (w.transpose() * w) / double(w.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr, Eigen::EigenvaluesOnly);
    const auto &ev = solver.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

LayerSpectrum layer_spectrum(const std::string &name, const Eigen::MatrixXd &weight, std::size_t min_tail) {
    LayerSpectrum layer;
    layer.name = name;
    layer.rows = static_cast<std::size_t>(weight.rows());
    layer.cols = static_cast<std::size_t>(weight.cols());
    layer.eigenvalues = correlation_eigenvalues(weight);
    layer.lambda_max = layer.eigenvalues.empty() ? 0.0 : layer.eigenvalues.back();
    // Round-off can leave tiny negative eigenvalues of a PSD matrix.
    for (auto &e : layer.eigenvalues) {
        if (e < 0.0 && e > -1e-9 * std::max(layer.lambda_max, 1e-300)) e = 0.0;
    }
    const double lo = layer.eigenvalues.empty() ? 0.0 : layer.eigenvalues.front();
    layer.degenerate = layer.lambda_max - lo <= 1e-9 * std::abs(layer.lambda_max);
    if (layer.degenerate) {
        layer.note = "degenerate spectrum: all eigenvalues equal";
        return layer;
    }
    try {
        layer.fit = fit_power_law(layer.eigenvalues, min_tail);
    } catch (const FitFailed &e) {
        layer.note = e.what();
    }
    return layer;
}

SpectrumReport esd_alpha(const Classifier &model, std::size_t min_tail) {
    SpectrumReport report;
    model.params().visit([&](const std::string &name, const Mat<float> &m) {
        if (m.rows() < 2 || m.cols() < 2) return;
        report.layers.push_back(layer_spectrum(name, m.cast<double>(), min_tail));
    });
    if (report.layers.empty()) throw FitFailed("model has no weight matrix with both dimensions >= 2");
    return report;
}

std::string SpectrumReport::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "layer,n_eigs,alpha,lambda_max\n";
    for (const auto &l : layers) {
        out << l.name << ',' << l.eigenvalues.size() << ',';
        if (l.fit) out << l.fit->alpha;
        out << ',' << l.lambda_max << '\n';
    }
    return out.str();
}

}  // namespace trafficlm
