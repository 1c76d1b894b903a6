#include "trafficlm/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "trafficlm/csv.hpp"
#include "trafficlm/error.hpp"
#include "trafficlm/schema.hpp"

namespace trafficlm {

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes) {
    if (y_true.size() != y_pred.size()) {
        throw LengthMismatch(std::to_string(y_true.size()) + " true labels vs " + std::to_string(y_pred.size()) +
                             " predictions");
    }
    ConfusionMatrix cm(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        for (auto y : {y_true[i], y_pred[i]}) {
            if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
                throw LabelOutOfRange("label " + std::to_string(y) + " at sample " + std::to_string(i) +
                                      " outside [0, " + std::to_string(n_classes) + ")");
            }
        }
        ++cm[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    }
    return cm;
}

double roc_auc(std::span<const int> y_true, std::span<const double> scores) {
    if (y_true.size() != scores.size()) {
        throw LengthMismatch(std::to_string(y_true.size()) + " labels vs " + std::to_string(scores.size()) + " scores");
    }
    std::size_t n_pos = 0;
    for (auto y : y_true) n_pos += (y != 0);
    const std::size_t n_neg = y_true.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateClass("AUC needs both positive and negative samples");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    // Sum of 1-based average ranks of the positives.
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j);
        for (auto k = i; k < j; ++k) {
            if (y_true[order[k]] != 0) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double u = pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1);
    return u / (double(n_pos) * double(n_neg));
}

EvalReport classification_report(std::span<const int> y_true, std::span<const int> y_pred, const Mat<double> *y_prob,
                                  std::size_t n_classes, std::vector<std::string> names) {
    if (names.empty()) {
        if (n_classes == kNumClasses) {
            for (auto n : class_names()) names.emplace_back(n);
        } else {
            for (std::size_t c = 0; c < n_classes; ++c) names.push_back("class_" + std::to_string(c));
        }
    }
    if (names.size() != n_classes) throw LengthMismatch("class name count differs from n_classes");
    if (y_prob && (static_cast<std::size_t>(y_prob->rows()) != y_true.size() ||
                   static_cast<std::size_t>(y_prob->cols()) != n_classes)) {
        throw LengthMismatch("probability matrix is " + std::to_string(y_prob->rows()) + "x" +
                             std::to_string(y_prob->cols()) + ", expected " + std::to_string(y_true.size()) + "x" +
                             std::to_string(n_classes));
    }

    EvalReport report;
    report.confusion = confusion_matrix(y_true, y_pred, n_classes);
    report.total = y_true.size();
    std::size_t trace = 0;
    for (std::size_t c = 0; c < n_classes; ++c) trace += report.confusion[c][c];
    report.accuracy = report.total ? double(trace) / double(report.total) : 0.0;

    for (std::size_t c = 0; c < n_classes; ++c) {
        ClassMetrics m;
        m.name = names[c];
        const auto tp = report.confusion[c][c];
        std::size_t predicted = 0;
        for (std::size_t r = 0; r < n_classes; ++r) predicted += report.confusion[r][c];
        for (auto v : report.confusion[c]) m.support += v;
        if (predicted) {
            m.precision = double(tp) / double(predicted);
        } else {
            report.warnings.push_back("precision of " + m.name + " set to 0: no predicted samples");
        }
        if (m.support) {
            m.recall = double(tp) / double(m.support);
        } else {
            report.warnings.push_back("recall of " + m.name + " set to 0: no true samples");
        }
        if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);

        if (y_prob) {
            std::vector<int> binary(y_true.size());
            std::vector<double> scores(y_true.size());
            for (std::size_t i = 0; i < y_true.size(); ++i) {
                binary[i] = y_true[i] == static_cast<int>(c);
                scores[i] = (*y_prob)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            }
            try {
                m.auc = roc_auc(binary, scores);
            } catch (const DegenerateClass &) {
                report.warnings.push_back("AUC of " + m.name + " undefined: single-class ground truth");
            }
        }
        report.classes.push_back(std::move(m));
    }

    for (const auto &m : report.classes) {
        report.macro.precision += m.precision / double(n_classes);
        report.macro.recall += m.recall / double(n_classes);
        report.macro.f1 += m.f1 / double(n_classes);
        if (report.total) {
            const double w = double(m.support) / double(report.total);
            report.weighted.precision += w * m.precision;
            report.weighted.recall += w * m.recall;
            report.weighted.f1 += w * m.f1;
        }
    }
    return report;
}

std::string EvalReport::to_table() const {
    std::size_t width = 12;
    for (const auto &m : classes) width = std::max(width, m.name.size() + 2);
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(static_cast<int>(width)) << "Class" << std::right << std::setw(11) << "Precision"
        << std::setw(9) << "Recall" << std::setw(10) << "F1-Score" << std::setw(10) << "Support" << std::setw(9)
        << "AUC" << '\n';
    for (const auto &m : classes) {
        out << std::left << std::setw(static_cast<int>(width)) << m.name << std::right << std::setw(11) << m.precision
            << std::setw(9) << m.recall << std::setw(10) << m.f1 << std::setw(10) << m.support;
        if (m.auc) {
            out << std::setw(9) << std::setprecision(4) << *m.auc << std::setprecision(2);
        } else {
            out << std::setw(9) << "-";
        }
        out << '\n';
    }
    out << '\n';
    out << std::left << std::setw(static_cast<int>(width)) << "Accuracy" << std::right << std::setw(30) << accuracy
        << std::setw(10) << total << '\n';
    for (const auto &[label, avg] : {std::pair{"Macro Avg", macro}, std::pair{"Weighted Avg", weighted}}) {
        out << std::left << std::setw(static_cast<int>(width)) << label << std::right << std::setw(11)
            << avg.precision << std::setw(9) << avg.recall << std::setw(10) << avg.f1 << std::setw(10) << total
            << '\n';
    }
    return out.str();
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["accuracy"] = accuracy;
    j["total"] = total;
    auto avg = [](const AverageMetrics &a) {
        return nlohmann::json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
    };
    j["macro_avg"] = avg(macro);
    j["weighted_avg"] = avg(weighted);
    j["classes"] = nlohmann::json::array();
    for (const auto &m : classes) {
        nlohmann::json c{{"name", m.name}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                         {"support", m.support}};
        c["auc"] = m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr);
        j["classes"].push_back(c);
    }
    j["confusion_matrix"] = confusion;
    j["warnings"] = warnings;
    return j.dump(2);
}

std::string EvalReport::confusion_csv() const {
    std::ostringstream out;
    csv::Record header{"true\\pred"};
    for (const auto &m : classes) header.push_back(m.name);
    csv::write_record(out, header);
    for (std::size_t r = 0; r < confusion.size(); ++r) {
        csv::Record row{classes[r].name};
        for (auto v : confusion[r]) row.push_back(std::to_string(v));
        csv::write_record(out, row);
    }
    return out.str();
}

}  // namespace trafficlm
