#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trafficlm/model.hpp"

namespace trafficlm {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

/// cell[i][j] = number of samples with true class i predicted as j.
/// LengthMismatch on unequal inputs, LabelOutOfRange for labels outside [0, n_classes).
ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t n_classes = 15);

/// Area under the ROC curve as P(score_pos > score_neg) + P(tie)/2, from
/// average ranks. `y_true` holds 0/1. DegenerateClass when only one class
/// is present, LengthMismatch on unequal inputs.
double roc_auc(std::span<const int> y_true, std::span<const double> scores);

struct ClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    /// One-vs-rest AUC; absent when the class has no positives or no negatives
    /// in the evaluated set, or no probabilities were supplied.
    std::optional<double> auc;
};

struct AverageMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    std::vector<ClassMetrics> classes;
    AverageMetrics macro;
    AverageMetrics weighted;
    double accuracy = 0.0;
    std::size_t total = 0;
    ConfusionMatrix confusion;
    /// Zero-division and skipped-AUC notices.
    std::vector<std::string> warnings;

    /// Fixed-width precision/recall/F1/support table with accuracy, macro
    /// and weighted rows.
    std::string to_table() const;
    std::string to_json() const;
    /// Header row of predicted class names; one row per true class.
    std::string confusion_csv() const;
};

/// Per-class precision/recall/F1 (0 when a denominator is 0), macro and
/// support-weighted averages, accuracy, confusion matrix, and per-class AUC
/// from `y_prob` [n, n_classes] when given.
EvalReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                 const Mat<double> *y_prob = nullptr, std::size_t n_classes = 15,
                                 std::vector<std::string> names = {});

}  // namespace trafficlm
