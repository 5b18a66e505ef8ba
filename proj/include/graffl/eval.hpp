#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"

namespace graffl {

struct LogisticModel {
    Vector weights;
    double bias = 0.0;

    [[nodiscard]] Vector predict(const Matrix& x) const;

    friend bool operator==(const LogisticModel&, const LogisticModel&) = default;
};

struct LogisticOptions {
    std::size_t epochs = 200;
    double learning_rate = 0.1;
};

/// Full-batch gradient descent on mean binary cross-entropy. Weights start
/// at small uniform values drawn from `rng`.
LogisticModel fit_logistic(const Matrix& x, std::span<const int> labels, const LogisticOptions& options,
                           RngStream& rng);

/// Mann–Whitney AUC; ties between a positive and a negative count ½.
double auc(std::span<const double> scores, std::span<const int> labels);

/// F1 of the rule score >= cutoff; 0 when precision + recall = 0.
double f1_at_cutoff(std::span<const double> scores, std::span<const int> labels, double cutoff);

/// Midpoint between consecutive sorted unique scores (or the score itself
/// when all are equal) that maximizes F1; ties go to the smallest cutoff.
double select_cutoff(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
    std::string scenario;
    std::string site;
    std::string condition;
    double auc = 0.0;
    double auc_sd = 0.0;
    double f1 = 0.0;
    double cutoff = 0.5;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

/// CSV header for EvalReport rows.
std::string eval_csv_header();
std::string to_csv_row(const EvalReport& report);

}  // namespace graffl
