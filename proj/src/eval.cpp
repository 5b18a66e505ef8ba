#include "graffl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graffl/csv.hpp"
#include "graffl/error.hpp"

namespace graffl {

namespace {

double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

void require_both_classes(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "scores and labels differ in length");
    bool pos = false;
    bool neg = false;
    for (int y : labels) {
        if (y == 1) pos = true;
        else if (y == 0) neg = true;
        else throw Error(ErrorCode::NonBinaryLabel, "labels must be 0 or 1");
    }
    if (!pos || !neg) throw Error(ErrorCode::SingleClassData, "both classes must be present");
}

}  // namespace

Vector LogisticModel::predict(const Matrix& x) const {
    if (x.cols() != weights.size()) throw Error(ErrorCode::DimensionMismatch, "logistic input width mismatch");
    Vector p(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        p[i] = sigmoid(std::inner_product(r.begin(), r.end(), weights.begin(), bias));
    }
    return p;
}

LogisticModel fit_logistic(const Matrix& x, std::span<const int> labels, const LogisticOptions& options,
                           RngStream& rng) {
    if (x.rows() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "rows and labels differ in length");
    require_both_classes(Vector(labels.size(), 0.0), labels);
    const std::size_t d = x.cols();
    LogisticModel model{Vector(d), 0.0};
    for (auto& w : model.weights) w = 0.02 * rng.uniform() - 0.01;
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    Vector gw(d);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        const Vector p = model.predict(x);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double err = p[i] - static_cast<double>(labels[i]);
            const auto r = x.row(i);
            for (std::size_t k = 0; k < d; ++k) gw[k] += err * r[k];
            gb += err;
        }
        for (std::size_t k = 0; k < d; ++k) model.weights[k] -= options.learning_rate * gw[k] * inv_n;
        model.bias -= options.learning_rate * gb * inv_n;
    }
    return model;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    require_both_classes(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Rank-sum with average ranks over tie groups.
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(scores.size() - n_pos);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double f1_at_cutoff(std::span<const double> scores, std::span<const int> labels, double cutoff) {
    require_both_classes(scores, labels);
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= cutoff;
        if (predicted && labels[i] == 1) ++tp;
        else if (predicted) ++fp;
        else if (labels[i] == 1) ++fn;
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

double select_cutoff(std::span<const double> scores, std::span<const int> labels) {
    require_both_classes(scores, labels);
    Vector unique(scores.begin(), scores.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    Vector candidates;
    if (unique.size() == 1) {
        candidates.push_back(0.5 * (unique[0] + unique[0]));
    } else {
        for (std::size_t i = 0; i + 1 < unique.size(); ++i) candidates.push_back(0.5 * (unique[i] + unique[i + 1]));
    }
    double best_cut = candidates.front();
    double best_f1 = -1.0;
    for (double c : candidates) {
        const double f = f1_at_cutoff(scores, labels, c);
        if (f > best_f1) {
            best_f1 = f;
            best_cut = c;
        }
    }
    return best_cut;
}

std::string eval_csv_header() {
    return format_csv_row({"scenario", "site", "condition", "auc", "auc_sd", "f1", "cutoff", "n_pos", "n_neg"});
}

std::string to_csv_row(const EvalReport& r) {
    return format_csv_row({r.scenario, r.site, r.condition, format_real(r.auc), format_real(r.auc_sd),
                           format_real(r.f1), format_real(r.cutoff), std::to_string(r.n_pos),
                           std::to_string(r.n_neg)});
}

}  // namespace graffl
