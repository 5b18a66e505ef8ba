#pragma once

// Generators and independent oracles shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "graffl/abc.hpp"
#include "graffl/gmm.hpp"
#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"
#include "graffl/samplers.hpp"
#include "graffl/suffiae.hpp"

namespace graffl::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * (2.0 * rng.uniform() - 1.0);
    return m;
}

inline Matrix random_normal_matrix(std::size_t rows, std::size_t cols, RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = sample_standard_normal(rng);
    return m;
}

/// A·Aᵀ + I for a random A.
inline Matrix random_spd(std::size_t n, RngStream& rng, double scale = 1.0) {
    const Matrix a = random_matrix(n, n, rng, scale);
    Matrix out = matmul(a, a.transpose());
    for (std::size_t i = 0; i < n; ++i) out(i, i) += 1.0;
    return out;
}

inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Squared distance written out coordinate by coordinate.
inline double squared_distance_oracle(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

struct BruteForceResult {
    std::vector<std::size_t> indices;
    std::vector<double> discrepancies;
    double epsilon = 0.0;
};

/// Materializes every (proposal, discrepancy) pair, sorts, and takes the first L.
inline BruteForceResult brute_force_rejection(const AbcConfig& config, const Matrix& observed, std::uint64_t seed) {
    RngStream rng(seed);
    struct Row {
        double d;
        std::size_t index;
    };
    std::vector<Row> all;
    for (std::size_t p = 0; p < config.n_proposals; ++p) {
        const Proposal prop = propose(config, rng);
        all.push_back({squared_distance_oracle(observed.row(p % observed.rows()), prop.sample), p});
    }
    std::sort(all.begin(), all.end(),
              [](const Row& a, const Row& b) { return a.d < b.d || (a.d == b.d && a.index < b.index); });
    BruteForceResult out;
    for (std::size_t i = 0; i < config.n_accept; ++i) {
        out.indices.push_back(all[i].index);
        out.discrepancies.push_back(all[i].d);
    }
    out.epsilon = config.n_accept < all.size() ? all[config.n_accept].d : all.back().d;
    return out;
}

/// Counts positive/negative pairs directly.
inline double all_pairs_auc(std::span<const double> scores, std::span<const int> labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

inline SuffiAEModel random_model(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t latent_dim,
                                 double noise_alpha, RngStream& rng) {
    SuffiAEArchitecture arch{input_dim, std::move(hidden), latent_dim, noise_alpha};
    SuffiAEModel model = SuffiAEModel::init(arch, rng);
    // Scale up away from the init range so every unit carries signal.
    for (auto* stack : {&model.encoder, &model.decoder})
        for (auto& layer : *stack) {
            for (double& w : layer.weight.data()) w = 2.0 * rng.uniform() - 1.0;
            for (double& b : layer.bias) b = 2.0 * rng.uniform() - 1.0;
        }
    for (double& w : model.clf_weights) w = 2.0 * rng.uniform() - 1.0;
    model.clf_bias = 2.0 * rng.uniform() - 1.0;
    return model;
}

inline LabeledBatch random_batch(std::size_t n, std::size_t dim, RngStream& rng) {
    LabeledBatch b{random_normal_matrix(n, dim, rng), {}};
    for (std::size_t i = 0; i < n; ++i) b.y.push_back(static_cast<int>(rng.uniform_index(2)));
    return b;
}

/// Visits every trainable scalar of a model alongside the matching gradient scalar.
template <typename F>
void for_each_parameter(SuffiAEModel& model, const SuffiAEGradient& g, F&& f) {
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
        for (std::size_t i = 0; i < model.encoder[l].weight.data().size(); ++i)
            f(model.encoder[l].weight.data()[i], g.encoder[l].weight.data()[i]);
        for (std::size_t i = 0; i < model.encoder[l].bias.size(); ++i)
            f(model.encoder[l].bias[i], g.encoder[l].bias[i]);
    }
    for (std::size_t l = 0; l < model.decoder.size(); ++l) {
        for (std::size_t i = 0; i < model.decoder[l].weight.data().size(); ++i)
            f(model.decoder[l].weight.data()[i], g.decoder[l].weight.data()[i]);
        for (std::size_t i = 0; i < model.decoder[l].bias.size(); ++i)
            f(model.decoder[l].bias[i], g.decoder[l].bias[i]);
    }
    for (std::size_t i = 0; i < model.clf_weights.size(); ++i) f(model.clf_weights[i], g.clf_weights[i]);
    f(model.clf_bias, g.clf_bias);
}

/// Largest relative error between the analytic gradient and central differences.
inline double finite_difference_error(SuffiAEModel model, const LabeledBatch& batch, const Matrix& noise,
                                      double h = 1e-5) {
    const SuffiAEGradient g = grad(model, batch, noise);
    double worst = 0.0;
    for_each_parameter(model, g, [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = loss(model, batch, noise);
        param = saved - h;
        const double down = loss(model, batch, noise);
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        if (scale > 0.0) worst = std::max(worst, std::abs(numeric - analytic) / scale);
    });
    return worst;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("graffl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace graffl::testing
