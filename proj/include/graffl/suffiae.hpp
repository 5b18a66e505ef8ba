#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <json.hpp>

#include "graffl/matrix.hpp"
#include "graffl/rng.hpp"

namespace graffl {

/// y = W x + b with W stored out × in.
struct DenseLayer {
    Matrix weight;
    Vector bias;

    [[nodiscard]] std::size_t in() const noexcept { return weight.cols(); }
    [[nodiscard]] std::size_t out() const noexcept { return weight.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Layer widths. Encoder runs input_dim -> hidden... -> latent_dim; the
/// decoder mirrors it. Hidden layers use tanh, output layers are linear.
struct SuffiAEArchitecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t latent_dim = 0;
    double noise_alpha = 0.1;

    /// One hidden layer of width max(D, 8).
    static SuffiAEArchitecture defaults(std::size_t input_dim, std::size_t latent_dim, double noise_alpha = 0.1);
};

/**
 * Supervised autoencoder: encoder q_phi, decoder f_theta and a single
 * logistic unit g_psi on the latent code.
 *
 * `noise_alpha` is the variance of the Gaussian noise added to the latent
 * code (z = q_phi(x) + noise); it is not trained.
 */
struct SuffiAEModel {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;
    Vector clf_weights;
    double clf_bias = 0.0;
    double noise_alpha = 0.1;

    [[nodiscard]] std::size_t input_dim() const noexcept;
    [[nodiscard]] std::size_t latent_dim() const noexcept;
    [[nodiscard]] std::vector<std::size_t> encoder_widths() const;
    [[nodiscard]] std::vector<std::size_t> decoder_widths() const;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    static SuffiAEModel init(const SuffiAEArchitecture& arch, RngStream& rng);

    void validate() const;

    friend bool operator==(const SuffiAEModel&, const SuffiAEModel&) = default;
};

/// Same layout as the trainable part of SuffiAEModel.
struct SuffiAEGradient {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;
    Vector clf_weights;
    double clf_bias = 0.0;
};

struct LabeledBatch {
    Matrix x;
    std::vector<int> y;

    [[nodiscard]] std::size_t size() const noexcept { return x.rows(); }
    void validate() const;
};

Matrix encode(const SuffiAEModel& model, const Matrix& x);
Matrix encode_noisy(const SuffiAEModel& model, const Matrix& x, RngStream& rng);
Matrix decode(const SuffiAEModel& model, const Matrix& z);
Vector classify(const SuffiAEModel& model, const Matrix& z);

/// n × d matrix of N(0, noise_alpha) entries.
Matrix draw_noise(const SuffiAEModel& model, std::size_t n, RngStream& rng);

/// The three summed terms of the negated objective.
struct LossTerms {
    double reconstruction = 0.0;  // ½ Σ ‖x − f(z)‖²
    double classification = 0.0;  // −Σ [y log g(z) + (1 − y) log(1 − g(z))]
    double regularization = 0.0;  // ½ Σ (‖q(x)‖² + d(ᾱ − 1 − log ᾱ))

    [[nodiscard]] double total() const noexcept { return reconstruction + classification + regularization; }
};

LossTerms loss_terms(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise);

/// Negated objective over the batch with one noise draw per sample.
double loss(const SuffiAEModel& model, const LabeledBatch& batch, RngStream& rng);
double loss(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise);

/// Loss with the noise draw fixed to zero.
double noiseless_loss(const SuffiAEModel& model, const LabeledBatch& batch);

/// Exact gradient of `loss`. With an rng in the same state as the paired
/// `loss` call, both see the same noise draw.
SuffiAEGradient grad(const SuffiAEModel& model, const LabeledBatch& batch, RngStream& rng);
SuffiAEGradient grad(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise);

struct TrainOptions {
    std::size_t epochs = 1;
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    /// Called after every epoch with the epoch index and the current model.
    std::function<void(std::size_t, const SuffiAEModel&)> on_epoch;
};

/// Mini-batch gradient descent; each step moves by learning_rate times the
/// batch-mean gradient.
SuffiAEModel train(SuffiAEModel model, const LabeledBatch& data, const TrainOptions& options, RngStream& rng);

nlohmann::ordered_json to_json(const SuffiAEModel& model);
SuffiAEModel suffiae_from_json(const nlohmann::json& doc);

}  // namespace graffl
