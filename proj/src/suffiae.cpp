#include "graffl/suffiae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "graffl/error.hpp"
#include "graffl/samplers.hpp"

namespace graffl {

namespace {

constexpr double kProbClamp = 1e-12;

double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

DenseLayer init_layer(std::size_t in, std::size_t out, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (auto& w : layer.weight.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
    for (auto& b : layer.bias) b = (2.0 * rng.uniform() - 1.0) * bound;
    return layer;
}

DenseLayer zeros_like(const DenseLayer& layer) { return {Matrix(layer.out(), layer.in()), Vector(layer.out(), 0.0)}; }

/// Post-activation value of every layer; activations[0] is the input.
struct ForwardPass {
    std::vector<Vector> activations;

    [[nodiscard]] const Vector& output() const { return activations.back(); }
};

ForwardPass forward(const std::vector<DenseLayer>& layers, std::span<const double> input) {
    ForwardPass pass;
    pass.activations.reserve(layers.size() + 1);
    pass.activations.emplace_back(input.begin(), input.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector a = matvec(layers[l].weight, pass.activations.back());
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += layers[l].bias[i];
        if (l + 1 < layers.size()) {
            for (auto& v : a) v = std::tanh(v);
        }
        pass.activations.push_back(std::move(a));
    }
    return pass;
}

/// Accumulates parameter gradients given dL/d(output); returns dL/d(input).
Vector backward(const std::vector<DenseLayer>& layers, const ForwardPass& pass, Vector upstream,
                std::vector<DenseLayer>& grads) {
    for (std::size_t l = layers.size(); l-- > 0;) {
        const Vector& out = pass.activations[l + 1];
        const Vector& in = pass.activations[l];
        if (l + 1 < layers.size()) {
            for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] *= 1.0 - out[i] * out[i];
        }
        auto& g = grads[l];
        for (std::size_t i = 0; i < upstream.size(); ++i) {
            g.bias[i] += upstream[i];
            auto row = g.weight.row(i);
            for (std::size_t j = 0; j < in.size(); ++j) row[j] += upstream[i] * in[j];
        }
        Vector down(in.size(), 0.0);
        for (std::size_t i = 0; i < upstream.size(); ++i) {
            const auto wrow = layers[l].weight.row(i);
            for (std::size_t j = 0; j < in.size(); ++j) down[j] += wrow[j] * upstream[i];
        }
        upstream = std::move(down);
    }
    return upstream;
}

Matrix run_stack(const std::vector<DenseLayer>& layers, const Matrix& x, std::size_t expected_cols,
                 std::size_t out_cols, const char* what) {
    if (x.cols() != expected_cols) {
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " expects " + std::to_string(expected_cols) +
                                                      " columns, got " + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), out_cols);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto pass = forward(layers, x.row(i));
        std::copy(pass.output().begin(), pass.output().end(), out.row(i).begin());
    }
    return out;
}

void check_batch(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise) {
    batch.validate();
    if (batch.x.cols() != model.input_dim()) throw Error(ErrorCode::DimensionMismatch, "batch width != model input");
    if (noise.rows() != batch.size() || noise.cols() != model.latent_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "noise matrix shape does not match batch");
    }
    for (const auto& layers : {&model.encoder, &model.decoder}) {
        for (const auto& layer : *layers) {
            if (!layer.weight.all_finite() ||
                !std::all_of(layer.bias.begin(), layer.bias.end(), [](double v) { return std::isfinite(v); })) {
                throw Error(ErrorCode::NumericalOverflow, "model weights are not finite");
            }
        }
    }
    if (!std::isfinite(model.clf_bias) ||
        !std::all_of(model.clf_weights.begin(), model.clf_weights.end(), [](double v) { return std::isfinite(v); })) {
        throw Error(ErrorCode::NumericalOverflow, "classifier weights are not finite");
    }
}

double kl_constant(const SuffiAEModel& model) {
    const double a = model.noise_alpha;
    return static_cast<double>(model.latent_dim()) * (a - 1.0 - std::log(a));
}

}  // namespace

SuffiAEArchitecture SuffiAEArchitecture::defaults(std::size_t input_dim, std::size_t latent_dim, double noise_alpha) {
    return {input_dim, {std::max<std::size_t>(input_dim, 8)}, latent_dim, noise_alpha};
}

std::size_t SuffiAEModel::input_dim() const noexcept { return encoder.empty() ? 0 : encoder.front().in(); }
std::size_t SuffiAEModel::latent_dim() const noexcept { return encoder.empty() ? 0 : encoder.back().out(); }

std::vector<std::size_t> SuffiAEModel::encoder_widths() const {
    std::vector<std::size_t> widths{input_dim()};
    for (const auto& l : encoder) widths.push_back(l.out());
    return widths;
}

std::vector<std::size_t> SuffiAEModel::decoder_widths() const {
    std::vector<std::size_t> widths{decoder.empty() ? 0 : decoder.front().in()};
    for (const auto& l : decoder) widths.push_back(l.out());
    return widths;
}

SuffiAEModel SuffiAEModel::init(const SuffiAEArchitecture& arch, RngStream& rng) {
    if (arch.input_dim == 0 || arch.latent_dim == 0) {
        throw Error(ErrorCode::InvalidHyperparameter, "SuffiAE dimensions must be positive");
    }
    std::vector<std::size_t> widths{arch.input_dim};
    widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
    widths.push_back(arch.latent_dim);

    SuffiAEModel m;
    m.noise_alpha = arch.noise_alpha;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) m.encoder.push_back(init_layer(widths[l], widths[l + 1], rng));
    for (std::size_t l = widths.size() - 1; l > 0; --l) m.decoder.push_back(init_layer(widths[l], widths[l - 1], rng));
    const DenseLayer head = init_layer(arch.latent_dim, 1, rng);
    m.clf_weights.assign(head.weight.data().begin(), head.weight.data().end());
    m.clf_bias = head.bias[0];
    m.validate();
    return m;
}

void SuffiAEModel::validate() const {
    if (encoder.empty() || decoder.empty()) throw Error(ErrorCode::DimensionMismatch, "encoder and decoder need layers");
    if (!(noise_alpha > 0.0)) throw Error(ErrorCode::InvalidHyperparameter, "noise_alpha must be positive");
    auto check_chain = [](const std::vector<DenseLayer>& layers, const char* name) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].bias.size() != layers[l].out()) {
                throw Error(ErrorCode::DimensionMismatch, std::string(name) + " bias length mismatch");
            }
            if (l > 0 && layers[l].in() != layers[l - 1].out()) {
                throw Error(ErrorCode::DimensionMismatch, std::string(name) + " layer widths do not chain");
            }
        }
    };
    check_chain(encoder, "encoder");
    check_chain(decoder, "decoder");
    if (decoder.front().in() != latent_dim() || clf_weights.size() != latent_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "decoder/classifier input width must equal latent dim");
    }
    if (decoder.back().out() != input_dim()) throw Error(ErrorCode::DimensionMismatch, "decoder must reconstruct input");
}

void LabeledBatch::validate() const {
    if (x.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "empty batch");
    if (y.size() != x.rows()) throw Error(ErrorCode::DimensionMismatch, "label count does not match rows");
    for (int label : y)
        if (label != 0 && label != 1) throw Error(ErrorCode::NonBinaryLabel, "labels must be 0 or 1");
}

Matrix encode(const SuffiAEModel& model, const Matrix& x) {
    return run_stack(model.encoder, x, model.input_dim(), model.latent_dim(), "encode");
}

Matrix draw_noise(const SuffiAEModel& model, std::size_t n, RngStream& rng) {
    const double sd = std::sqrt(model.noise_alpha);
    Matrix noise(n, model.latent_dim());
    for (auto& v : noise.data()) v = sd * sample_standard_normal(rng);
    return noise;
}

Matrix encode_noisy(const SuffiAEModel& model, const Matrix& x, RngStream& rng) {
    Matrix z = encode(model, x);
    const Matrix noise = draw_noise(model, z.rows(), rng);
    for (std::size_t i = 0; i < z.data().size(); ++i) z.data()[i] += noise.data()[i];
    return z;
}

Matrix decode(const SuffiAEModel& model, const Matrix& z) {
    return run_stack(model.decoder, z, model.latent_dim(), model.input_dim(), "decode");
}

Vector classify(const SuffiAEModel& model, const Matrix& z) {
    if (z.cols() != model.clf_weights.size()) {
        throw Error(ErrorCode::DimensionMismatch, "classifier expects " + std::to_string(model.clf_weights.size()) +
                                                      " columns, got " + std::to_string(z.cols()));
    }
    Vector p(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto r = z.row(i);
        p[i] = sigmoid(std::inner_product(r.begin(), r.end(), model.clf_weights.begin(), model.clf_bias));
    }
    return p;
}

LossTerms loss_terms(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise) {
    check_batch(model, batch, noise);
    const double kl_const = kl_constant(model);
    LossTerms terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto enc = forward(model.encoder, batch.x.row(i));
        const Vector& code = enc.output();
        Vector z = code;
        const auto nrow = noise.row(i);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += nrow[k];

        const auto dec = forward(model.decoder, z);
        const auto xrow = batch.x.row(i);
        double sq = 0.0;
        for (std::size_t k = 0; k < xrow.size(); ++k) {
            const double r = xrow[k] - dec.output()[k];
            sq += r * r;
        }
        terms.reconstruction += 0.5 * sq;

        const double s = std::inner_product(z.begin(), z.end(), model.clf_weights.begin(), model.clf_bias);
        const double p = std::clamp(sigmoid(s), kProbClamp, 1.0 - kProbClamp);
        terms.classification -= batch.y[i] == 1 ? std::log(p) : std::log(1.0 - p);

        const double norm2 = std::inner_product(code.begin(), code.end(), code.begin(), 0.0);
        terms.regularization += 0.5 * (norm2 + kl_const);
    }
    if (!std::isfinite(terms.total())) throw Error(ErrorCode::NumericalOverflow, "loss is not finite");
    return terms;
}

double loss(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise) {
    return loss_terms(model, batch, noise).total();
}

double loss(const SuffiAEModel& model, const LabeledBatch& batch, RngStream& rng) {
    return loss(model, batch, draw_noise(model, batch.size(), rng));
}

double noiseless_loss(const SuffiAEModel& model, const LabeledBatch& batch) {
    return loss(model, batch, Matrix(batch.size(), model.latent_dim()));
}

SuffiAEGradient grad(const SuffiAEModel& model, const LabeledBatch& batch, const Matrix& noise) {
    check_batch(model, batch, noise);
    SuffiAEGradient g;
    for (const auto& l : model.encoder) g.encoder.push_back(zeros_like(l));
    for (const auto& l : model.decoder) g.decoder.push_back(zeros_like(l));
    g.clf_weights.assign(model.latent_dim(), 0.0);

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto enc = forward(model.encoder, batch.x.row(i));
        Vector z = enc.output();
        const auto nrow = noise.row(i);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += nrow[k];
        const auto dec = forward(model.decoder, z);

        // ½‖x − x'‖²  →  ∂/∂x' = x' − x
        const auto xrow = batch.x.row(i);
        Vector d_recon(xrow.size());
        for (std::size_t k = 0; k < xrow.size(); ++k) d_recon[k] = dec.output()[k] - xrow[k];
        Vector d_z = backward(model.decoder, dec, std::move(d_recon), g.decoder);

        // BCE on σ(w·z + b): ∂/∂s = p − y, zero where the probability clamp is active.
        const double s = std::inner_product(z.begin(), z.end(), model.clf_weights.begin(), model.clf_bias);
        const double p = sigmoid(s);
        const double ds = (p < kProbClamp || p > 1.0 - kProbClamp) ? 0.0 : p - static_cast<double>(batch.y[i]);
        g.clf_bias += ds;
        for (std::size_t k = 0; k < z.size(); ++k) {
            g.clf_weights[k] += ds * z[k];
            d_z[k] += ds * model.clf_weights[k];
        }

        // z = q(x) + noise, and the KL term adds ½‖q(x)‖².
        const Vector& code = enc.output();
        for (std::size_t k = 0; k < code.size(); ++k) d_z[k] += code[k];
        (void)backward(model.encoder, enc, std::move(d_z), g.encoder);
    }
    return g;
}

SuffiAEGradient grad(const SuffiAEModel& model, const LabeledBatch& batch, RngStream& rng) {
    return grad(model, batch, draw_noise(model, batch.size(), rng));
}

SuffiAEModel train(SuffiAEModel model, const LabeledBatch& data, const TrainOptions& options, RngStream& rng) {
    data.validate();
    if (options.epochs == 0) throw Error(ErrorCode::InvalidHyperparameter, "epochs must be >= 1");
    if (!(options.learning_rate >= 0.0)) throw Error(ErrorCode::InvalidHyperparameter, "learning rate must be >= 0");
    const std::size_t n = data.size();
    const std::size_t batch_size = std::clamp<std::size_t>(options.batch_size, 1, n);
    const std::size_t cols = data.x.cols();

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t count = std::min(batch_size, n - start);
            LabeledBatch mb{Matrix(count, cols), std::vector<int>(count)};
            for (std::size_t r = 0; r < count; ++r) {
                const auto src = data.x.row(order[start + r]);
                std::copy(src.begin(), src.end(), mb.x.row(r).begin());
                mb.y[r] = data.y[order[start + r]];
            }
            const SuffiAEGradient g = grad(model, mb, rng);
            const double step = options.learning_rate / static_cast<double>(count);
            auto apply = [step](std::vector<DenseLayer>& layers, const std::vector<DenseLayer>& grads) {
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    auto& w = layers[l].weight.data();
                    const auto& gw = grads[l].weight.data();
                    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * gw[k];
                    for (std::size_t k = 0; k < layers[l].bias.size(); ++k) layers[l].bias[k] -= step * grads[l].bias[k];
                }
            };
            apply(model.encoder, g.encoder);
            apply(model.decoder, g.decoder);
            for (std::size_t k = 0; k < model.clf_weights.size(); ++k) model.clf_weights[k] -= step * g.clf_weights[k];
            model.clf_bias -= step * g.clf_bias;
        }
        if (options.on_epoch) options.on_epoch(epoch, model);
    }
    return model;
}

namespace {

nlohmann::ordered_json layers_to_json(const std::vector<DenseLayer>& layers) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& l : layers) {
        nlohmann::ordered_json j;
        j["in"] = l.in();
        j["out"] = l.out();
        j["weight"] = l.weight.data();
        j["bias"] = l.bias;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<DenseLayer> layers_from_json(const nlohmann::json& arr) {
    std::vector<DenseLayer> layers;
    for (const auto& j : arr) {
        const auto in = j.at("in").get<std::size_t>();
        const auto out = j.at("out").get<std::size_t>();
        layers.push_back({Matrix(out, in, j.at("weight").get<std::vector<double>>()), j.at("bias").get<Vector>()});
    }
    return layers;
}

}  // namespace

nlohmann::ordered_json to_json(const SuffiAEModel& model) {
    nlohmann::ordered_json doc;
    doc["encoder_widths"] = model.encoder_widths();
    doc["decoder_widths"] = model.decoder_widths();
    doc["noise_alpha"] = model.noise_alpha;
    doc["encoder"] = layers_to_json(model.encoder);
    doc["decoder"] = layers_to_json(model.decoder);
    doc["clf_weights"] = model.clf_weights;
    doc["clf_bias"] = model.clf_bias;
    return doc;
}

SuffiAEModel suffiae_from_json(const nlohmann::json& doc) {
    try {
        SuffiAEModel m;
        m.noise_alpha = doc.at("noise_alpha").get<double>();
        m.encoder = layers_from_json(doc.at("encoder"));
        m.decoder = layers_from_json(doc.at("decoder"));
        m.clf_weights = doc.at("clf_weights").get<Vector>();
        m.clf_bias = doc.at("clf_bias").get<double>();
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

}  // namespace graffl
