#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "graffl/error.hpp"
#include "graffl/eval.hpp"
#include "graffl/suffiae.hpp"
#include "support.hpp"

using namespace graffl;
using graffl::testing::random_batch;
using graffl::testing::random_model;

namespace {

SuffiAEModel zero_model(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t latent_dim) {
    RngStream rng(0);
    SuffiAEModel m = SuffiAEModel::init({input_dim, std::move(hidden), latent_dim, 0.1}, rng);
    for (auto* stack : {&m.encoder, &m.decoder})
        for (auto& l : *stack) {
            std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }
    std::fill(m.clf_weights.begin(), m.clf_weights.end(), 0.0);
    m.clf_bias = 0.0;
    return m;
}

// Straight-line evaluation of one network: tanh on every layer but the last.
Vector run_layers(const std::vector<DenseLayer>& layers, Vector v) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector next(layers[l].out());
        for (std::size_t i = 0; i < next.size(); ++i) {
            double s = layers[l].bias[i];
            for (std::size_t j = 0; j < v.size(); ++j) s += layers[l].weight(i, j) * v[j];
            next[i] = l + 1 < layers.size() ? std::tanh(s) : s;
        }
        v = std::move(next);
    }
    return v;
}

LossTerms loss_oracle(const SuffiAEModel& m, const LabeledBatch& b, const Matrix& noise) {
    LossTerms t;
    const double a = m.noise_alpha;
    const double d = static_cast<double>(m.latent_dim());
    for (std::size_t i = 0; i < b.size(); ++i) {
        const Vector x(b.x.row(i).begin(), b.x.row(i).end());
        const Vector q = run_layers(m.encoder, x);
        Vector z = q;
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += noise(i, k);
        const Vector xr = run_layers(m.decoder, z);
        for (std::size_t k = 0; k < x.size(); ++k) t.reconstruction += 0.5 * (x[k] - xr[k]) * (x[k] - xr[k]);
        double s = m.clf_bias;
        for (std::size_t k = 0; k < z.size(); ++k) s += m.clf_weights[k] * z[k];
        const double g = 1.0 / (1.0 + std::exp(-s));
        t.classification -= b.y[i] * std::log(g) + (1 - b.y[i]) * std::log(1.0 - g);
        // Tr(ᾱI) + qᵀq − d − d·log ᾱ, halved
        double qq = 0.0;
        for (double v : q) qq += v * v;
        t.regularization += 0.5 * (d * a + qq - d - d * std::log(a));
    }
    return t;
}

LabeledBatch two_blobs(std::size_t n, RngStream& rng) {
    LabeledBatch b{Matrix(n, 4), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        b.y[i] = y;
        for (std::size_t k = 0; k < 4; ++k) b.x(i, k) = (y ? 2.0 : -2.0) + 0.5 * sample_standard_normal(rng);
    }
    return b;
}

}  // namespace

TEST_CASE("encode with all-zero parameters returns zeros") {
    const SuffiAEModel m = zero_model(5, {6}, 3);
    RngStream rng(1);
    const Matrix z = encode(m, testing::random_matrix(4, 5, rng));
    for (double v : z.data()) CHECK(v == 0.0);
    const Matrix xr = decode(m, testing::random_matrix(4, 3, rng));
    for (double v : xr.data()) CHECK(v == 0.0);
}

TEST_CASE("single-layer encode and decode are affine") {
    RngStream rng(2);
    const SuffiAEModel m = random_model(4, {}, 3, 0.1, rng);
    const Matrix x = testing::random_matrix(6, 4, rng);
    const Matrix z = encode(m, x);
    const auto& w = m.encoder[0];
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t o = 0; o < 3; ++o) {
            double s = w.bias[o];
            for (std::size_t j = 0; j < 4; ++j) s += x(i, j) * w.weight(o, j);
            CHECK(std::abs(z(i, o) - s) < 1e-12);
        }
    const Matrix xr = decode(m, z);
    const auto& v = m.decoder[0];
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t o = 0; o < 4; ++o) {
            double s = v.bias[o];
            for (std::size_t j = 0; j < 3; ++j) s += z(i, j) * v.weight(o, j);
            CHECK(std::abs(xr(i, o) - s) < 1e-12);
        }
}

TEST_CASE("identical inputs give identical codes") {
    RngStream rng(3);
    const SuffiAEModel m = random_model(3, {5}, 2, 0.1, rng);
    const Matrix x = Matrix::from_rows({{0.1, 0.2, 0.3}, {0.1, 0.2, 0.3}});
    const Matrix z = encode(m, x);
    CHECK(z(0, 0) == z(1, 0));
    CHECK(z(0, 1) == z(1, 1));
    CHECK(encode(m, x) == z);
    CHECK_THROWS_AS(encode(m, Matrix(1, 4)), Error);
    CHECK_THROWS_AS(decode(m, Matrix(1, 3)), Error);
}

TEST_CASE("encode_noisy with vanishing noise") {
    RngStream rng(4);
    const SuffiAEModel m = random_model(3, {4}, 2, 1e-12, rng);
    const Matrix x = testing::random_matrix(10, 3, rng);
    CHECK(max_abs_diff(encode_noisy(m, x, rng), encode(m, x)) < 1e-5);
}

TEST_CASE("encode_noisy averages back to encode") {
    RngStream rng(5);
    const SuffiAEModel m = random_model(3, {4}, 2, 1.0, rng);
    const Matrix row = testing::random_matrix(1, 3, rng);
    const Matrix clean = encode(m, row);
    Vector sum(2, 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const Matrix z = encode_noisy(m, row, rng);
        sum[0] += z(0, 0) / n;
        sum[1] += z(0, 1) / n;
    }
    CHECK(std::abs(sum[0] - clean(0, 0)) < 0.02);
    CHECK(std::abs(sum[1] - clean(0, 1)) < 0.02);
}

TEST_CASE("encode_noisy is reproducible and has variance alpha") {
    RngStream rng(6);
    const SuffiAEModel m = random_model(4, {5}, 5, 0.3, rng);
    const Matrix x = testing::random_matrix(20000, 4, rng);
    RngStream a(7), b(7);
    const Matrix za = encode_noisy(m, x, a);
    CHECK(za == encode_noisy(m, x, b));
    const Matrix clean = encode(m, x);
    double s1 = 0.0, s2 = 0.0;
    const double n = static_cast<double>(za.data().size());  // 100000 entries
    for (std::size_t i = 0; i < za.data().size(); ++i) {
        const double e = za.data()[i] - clean.data()[i];
        s1 += e;
        s2 += e * e;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    CHECK(std::abs(var - 0.3) < 0.03);
}

TEST_CASE("classify examples") {
    SuffiAEModel m = zero_model(3, {}, 2);
    const Matrix z = Matrix::from_rows({{2.0, 0.0}, {-1.0, 5.0}});
    for (double p : classify(m, z)) CHECK(p == 0.5);
    m.clf_bias = 20.0;
    for (double p : classify(m, z)) CHECK(std::abs(p - 1.0) < 1e-8);
    m.clf_bias = 0.0;
    m.clf_weights = {1.0, -1.0};
    CHECK(classify(m, Matrix::from_rows({{2.0, 0.0}}))[0] == doctest::Approx(0.880797).epsilon(1e-6));
    CHECK_THROWS_AS(classify(m, Matrix(1, 3)), Error);
}

TEST_CASE("perfect autoencoder fixture") {
    // Identity encoder and decoder with D = d, alpha = 1, y = 1 and a saturated classifier.
    SuffiAEModel m = zero_model(3, {}, 3);
    m.encoder[0].weight = Matrix::identity(3);
    m.decoder[0].weight = Matrix::identity(3);
    m.noise_alpha = 1.0;
    m.clf_bias = 30.0;
    RngStream rng(8);
    const LabeledBatch b{testing::random_matrix(6, 3, rng), std::vector<int>(6, 1)};
    const Matrix noise(6, 3);
    const LossTerms t = loss_terms(m, b, noise);
    CHECK(t.reconstruction == 0.0);
    CHECK(t.classification < 1e-10);
    double half_norm = 0.0;
    for (double v : b.x.data()) half_norm += 0.5 * v * v;
    CHECK(t.regularization == doctest::Approx(half_norm).epsilon(1e-14));
    CHECK(loss(m, b, noise) == doctest::Approx(half_norm).epsilon(1e-9));
}

TEST_CASE("property: the KL term matches the closed form") {
    RngStream rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const double alpha = trial == 0 ? 1.0 : std::exp(4.0 * rng.uniform() - 2.0);
        const SuffiAEModel m = random_model(3 + rng.uniform_index(3), {4}, 1 + rng.uniform_index(3), alpha, rng);
        const LabeledBatch b = random_batch(1 + rng.uniform_index(6), m.input_dim(), rng);
        const Matrix noise = draw_noise(m, b.size(), rng);
        const Matrix q = encode(m, b.x);
        double expected = 0.0;
        const double d = static_cast<double>(m.latent_dim());
        for (std::size_t i = 0; i < b.size(); ++i) {
            double qq = 0.0;
            for (double v : q.row(i)) qq += v * v;
            expected += 0.5 * (qq + d * (alpha - 1.0 - std::log(alpha)));
        }
        CHECK(std::abs(loss_terms(m, b, noise).regularization - expected) < 1e-10);
    }
}

TEST_CASE("alpha = 1 removes the constant part of the KL term exactly") {
    RngStream rng(10);
    const SuffiAEModel m = random_model(4, {3}, 2, 1.0, rng);
    const LabeledBatch b = random_batch(5, 4, rng);
    const Matrix q = encode(m, b.x);
    double expected = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double qq = 0.0;
        for (double v : q.row(i)) qq += v * v;
        expected += 0.5 * qq;
    }
    CHECK(loss_terms(m, b, Matrix(5, 2)).regularization == expected);
}

TEST_CASE("loss matches a straight-line re-implementation") {
    RngStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const SuffiAEModel m = random_model(3, {4}, 2, 0.05 + rng.uniform(), rng);
        const LabeledBatch b = random_batch(5, 3, rng);
        const Matrix noise = draw_noise(m, 5, rng);
        const LossTerms got = loss_terms(m, b, noise);
        const LossTerms want = loss_oracle(m, b, noise);
        CHECK(std::abs(got.reconstruction - want.reconstruction) < 1e-10);
        CHECK(std::abs(got.classification - want.classification) < 1e-10);
        CHECK(std::abs(got.regularization - want.regularization) < 1e-10);
        CHECK(std::abs(got.total() - want.total()) < 1e-10);
    }
}

TEST_CASE("loss and grad share a noise draw for equal rng states") {
    RngStream rng(12);
    const SuffiAEModel m = random_model(3, {4}, 2, 0.5, rng);
    const LabeledBatch b = random_batch(5, 3, rng);
    RngStream r1(13), r2(13);
    const Matrix noise = draw_noise(m, 5, r1);
    CHECK(loss(m, b, r2) == loss(m, b, noise));
}

TEST_CASE("gradient of the KL term w.r.t. the encoder output is q(x)") {
    // Linear encoder; decoder and classifier weights zero so only the KL term reaches the encoder.
    RngStream rng(14);
    SuffiAEModel m = random_model(3, {}, 2, 0.4, rng);
    for (auto& l : m.decoder) std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
    std::fill(m.clf_weights.begin(), m.clf_weights.end(), 0.0);
    const LabeledBatch b = random_batch(7, 3, rng);
    const Matrix noise = draw_noise(m, 7, rng);
    const SuffiAEGradient g = grad(m, b, noise);
    const Matrix q = encode(m, b.x);
    for (std::size_t k = 0; k < 2; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 7; ++i) sum += q(i, k);
        CHECK(std::abs(g.encoder[0].bias[k] - sum) < 1e-12);
    }
}

TEST_CASE("property: analytic gradients match central differences") {
    RngStream rng(15);
    double worst = 0.0;
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t depth = rng.uniform_index(3);
        std::vector<std::size_t> hidden;
        for (std::size_t l = 0; l < depth; ++l) hidden.push_back(1 + rng.uniform_index(5));
        const SuffiAEModel m = random_model(3, hidden, 2, 0.05 + rng.uniform(), rng);
        const LabeledBatch b = random_batch(1 + rng.uniform_index(5), 3, rng);
        const Matrix noise = draw_noise(m, b.size(), rng);
        worst = std::max(worst, testing::finite_difference_error(m, b, noise));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("duplicating every row doubles every gradient entry") {
    RngStream rng(16);
    const SuffiAEModel m = random_model(3, {4}, 2, 0.2, rng);
    const LabeledBatch b = random_batch(4, 3, rng);
    const Matrix noise = draw_noise(m, 4, rng);
    const std::vector<Matrix> xs{b.x, b.x};
    const std::vector<Matrix> ns{noise, noise};
    LabeledBatch doubled{vstack(xs), b.y};
    doubled.y.insert(doubled.y.end(), b.y.begin(), b.y.end());
    const SuffiAEGradient g1 = grad(m, b, noise);
    SuffiAEModel copy = m;
    const SuffiAEGradient g2 = grad(m, doubled, vstack(ns));
    std::vector<double> once, twice;
    testing::for_each_parameter(copy, g1, [&](double&, double v) { once.push_back(v); });
    testing::for_each_parameter(copy, g2, [&](double&, double v) { twice.push_back(v); });
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
}

TEST_CASE("loss rejects non-finite weights and malformed batches") {
    RngStream rng(17);
    SuffiAEModel m = random_model(3, {4}, 2, 0.2, rng);
    const LabeledBatch b = random_batch(4, 3, rng);
    const Matrix noise(4, 2);
    m.encoder[0].weight.data()[0] = std::numeric_limits<double>::infinity();
    try {
        loss(m, b, noise);
        FAIL("expected NumericalOverflow");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NumericalOverflow);
    }
    const SuffiAEModel ok = random_model(3, {4}, 2, 0.2, rng);
    LabeledBatch nonbinary = b;
    nonbinary.y[0] = 2;
    CHECK_THROWS_AS(loss(ok, nonbinary, noise), Error);
    CHECK_THROWS_AS(loss(ok, b, Matrix(3, 2)), Error);
}

TEST_CASE("training with a zero learning rate leaves the model unchanged") {
    RngStream rng(18);
    const SuffiAEModel m = random_model(4, {6}, 2, 0.1, rng);
    const LabeledBatch b = random_batch(40, 4, rng);
    TrainOptions opts;
    opts.epochs = 3;
    opts.learning_rate = 0.0;
    RngStream trng(19);
    CHECK(train(m, b, opts, trng) == m);
    opts.epochs = 0;
    CHECK_THROWS_AS(train(m, b, opts, trng), Error);
}

TEST_CASE("training separates two blobs and lowers the noiseless loss") {
    RngStream rng(20);
    const LabeledBatch data = two_blobs(200, rng);
    const SuffiAEModel init = SuffiAEModel::init(SuffiAEArchitecture::defaults(4, 2), rng);
    TrainOptions opts;
    opts.epochs = 40;
    std::vector<double> losses;
    opts.on_epoch = [&](std::size_t, const SuffiAEModel& m) { losses.push_back(noiseless_loss(m, data)); };
    RngStream trng(21);
    const SuffiAEModel trained = train(init, data, opts, trng);
    CHECK(losses.size() == 40);
    CHECK(losses.back() <= noiseless_loss(init, data));
    const Vector scores = classify(trained, encode(trained, data.x));
    CHECK(testing::all_pairs_auc(scores, data.y) > 0.95);

    RngStream again(21);
    opts.on_epoch = nullptr;
    CHECK(train(init, data, opts, again) == trained);
}

TEST_CASE("a lower-dimensional code cannot be inverted linearly") {
    RngStream rng(22);
    const std::size_t D = 6, d = 2, n = 400;
    const SuffiAEModel m = SuffiAEModel::init(SuffiAEArchitecture::defaults(D, d), rng);
    const Matrix x = testing::random_normal_matrix(n, D, rng);
    const Matrix z = encode(m, x);
    // Least squares of x on [z, 1] through the normal equations.
    Matrix design(n, d + 1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) design(i, k) = z(i, k);
        design(i, d) = 1.0;
    }
    Matrix gram = matmul(design.transpose(), design);
    for (std::size_t k = 0; k <= d; ++k) gram(k, k) += 1e-9;
    double residual = 0.0;
    for (std::size_t c = 0; c < D; ++c) {
        Vector rhs(d + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k <= d; ++k) rhs[k] += design(i, k) * x(i, c);
        const Vector coef = solve_spd(gram, rhs);
        for (std::size_t i = 0; i < n; ++i) {
            double fit = 0.0;
            for (std::size_t k = 0; k <= d; ++k) fit += design(i, k) * coef[k];
            residual += (x(i, c) - fit) * (x(i, c) - fit);
        }
    }
    CHECK(residual / (n * D) > 0.25);
}

TEST_CASE("model JSON round trip and validation") {
    RngStream rng(23);
    const SuffiAEModel m = random_model(5, {7, 3}, 2, 0.2, rng);
    CHECK(suffiae_from_json(nlohmann::json::parse(to_json(m).dump())) == m);
    CHECK(m.encoder_widths() == std::vector<std::size_t>{5, 7, 3, 2});
    CHECK(m.decoder_widths() == std::vector<std::size_t>{2, 3, 7, 5});
    SuffiAEModel bad = m;
    bad.noise_alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = m;
    bad.clf_weights.push_back(0.0);
    CHECK_THROWS_AS(bad.validate(), Error);
}
