#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/binary_io.hpp"
#include "actpred/encoder.hpp"
#include "actpred/error.hpp"
#include "actpred/features.hpp"
#include "actpred/rng.hpp"

namespace actpred::rare {

using json = nlohmann::json;
using features::NeuralTemporalVector;

inline constexpr std::size_t kTemporalInputs = std::tuple_size_v<NeuralTemporalVector>;

// ---------------------------------------------------------------------------
// Focal loss
// ---------------------------------------------------------------------------

namespace detail {

inline void check_loss_args(std::span<const double> logits, std::size_t label,
                            std::span<const double> weights, double gamma) {
    if (label >= logits.size()) {
        throw ContractError("label index out of range");
    }
    if (weights.size() != logits.size()) {
        throw ContractError("one weight per class required");
    }
    if (!(gamma >= 0.0)) {
        throw ContractError("gamma must be >= 0");
    }
    for (double w : weights) {
        if (!(w > 0.0)) {
            throw ContractError("class weights must be positive");
        }
    }
    for (double z : logits) {
        if (!std::isfinite(z)) {
            throw NumericError("non-finite logit");
        }
    }
}

struct SoftmaxParts {
    std::vector<double> p;
    double log_p_label = 0.0;
    double one_minus = 0.0; ///< 1 - p[label], summed from the other classes
};

inline SoftmaxParts softmax_parts(std::span<const double> logits, std::size_t label) {
    const double m = *std::max_element(logits.begin(), logits.end());
    SoftmaxParts s;
    s.p.resize(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s.p[i] = std::exp(logits[i] - m);
        sum += s.p[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
        s.p[i] /= sum;
        if (i != label) {
            s.one_minus += s.p[i];
        }
    }
    s.log_p_label = logits[label] - m - std::log(sum);
    return s;
}

} // namespace detail

/// -w[y] * (1 - p_y)^gamma * log p_y with p = softmax(logits).
inline double focal_loss(std::span<const double> logits, std::size_t label,
                         std::span<const double> weights, double gamma) {
    detail::check_loss_args(logits, label, weights, gamma);
    const auto s = detail::softmax_parts(logits, label);
    const double mod = gamma == 0.0 ? 1.0 : std::pow(s.one_minus, gamma);
    return -weights[label] * mod * s.log_p_label;
}

/// Gradient of focal_loss with respect to the logits.
inline std::vector<double> focal_loss_grad(std::span<const double> logits, std::size_t label,
                                           std::span<const double> weights, double gamma) {
    detail::check_loss_args(logits, label, weights, gamma);
    const auto s = detail::softmax_parts(logits, label);
    const double a = s.p[label];
    const double q = s.one_minus;
    // dL/dz_j = -w * [(1-a)^g - g * a * (1-a)^(g-1) * log a] * (delta_yj - p_j)
    const double lead = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    const double tail =
        (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * a * std::pow(q, gamma - 1.0) * s.log_p_label;
    const double c = -weights[label] * (lead - tail);
    std::vector<double> g(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        const double delta_minus_p = j == label ? q : -s.p[j];
        g[j] = c * delta_minus_p;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Affine layer y = W x + b with W stored row-major (out x in).
struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;

    Dense() = default;
    Dense(std::size_t in_dim, std::size_t out_dim)
        : in(in_dim), out(out_dim), w(in_dim * out_dim, 0.0), b(out_dim, 0.0) {}

    void init_normal(Rng& rng, double scale) {
        for (double& x : w) {
            x = rng.normal(0.0, scale);
        }
        std::fill(b.begin(), b.end(), 0.0);
    }

    void forward(std::span<const double> x, std::span<double> y) const {
        for (std::size_t o = 0; o < out; ++o) {
            const double* row = w.data() + o * in;
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) {
                acc += row[i] * x[i];
            }
            y[o] = acc;
        }
    }

    /// Accumulates parameter gradients and, when `dx` is non-empty, writes the input gradient.
    void backward(std::span<const double> x, std::span<const double> dy, std::span<double> dw,
                  std::span<double> db, std::span<double> dx) const {
        if (!dx.empty()) {
            std::fill(dx.begin(), dx.end(), 0.0);
        }
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[o];
            if (g == 0.0) {
                continue;
            }
            db[o] += g;
            const double* row = w.data() + o * in;
            double* drow = dw.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                drow[i] += g * x[i];
            }
            if (!dx.empty()) {
                for (std::size_t i = 0; i < in; ++i) {
                    dx[i] += g * row[i];
                }
            }
        }
    }

    bool operator==(const Dense&) const = default;
};

/// Per-input mean/std scaling; zero spread maps to scale 1.
struct Standardizer {
    std::array<double, kTemporalInputs> mean{};
    std::array<double, kTemporalInputs> scale = [] {
        std::array<double, kTemporalInputs> s{};
        s.fill(1.0);
        return s;
    }();

    static Standardizer fit(std::span<const NeuralTemporalVector> rows) {
        Standardizer s;
        if (rows.empty()) {
            return s;
        }
        const auto n = static_cast<double>(rows.size());
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < kTemporalInputs; ++i) {
                s.mean[i] += r[i];
            }
        }
        for (auto& m : s.mean) {
            m /= n;
        }
        std::array<double, kTemporalInputs> var{};
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < kTemporalInputs; ++i) {
                const double d = r[i] - s.mean[i];
                var[i] += d * d;
            }
        }
        for (std::size_t i = 0; i < kTemporalInputs; ++i) {
            const double sd = std::sqrt(var[i] / n);
            s.scale[i] = sd > 1e-12 ? sd : 1.0;
        }
        return s;
    }

    NeuralTemporalVector apply(const NeuralTemporalVector& x) const {
        NeuralTemporalVector y;
        for (std::size_t i = 0; i < kTemporalInputs; ++i) {
            y[i] = (x[i] - mean[i]) / scale[i];
        }
        return y;
    }

    bool operator==(const Standardizer&) const = default;
};

struct RareConfig {
    std::size_t hidden1 = 256;
    std::size_t hidden2 = 128;
    double dropout1 = 0.3;
    double dropout2 = 0.3;
    double gamma = 2.0;
    int epochs_phase1 = 2;
    int epochs_phase2 = 3;
    std::size_t batch_size = 32;
    double lr_phase1 = 0.05;
    double lr_phase2 = 0.01;
    double momentum = 0.9;
    bool class_weights = true;
    std::uint64_t seed = 42;

    void validate() const {
        if (hidden1 == 0 || hidden2 == 0 || batch_size == 0 || epochs_phase1 < 0 ||
            epochs_phase2 < 0 || !(dropout1 >= 0.0 && dropout1 < 1.0) ||
            !(dropout2 >= 0.0 && dropout2 < 1.0) || !(gamma >= 0.0) || !(lr_phase1 > 0.0) ||
            !(lr_phase2 > 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
            throw ConfigError("invalid rare-classifier training settings");
        }
    }

    json to_json() const {
        return {{"hidden1", hidden1},     {"hidden2", hidden2},
                {"dropout1", dropout1},   {"dropout2", dropout2},
                {"gamma", gamma},         {"epochs_phase1", epochs_phase1},
                {"epochs_phase2", epochs_phase2}, {"batch_size", batch_size},
                {"lr_phase1", lr_phase1}, {"lr_phase2", lr_phase2},
                {"momentum", momentum},   {"class_weights", class_weights},
                {"seed", seed}};
    }

    static RareConfig from_json(const json& j) {
        RareConfig c;
        c.hidden1 = j.value("hidden1", c.hidden1);
        c.hidden2 = j.value("hidden2", c.hidden2);
        c.dropout1 = j.value("dropout1", c.dropout1);
        c.dropout2 = j.value("dropout2", c.dropout2);
        c.gamma = j.value("gamma", c.gamma);
        c.epochs_phase1 = j.value("epochs_phase1", c.epochs_phase1);
        c.epochs_phase2 = j.value("epochs_phase2", c.epochs_phase2);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
        c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
        c.momentum = j.value("momentum", c.momentum);
        c.class_weights = j.value("class_weights", c.class_weights);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

/// Text embedding and a two-layer temporal MLP, concatenated and fed to a
/// linear head over the 10 rare actions.
class FusionModel {
public:
    std::unique_ptr<encoder::TextEncoder> encoder;
    Standardizer standardizer;
    Dense temporal1;
    Dense temporal2;
    Dense head;
    std::array<double, kNumRareActions> class_weights = [] {
        std::array<double, kNumRareActions> w{};
        w.fill(1.0);
        return w;
    }();
    RareConfig config;

    FusionModel() = default;
    FusionModel(std::unique_ptr<encoder::TextEncoder> enc, const RareConfig& cfg)
        : encoder(std::move(enc)), temporal1(kTemporalInputs, cfg.hidden1),
          temporal2(cfg.hidden1, cfg.hidden2), head(encoder->dim() + cfg.hidden2, kNumRareActions),
          config(cfg) {}

    std::size_t text_dim() const { return encoder->dim(); }

    /// He-normal hidden layers, Glorot-scaled head, zero biases.
    void initialize(Rng& rng) {
        temporal1.init_normal(rng, std::sqrt(2.0 / static_cast<double>(temporal1.in)));
        temporal2.init_normal(rng, std::sqrt(2.0 / static_cast<double>(temporal2.in)));
        head.init_normal(rng, std::sqrt(2.0 / static_cast<double>(head.in + head.out)));
    }

    /// Inference-mode logits from a precomputed text embedding and a raw
    /// (unstandardised) temporal vector.
    std::vector<double> forward_embedded(std::span<const double> embedding,
                                         const NeuralTemporalVector& t12) const {
        if (embedding.size() != text_dim()) {
            throw ContractError("text embedding has dimension " + std::to_string(embedding.size()) +
                                ", model expects " + std::to_string(text_dim()));
        }
        const auto x = standardizer.apply(t12);
        std::vector<double> h1(temporal1.out);
        temporal1.forward(x, h1);
        for (double& v : h1) {
            v = std::max(0.0, v);
        }
        std::vector<double> fused(head.in);
        std::copy(embedding.begin(), embedding.end(), fused.begin());
        std::span<double> h2(fused.data() + text_dim(), temporal2.out);
        temporal2.forward(h1, h2);
        for (double& v : h2) {
            v = std::max(0.0, v);
        }
        std::vector<double> logits(head.out);
        head.forward(fused, logits);
        return logits;
    }

    std::vector<double> forward(std::string_view text, const NeuralTemporalVector& t12) const {
        return forward_embedded(encoder->embed(text), t12);
    }
};

inline std::vector<double> forward(const FusionModel& model, std::string_view text,
                                   const NeuralTemporalVector& t12) {
    return model.forward(text, t12);
}

/// Argmax over the rare-action list; equal logits resolve to the more
/// frequent action.
inline ActionLabel rare_argmax(std::span<const double> logits) {
    if (logits.size() != kNumRareActions) {
        throw ContractError("expected " + std::to_string(kNumRareActions) + " logits");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return rare_action_at(best);
}

inline ActionLabel predict_rare(const FusionModel& model, std::string_view text,
                                const NeuralTemporalVector& t12) {
    return rare_argmax(model.forward(text, t12));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RareSample {
    std::string text;
    NeuralTemporalVector t12{};
    ActionLabel label = ActionLabel::Unfollow;
};

struct EpochLog {
    int epoch = 0; ///< 1-based over both phases
    int phase = 1;
    bool encoder_updated = false;
    double train_loss = 0.0; ///< mean minibatch loss with dropout active
    double eval_loss = 0.0;  ///< mean loss over the training set in inference mode
    std::uint64_t encoder_fingerprint = 0;

    json to_json() const {
        return {{"epoch", epoch},
                {"phase", phase},
                {"encoder_updated", encoder_updated},
                {"train_loss", train_loss},
                {"eval_loss", eval_loss},
                {"encoder_fingerprint", encoder_fingerprint}};
    }
};

struct TrainLog {
    double initial_loss = 0.0;
    std::uint64_t initial_encoder_fingerprint = 0;
    std::vector<EpochLog> epochs;

    json to_json() const {
        json e = json::array();
        for (const auto& x : epochs) {
            e.push_back(x.to_json());
        }
        return {{"initial_loss", initial_loss},
                {"initial_encoder_fingerprint", initial_encoder_fingerprint},
                {"epochs", std::move(e)}};
    }
};

/// FNV-1a over the raw bytes of the encoder parameters (0 parameters -> offset basis).
inline std::uint64_t parameter_fingerprint(std::span<const double> params) {
    return io::fnv1a64(std::string_view(reinterpret_cast<const char*>(params.data()),
                                        params.size() * sizeof(double)));
}

/// Inverse-frequency weights over the rare classes present, mean 1 over them.
/// Absent classes keep weight 1 (they never contribute a loss term).
inline std::array<double, kNumRareActions> rare_class_weights(std::span<const RareSample> samples) {
    std::array<std::uint64_t, kNumRareActions> counts{};
    for (const auto& s : samples) {
        ++counts[rare_index(s.label)];
    }
    const auto present = static_cast<double>(
        std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
    std::array<double, kNumRareActions> w{};
    for (std::size_t c = 0; c < kNumRareActions; ++c) {
        w[c] = counts[c] == 0 ? 1.0
                              : static_cast<double>(samples.size()) /
                                    (present * static_cast<double>(counts[c]));
    }
    return w;
}

namespace detail {

/// Gradient buffers shaped like the trainable parameters.
struct Grads {
    std::vector<double> t1w, t1b, t2w, t2b, hw, hb, enc;

    explicit Grads(const FusionModel& m)
        : t1w(m.temporal1.w.size()), t1b(m.temporal1.b.size()), t2w(m.temporal2.w.size()),
          t2b(m.temporal2.b.size()), hw(m.head.w.size()), hb(m.head.b.size()),
          enc(m.encoder->parameters().size()) {}

    void zero() {
        for (auto* v : {&t1w, &t1b, &t2w, &t2b, &hw, &hb, &enc}) {
            std::fill(v->begin(), v->end(), 0.0);
        }
    }
};

class Trainer {
public:
    Trainer(FusionModel& m, std::span<const RareSample> samples, Rng& rng)
        : m_(m), samples_(samples), rng_(rng), grads_(m), velocity_(m), std_t12_(samples.size()) {
        velocity_.zero();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            std_t12_[i] = m.standardizer.apply(samples[i].t12);
        }
        refresh_embeddings();
    }

    void refresh_embeddings() {
        emb_.resize(samples_.size());
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            emb_[i] = m_.encoder->embed(samples_[i].text);
        }
    }

    double eval_loss() const {
        double sum = 0.0;
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto logits = m_.forward_embedded(emb_[i], samples_[i].t12);
            sum += focal_loss(logits, rare_index(samples_[i].label), m_.class_weights, m_.config.gamma);
        }
        return samples_.empty() ? 0.0 : sum / static_cast<double>(samples_.size());
    }

    /// One pass in shuffled minibatches; returns the mean training loss.
    double epoch(double lr, bool update_encoder) {
        std::vector<std::size_t> order(samples_.size());
        std::iota(order.begin(), order.end(), 0);
        rng_.shuffle(std::span<std::size_t>(order));
        const std::size_t bs = m_.config.batch_size;
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            grads_.zero();
            for (std::size_t k = start; k < end; ++k) {
                total += accumulate(order[k], update_encoder);
            }
            step(lr, static_cast<double>(end - start), update_encoder);
        }
        if (update_encoder) {
            refresh_embeddings();
        }
        return samples_.empty() ? 0.0 : total / static_cast<double>(samples_.size());
    }

private:
    double accumulate(std::size_t i, bool encoder_grad) {
        const auto& x = std_t12_[i];
        const auto& cfg = m_.config;
        const std::size_t d = m_.text_dim();
        std::vector<double> a1(m_.temporal1.out);
        m_.temporal1.forward(x, a1);
        std::vector<double> mask1(a1.size());
        for (std::size_t j = 0; j < a1.size(); ++j) {
            const bool keep = cfg.dropout1 == 0.0 || !rng_.bernoulli(cfg.dropout1);
            mask1[j] = (a1[j] > 0.0 && keep) ? 1.0 / (1.0 - cfg.dropout1) : 0.0;
            a1[j] = a1[j] * mask1[j];
        }
        // A trainable encoder changes every step, so its embedding is recomputed.
        const auto fresh = encoder_grad ? m_.encoder->embed(samples_[i].text) : std::vector<double>{};
        const auto& emb = encoder_grad ? fresh : emb_[i];
        std::vector<double> fused(m_.head.in);
        std::copy(emb.begin(), emb.end(), fused.begin());
        std::span<double> a2(fused.data() + d, m_.temporal2.out);
        m_.temporal2.forward(a1, a2);
        std::vector<double> mask2(a2.size());
        for (std::size_t j = 0; j < a2.size(); ++j) {
            const bool keep = cfg.dropout2 == 0.0 || !rng_.bernoulli(cfg.dropout2);
            mask2[j] = (a2[j] > 0.0 && keep) ? 1.0 / (1.0 - cfg.dropout2) : 0.0;
            a2[j] = a2[j] * mask2[j];
        }
        std::vector<double> logits(m_.head.out);
        m_.head.forward(fused, logits);
        const auto label = rare_index(samples_[i].label);
        const double loss = focal_loss(logits, label, m_.class_weights, cfg.gamma);
        const auto dlogits = focal_loss_grad(logits, label, m_.class_weights, cfg.gamma);

        std::vector<double> dfused(m_.head.in);
        m_.head.backward(fused, dlogits, grads_.hw, grads_.hb, dfused);
        std::vector<double> da2(dfused.begin() + static_cast<std::ptrdiff_t>(d), dfused.end());
        for (std::size_t j = 0; j < da2.size(); ++j) {
            da2[j] *= mask2[j];
        }
        std::vector<double> da1(a1.size());
        m_.temporal2.backward(a1, da2, grads_.t2w, grads_.t2b, da1);
        for (std::size_t j = 0; j < da1.size(); ++j) {
            da1[j] *= mask1[j];
        }
        m_.temporal1.backward(x, da1, grads_.t1w, grads_.t1b, {});
        if (encoder_grad) {
            m_.encoder->backward(samples_[i].text, std::span<const double>(dfused.data(), d),
                                 grads_.enc);
        }
        return loss;
    }

    static void sgd(std::span<double> p, std::span<const double> g, std::span<double> v, double lr,
                    double mu, double inv_n) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = mu * v[i] - lr * g[i] * inv_n;
            p[i] += v[i];
        }
    }

    void step(double lr, double n, bool update_encoder) {
        const double mu = m_.config.momentum;
        const double inv = 1.0 / n;
        sgd(m_.temporal1.w, grads_.t1w, velocity_.t1w, lr, mu, inv);
        sgd(m_.temporal1.b, grads_.t1b, velocity_.t1b, lr, mu, inv);
        sgd(m_.temporal2.w, grads_.t2w, velocity_.t2w, lr, mu, inv);
        sgd(m_.temporal2.b, grads_.t2b, velocity_.t2b, lr, mu, inv);
        sgd(m_.head.w, grads_.hw, velocity_.hw, lr, mu, inv);
        sgd(m_.head.b, grads_.hb, velocity_.hb, lr, mu, inv);
        if (update_encoder) {
            sgd(m_.encoder->parameters(), grads_.enc, velocity_.enc, lr, mu, inv);
        }
    }

    FusionModel& m_;
    std::span<const RareSample> samples_;
    Rng& rng_;
    Grads grads_;
    Grads velocity_;
    std::vector<NeuralTemporalVector> std_t12_;
    std::vector<std::vector<double>> emb_;
};

} // namespace detail

using EpochCallback = std::function<void(const FusionModel&, const EpochLog&)>;

/// Phase 1 trains the temporal branch and head with the encoder frozen;
/// phase 2 also updates the encoder when it is trainable. One global model.
inline FusionModel train_two_phase(std::span<const RareSample> samples,
                                   std::unique_ptr<encoder::TextEncoder> enc, const RareConfig& cfg,
                                   TrainLog* log = nullptr, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (!enc) {
        throw ContractError("an encoder is required");
    }
    std::array<bool, kNumRareActions> seen{};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!is_rare(samples[i].label)) {
            throw ContractError("sample " + std::to_string(i) + " is not a rare action");
        }
        seen[rare_index(samples[i].label)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2) {
        throw TrainingError("rare classifier needs at least 2 classes");
    }

    FusionModel model(std::move(enc), cfg);
    Rng rng(cfg.seed);
    model.initialize(rng);
    std::vector<NeuralTemporalVector> t12(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        t12[i] = samples[i].t12;
    }
    model.standardizer = Standardizer::fit(t12);
    if (cfg.class_weights) {
        model.class_weights = rare_class_weights(samples);
    }

    detail::Trainer trainer(model, samples, rng);
    TrainLog local;
    TrainLog& out = log != nullptr ? *log : local;
    out.initial_loss = trainer.eval_loss();
    out.initial_encoder_fingerprint = parameter_fingerprint(model.encoder->parameters());
    int epoch = 0;
    auto run = [&](int phase, int epochs, double lr, bool update_encoder) {
        for (int e = 0; e < epochs; ++e) {
            EpochLog rec;
            rec.epoch = ++epoch;
            rec.phase = phase;
            rec.encoder_updated = update_encoder;
            rec.train_loss = trainer.epoch(lr, update_encoder);
            rec.eval_loss = trainer.eval_loss();
            rec.encoder_fingerprint = parameter_fingerprint(model.encoder->parameters());
            out.epochs.push_back(rec);
            if (on_epoch) {
                on_epoch(model, rec);
            }
        }
    };
    run(1, cfg.epochs_phase1, cfg.lr_phase1, false);
    run(2, cfg.epochs_phase2, cfg.lr_phase2, model.encoder->trainable());
    return model;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/manifest.json + <dir>/params.bin
// ---------------------------------------------------------------------------

inline constexpr std::string_view kParamsMagic = "APRC";
inline constexpr std::uint32_t kParamsVersion = 1;

inline void save_bundle(const FusionModel& m, const std::filesystem::path& dir,
                        const json& extra = json::object()) {
    std::filesystem::create_directories(dir);
    io::Writer w;
    for (const Dense* layer : {&m.temporal1, &m.temporal2, &m.head}) {
        w.put(static_cast<std::uint64_t>(layer->in));
        w.put(static_cast<std::uint64_t>(layer->out));
        w.put_doubles(layer->w);
        w.put_doubles(layer->b);
    }
    const auto enc = m.encoder->parameters();
    w.put_doubles(std::span<const double>(enc.data(), enc.size()));
    io::write_file((dir / "params.bin").string(), io::frame(kParamsMagic, kParamsVersion, w.bytes()));

    json classes = json::array();
    for (std::size_t i = 0; i < kNumRareActions; ++i) {
        classes.push_back(to_string(rare_action_at(i)));
    }
    json manifest = {{"format_version", kParamsVersion},
                     {"encoder", m.encoder->config()},
                     {"encoder_identifier", m.encoder->identifier()},
                     {"text_dim", m.text_dim()},
                     {"standardizer", {{"mean", m.standardizer.mean}, {"scale", m.standardizer.scale}}},
                     {"classes", std::move(classes)},
                     {"class_weights", m.class_weights},
                     {"gamma", m.config.gamma},
                     {"seed", m.config.seed},
                     {"config", m.config.to_json()}};
    for (const auto& [k, v] : extra.items()) {
        manifest[k] = v;
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "manifest.json").string());
    }
    out << manifest.dump(2) << '\n';
}

inline FusionModel load_bundle(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw IoError("rare model bundle '" + dir.string() + "' has no manifest.json");
    }
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw CorruptFileError(std::string("manifest.json: ") + e.what());
    }
    const auto cfg = RareConfig::from_json(manifest.at("config"));
    FusionModel m(encoder::make_encoder(manifest.at("encoder")), cfg);
    if (m.encoder->identifier() != manifest.at("encoder_identifier").get<std::string>()) {
        throw ConfigError("encoder identifier mismatch in rare model bundle");
    }
    const auto& st = manifest.at("standardizer");
    m.standardizer.mean = st.at("mean").get<std::array<double, kTemporalInputs>>();
    m.standardizer.scale = st.at("scale").get<std::array<double, kTemporalInputs>>();
    m.class_weights = manifest.at("class_weights").get<std::array<double, kNumRareActions>>();

    const auto file = io::read_file((dir / "params.bin").string());
    io::Reader r(io::unframe(file, kParamsMagic, kParamsVersion));
    for (Dense* layer : {&m.temporal1, &m.temporal2, &m.head}) {
        const auto in_dim = r.get<std::uint64_t>();
        const auto out_dim = r.get<std::uint64_t>();
        if (in_dim != layer->in || out_dim != layer->out) {
            throw CorruptFileError("layer shape does not match manifest");
        }
        layer->w = r.get_doubles();
        layer->b = r.get_doubles();
        if (layer->w.size() != in_dim * out_dim || layer->b.size() != out_dim) {
            throw CorruptFileError("layer parameter count mismatch");
        }
    }
    const auto enc = r.get_doubles();
    auto dst = m.encoder->parameters();
    if (enc.size() != dst.size()) {
        throw CorruptFileError("encoder parameter count mismatch");
    }
    std::copy(enc.begin(), enc.end(), dst.begin());
    if (!r.at_end()) {
        throw CorruptFileError("trailing bytes after rare model parameters");
    }
    return m;
}

} // namespace actpred::rare
