#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "actpred/rare_classifier.hpp"
#include "actpred/synthetic.hpp"
#include "support.hpp"

using namespace actpred;
using namespace actpred::rare;

namespace {

RareConfig small_config(std::uint64_t seed = 42) {
    RareConfig c;
    c.hidden1 = 32;
    c.hidden2 = 16;
    c.seed = seed;
    return c;
}

void load_dense(Dense& d, const support::json& j) {
    d.w = j["w"].get<std::vector<double>>();
    d.b = j["b"].get<std::vector<double>>();
    ASSERT_EQ(d.w.size(), d.in * d.out);
    ASSERT_EQ(d.b.size(), d.out);
}

} // namespace

TEST(Focal, ReferenceValue) {
    const auto fx = support::fixture_json("focal_loss.json");
    const auto z = fx["logits"].get<std::vector<double>>();
    const std::vector<double> w(z.size(), 1.0);
    const double loss = focal_loss(z, fx["label"].get<std::size_t>(), w, fx["gamma"].get<double>());
    EXPECT_NEAR(loss, fx["loss"].get<double>(), 1e-12);
    EXPECT_NEAR(loss, 0.2403, 1e-4);
}

TEST(Focal, GradientMatchesFiniteDifferences) {
    const auto r = support::focal_gradient_check(1000, 123);
    EXPECT_LE(r.max_rel_error, 1e-5);
    EXPECT_LE(r.max_ce_gap, 1e-12);
}

TEST(Focal, WeightScalesLinearly) {
    const std::vector<double> z{0.5, -1.0, 2.0};
    const std::vector<double> w1{1.0, 1.0, 1.0};
    const std::vector<double> w3{1.0, 3.0, 1.0};
    EXPECT_NEAR(focal_loss(z, 1, w3, 2.0), 3.0 * focal_loss(z, 1, w1, 2.0), 1e-12);
}

TEST(Focal, ConfidentCorrectIsNearZero) {
    const std::vector<double> z{40.0, 0.0, 0.0};
    const std::vector<double> w(3, 1.0);
    EXPECT_LT(focal_loss(z, 0, w, 2.0), 1e-30);
    for (double g : focal_loss_grad(z, 0, w, 2.0)) {
        EXPECT_TRUE(std::isfinite(g));
    }
}

TEST(Focal, BadArguments) {
    const std::vector<double> z{0.0, 1.0};
    const std::vector<double> w{1.0, 1.0};
    EXPECT_THROW(focal_loss(z, 2, w, 2.0), ContractError);
    EXPECT_THROW(focal_loss(z, 0, std::vector<double>{1.0}, 2.0), ContractError);
    EXPECT_THROW(focal_loss(z, 0, w, -1.0), ContractError);
    EXPECT_THROW(focal_loss(z, 0, std::vector<double>{1.0, 0.0}, 2.0), ContractError);
    const std::vector<double> bad{0.0, std::numeric_limits<double>::quiet_NaN()};
    EXPECT_THROW(focal_loss(bad, 0, w, 2.0), NumericError);
    const std::vector<double> inf{0.0, std::numeric_limits<double>::infinity()};
    EXPECT_THROW(focal_loss_grad(inf, 0, w, 2.0), NumericError);
}

TEST(Standardizer, ConstantColumnKeepsUnitScale) {
    std::vector<NeuralTemporalVector> rows(4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].fill(2.0);
        rows[i][0] = static_cast<double>(i);
    }
    const auto s = Standardizer::fit(rows);
    EXPECT_DOUBLE_EQ(s.mean[0], 1.5);
    EXPECT_DOUBLE_EQ(s.scale[1], 1.0);
    EXPECT_DOUBLE_EQ(s.apply(rows[0])[1], 0.0);
}

TEST(Fusion, ForwardMatchesFixture) {
    const auto fx = support::fixture_json("fusion_forward.json");
    RareConfig cfg;
    cfg.hidden1 = fx["hidden1"].get<std::size_t>();
    cfg.hidden2 = fx["hidden2"].get<std::size_t>();
    FusionModel m(std::make_unique<encoder::HashedNGramEncoder>(fx["encoder_dim"].get<std::size_t>()), cfg);
    load_dense(m.temporal1, fx["temporal1"]);
    load_dense(m.temporal2, fx["temporal2"]);
    load_dense(m.head, fx["head"]);
    m.standardizer.mean = fx["standardizer"]["mean"].get<std::array<double, kTemporalInputs>>();
    m.standardizer.scale = fx["standardizer"]["scale"].get<std::array<double, kTemporalInputs>>();
    for (const auto& c : fx["cases"]) {
        const auto t12 = c["t12"].get<NeuralTemporalVector>();
        const auto logits = m.forward(c["text"].get<std::string>(), t12);
        ASSERT_EQ(logits.size(), kNumRareActions);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            EXPECT_NEAR(logits[i], c["logits"][i].get<double>(), 1e-9) << c["text"];
        }
        EXPECT_EQ(to_string(predict_rare(m, c["text"].get<std::string>(), t12)), c["label"].get<std::string>());
    }
    const std::vector<double> wrong(3, 0.0);
    EXPECT_THROW(m.forward_embedded(wrong, NeuralTemporalVector{}), ContractError);
}

TEST(Fusion, ArgmaxTieGoesToFirst) {
    std::vector<double> logits(kNumRareActions, 0.5);
    EXPECT_EQ(rare_argmax(logits), ActionLabel::Unfollow);
    logits[3] = 0.7;
    logits[5] = 0.7;
    EXPECT_EQ(rare_argmax(logits), rare_action_at(3));
}

TEST(Train, TwoPhaseScheduleFreezesEncoderFirst) {
    const auto samples = synthetic::fusion_corpus(400, 3);
    TrainLog log;
    std::vector<int> callback_epochs;
    const auto model = train_two_phase(samples, std::make_unique<encoder::AdaptiveHashedEncoder>(64),
                                       small_config(), &log,
                                       [&](const FusionModel&, const EpochLog& e) { callback_epochs.push_back(e.epoch); });
    ASSERT_EQ(log.epochs.size(), 5u);
    EXPECT_EQ(callback_epochs, (std::vector<int>{1, 2, 3, 4, 5}));
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(log.epochs[i].phase, 1);
        EXPECT_FALSE(log.epochs[i].encoder_updated);
        EXPECT_EQ(log.epochs[i].encoder_fingerprint, log.initial_encoder_fingerprint);
    }
    for (std::size_t i = 2; i < 5; ++i) {
        EXPECT_EQ(log.epochs[i].phase, 2);
        EXPECT_TRUE(log.epochs[i].encoder_updated);
    }
    EXPECT_NE(log.epochs.back().encoder_fingerprint, log.initial_encoder_fingerprint);
    EXPECT_EQ(parameter_fingerprint(model.encoder->parameters()), log.epochs.back().encoder_fingerprint);
}

TEST(Train, PhaseOneLowersLossAcrossSeeds) {
    int improved = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto samples = synthetic::fusion_corpus(300, seed);
        TrainLog log;
        train_two_phase(samples, std::make_unique<encoder::AdaptiveHashedEncoder>(64), small_config(seed), &log);
        improved += log.epochs[1].eval_loss < log.initial_loss ? 1 : 0;
    }
    EXPECT_GE(improved, 8);
}

TEST(Train, DeterministicForSeed) {
    const auto samples = synthetic::fusion_corpus(200, 4);
    const auto a = train_two_phase(samples, std::make_unique<encoder::AdaptiveHashedEncoder>(32), small_config());
    const auto b = train_two_phase(samples, std::make_unique<encoder::AdaptiveHashedEncoder>(32), small_config());
    EXPECT_EQ(a.head.w, b.head.w);
    EXPECT_EQ(a.temporal1.w, b.temporal1.w);
    EXPECT_EQ(parameter_fingerprint(a.encoder->parameters()), parameter_fingerprint(b.encoder->parameters()));
}

TEST(Train, Preconditions) {
    std::vector<RareSample> one_class(10);
    EXPECT_THROW(train_two_phase(one_class, std::make_unique<encoder::HashedNGramEncoder>(8), small_config()),
                 TrainingError);
    std::vector<RareSample> common(2);
    common[0].label = ActionLabel::Like;
    common[1].label = ActionLabel::Block;
    EXPECT_THROW(train_two_phase(common, std::make_unique<encoder::HashedNGramEncoder>(8), small_config()),
                 ContractError);
    auto bad = small_config();
    bad.dropout1 = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_EQ(RareConfig::from_json(small_config(9).to_json()).to_json(), small_config(9).to_json());
}

TEST(Train, ClassWeightsAreInverseFrequency) {
    std::vector<RareSample> s(4);
    s[0].label = s[1].label = s[2].label = ActionLabel::Reply;
    s[3].label = ActionLabel::Block;
    const auto w = rare_class_weights(s);
    EXPECT_NEAR(w[rare_index(ActionLabel::Reply)], 4.0 / 6.0, 1e-12);
    EXPECT_NEAR(w[rare_index(ActionLabel::Block)], 2.0, 1e-12);
    EXPECT_EQ(w[rare_index(ActionLabel::Quote)], 1.0);
}

TEST(Train, TemporalInputsCarrySignal) {
    const auto r = support::fusion_ablation(1500, 500, 11, small_config(), 256);
    EXPECT_GE(r.fused - r.text_only, 0.10) << "fused " << r.fused << " text-only " << r.text_only;
}

TEST(Bundle, RoundTripPreservesLogits) {
    const auto samples = synthetic::fusion_corpus(200, 5);
    const auto model =
        train_two_phase(samples, std::make_unique<encoder::AdaptiveHashedEncoder>(32), small_config());
    support::TempDir dir;
    save_bundle(model, dir.path(), {{"note", "x"}});
    const auto back = load_bundle(dir.path());
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(back.forward(samples[i].text, samples[i].t12), model.forward(samples[i].text, samples[i].t12));
    }
    EXPECT_EQ(back.class_weights, model.class_weights);
    EXPECT_THROW(load_bundle(dir / "nope"), IoError);
}
