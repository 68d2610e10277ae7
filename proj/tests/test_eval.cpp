#include <gtest/gtest.h>

#include <cmath>

#include "actpred/evaluation.hpp"
#include "actpred/rng.hpp"
#include "support.hpp"

using namespace actpred;
using namespace actpred::eval;

namespace {

struct Run {
    std::vector<PredictionRow> predictions;
    std::vector<corpus::ConversationThread> golds;
};

Run fixture_run() {
    const auto fx = support::fixture_json("evaluate_run.json");
    Run r;
    for (const auto& p : fx["predictions"]) {
        r.predictions.push_back(parse_prediction_row(p));
    }
    for (const auto& t : fx["threads"]) {
        r.golds.push_back(corpus::parse_thread_record(t.dump()));
    }
    return r;
}

} // namespace

TEST(Cosine, SelfSimilarityIsOne) {
    const encoder::HashedNGramEncoder enc;
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        std::string s;
        const auto n = 1 + rng.index(80);
        for (std::size_t k = 0; k < n; ++k) {
            s += static_cast<char>('a' + rng.index(26));
            if (rng.bernoulli(0.2)) {
                s += ' ';
            }
        }
        const auto c = cosine_similarity(s, s, enc);
        EXPECT_NEAR(c.value, 1.0, 1e-6);
        EXPECT_FALSE(c.zero_vector);
    }
}

TEST(Cosine, GoldenPairs) {
    const encoder::HashedNGramEncoder enc;
    const auto fx = support::fixture_json("hashed_encoder.json");
    for (const auto& c : fx["cosine"]) {
        const auto s = cosine_similarity(c["a"].get<std::string>(), c["b"].get<std::string>(), enc);
        EXPECT_NEAR(s.value, c["cosine"].get<double>(), 1e-12) << c["a"];
    }
}

TEST(Cosine, ZeroVectorAndRangeProperty) {
    const std::vector<double> zero(3, 0.0);
    const std::vector<double> v{1.0, 2.0, 3.0};
    EXPECT_TRUE(cosine(zero, v).zero_vector);
    EXPECT_EQ(cosine(zero, v).value, 0.0);
    EXPECT_THROW(cosine(v, std::vector<double>{1.0}), ContractError);
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> a(5), b(5);
        for (std::size_t k = 0; k < 5; ++k) {
            a[k] = rng.normal();
            b[k] = rng.normal();
        }
        const auto c = cosine(a, b).value;
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
        EXPECT_DOUBLE_EQ(c, cosine(b, a).value);
    }
}

TEST(Cosine, ProviderFailureIsScoringError) {
    const encoder::ServiceEncoder enc("http://127.0.0.1:1", 4, 1);
    EXPECT_THROW(cosine_similarity("a", "b", enc), ScoringError);
}

TEST(Report, MatchesHandTalliedRun) {
    const auto fx = support::fixture_json("evaluate_run.json");
    const auto run = fixture_run();
    const auto j = evaluate_run(run.predictions, run.golds);
    const auto& e = fx["expected"];
    for (const char* section : {"coarse", "full", "rare"}) {
        for (const char* key : {"macro_f1", "macro_f1_supported", "weighted_f1"}) {
            EXPECT_NEAR(j[section][key].get<double>(), e[section][key].get<double>(), 1e-12)
                << section << "." << key;
        }
    }
    for (const char* key : {"min", "max", "avg"}) {
        EXPECT_NEAR(j["coarse_per_cluster"]["macro_f1"][key].get<double>(), e["per_cluster_macro"][key].get<double>(),
                    1e-12);
    }
    for (const auto& [route, n] : e["route_counts"].items()) {
        EXPECT_EQ(j["routes"]["routes"][route]["count"], n) << route;
    }
    EXPECT_EQ(j["records"], 10);
    EXPECT_FALSE(j.contains("similarity"));
    EXPECT_EQ(j["full"]["confusion"]["counts"].size(), kNumActions);
}

TEST(Report, SimilarityOverGoldReplies) {
    const auto run = fixture_run();
    const encoder::HashedNGramEncoder enc;
    const std::vector<ReplyRow> replies{{6, "thanks for sharing"}, {0, "ignored: not a gold reply"}};
    const auto j = evaluate_run(run.predictions, run.golds, std::span<const ReplyRow>(replies), &enc);
    EXPECT_EQ(j["similarity"]["pairs"], 1);
    EXPECT_NEAR(j["similarity"]["mean"].get<double>(), 1.0, 1e-9);
    EXPECT_EQ(j["similarity"]["provider"], enc.identifier());
    const std::vector<ReplyRow> none;
    const auto k = evaluate_run(run.predictions, run.golds, std::span<const ReplyRow>(none), &enc);
    EXPECT_EQ(k["similarity"]["pairs"], 0);
    EXPECT_EQ(k["similarity"]["gold_replies_without_generation"], 1);
}

TEST(Report, PerfectRunScoresOne) {
    auto run = fixture_run();
    for (auto& p : run.predictions) {
        p.action = *run.golds[p.index].gold_action;
        p.route.reset();
    }
    const auto j = evaluate_run(run.predictions, run.golds);
    EXPECT_DOUBLE_EQ(j["coarse"]["macro_f1"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["full"]["macro_f1_supported"].get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(j["full"]["weighted_f1"].get<double>(), 1.0);
    EXPECT_FALSE(j.contains("routes"));
}

TEST(Report, AlignmentContract) {
    auto run = fixture_run();
    auto dup = run.predictions;
    dup[1].index = 0;
    EXPECT_THROW(evaluate_run(dup, run.golds), ContractError);
    auto shorter = run.predictions;
    shorter.pop_back();
    EXPECT_THROW(evaluate_run(shorter, run.golds), ContractError);
    auto out_of_range = run.predictions;
    out_of_range[0].index = 99;
    EXPECT_THROW(evaluate_run(out_of_range, run.golds), ContractError);
}

TEST(Report, RowOrderDoesNotMatterProperty) {
    const auto run = fixture_run();
    const auto base = evaluate_run(run.predictions, run.golds);
    Rng rng(12);
    auto shuffled = run.predictions;
    for (int i = 0; i < 100; ++i) {
        rng.shuffle(std::span<PredictionRow>(shuffled));
        ASSERT_EQ(evaluate_run(shuffled, run.golds), base);
    }
}

TEST(PredictionRows, Parsing) {
    const auto r = parse_prediction_row({{"index", 3}, {"action", "BLOCK"}, {"route", "rare_classifier"}});
    EXPECT_EQ(r.index, 3u);
    EXPECT_EQ(r.action, ActionLabel::Block);
    EXPECT_EQ(r.route, router::RouteTag::RareClassifier);
    EXPECT_FALSE(parse_prediction_row({{"index", 0}, {"action", "like"}}).route.has_value());
    EXPECT_THROW(parse_prediction_row({{"index", 0}, {"action", "like"}, {"route", "magic"}}), SchemaError);
    EXPECT_THROW(parse_prediction_row({{"index", 0}, {"action", "retweet"}}), SchemaError);
}
