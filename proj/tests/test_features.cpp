#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "actpred/features.hpp"
#include "actpred/rng.hpp"
#include "actpred/synthetic.hpp"
#include "support.hpp"

using namespace actpred;
using namespace actpred::features;

namespace {

const KeywordDatabase& starter() {
    static const KeywordDatabase db = load_keyword_db(std::string(ACTPRED_DATA_DIR) + "/keywords.txt");
    return db;
}

double group_count(const KeywordCounts& kc, const KeywordDatabase& db, std::string_view cat,
                   std::string_view sub) {
    for (std::size_t g = 0; g < db.groups().size(); ++g) {
        if (db.groups()[g].category == cat && db.groups()[g].subcategory == sub) {
            return kc.group_counts[g];
        }
    }
    ADD_FAILURE() << "no group " << cat << " / " << sub;
    return -1;
}

double category_total(const KeywordCounts& kc, const KeywordDatabase& db, std::string_view cat) {
    return kc.category_totals[*db.category_index(cat)];
}

KeywordDatabase parse(const std::string& s) {
    std::istringstream in(s);
    return parse_keyword_db(in);
}

} // namespace

TEST(KeywordDb, StarterHasCandidates) {
    const auto& db = starter();
    bool found = false;
    for (const auto& g : db.groups()) {
        if (g.category == "Politics" && g.subcategory == "Candidates") {
            EXPECT_EQ(g.keywords, (std::vector<std::string>{"biden", "trump", "harris"}));
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(KeywordDb, EmptyFileIsLegal) {
    const auto db = parse("");
    EXPECT_TRUE(db.empty());
    const auto kc = keyword_counts("trump trump", db);
    EXPECT_TRUE(kc.group_counts.empty());
}

TEST(KeywordDb, DuplicateGroupIsSchemaError) {
    EXPECT_THROW(parse("Gaming / General / steam\nGaming / General / xbox\n"), SchemaError);
    EXPECT_THROW(parse("Gaming / General / , ,\n"), SchemaError);
}

TEST(KeywordDb, MalformedLineIsParseError) {
    EXPECT_THROW(parse("just words\n"), ParseError);
}

TEST(KeywordDb, CategoryDirectiveOverridesColumnNames) {
    const auto db = parse("@category Social prefix=social total=social_keywords_total\n"
                          "Social / Citation Patterns / via\nOther Stuff / A B / x\n");
    EXPECT_EQ(db.column_names(),
              (std::vector<std::string>{"social_citation_patterns_count", "other_stuff_a_b_count",
                                        "social_keywords_total", "other_stuff_total_count"}));
}

TEST(KeywordCounts, RepeatedNameCountsEveryOccurrence) {
    const auto& db = starter();
    const auto kc = keyword_counts("Trump said trump things about TRUMP", db);
    EXPECT_EQ(group_count(kc, db, "Politics", "Candidates"), 3);
    EXPECT_EQ(group_count(kc, db, "Trump Specific", "Trump Names"), 3);
}

TEST(KeywordCounts, EmptyTextAllZero) {
    const auto& db = starter();
    const auto kc = keyword_counts("", db);
    for (double v : kc.group_counts) {
        EXPECT_EQ(v, 0);
    }
    for (double v : kc.category_totals) {
        EXPECT_EQ(v, 0);
    }
}

TEST(KeywordCounts, PhrasesMatchAsSubstrings) {
    const auto& db = starter();
    const auto kc = keyword_counts("bird app invite codes", db);
    EXPECT_EQ(group_count(kc, db, "Bluesky", "Twitter"), 1);
    EXPECT_EQ(group_count(kc, db, "Bluesky", "Community"), 1);
    EXPECT_EQ(category_total(kc, db, "Bluesky"), 2);
}

TEST(KeywordCounts, SingleWordsMatchWholeTokensOnly) {
    const auto& db = starter();
    const auto kc = keyword_counts("artist paints art; ART!", db);
    EXPECT_EQ(group_count(kc, db, "Art", "Illustration"), 2);
}

TEST(KeywordCounts, TotalsAreSumsAndCountsDominatePresenceProperty) {
    const auto& db = starter();
    Rng rng(4);
    std::vector<std::string> vocab;
    for (const auto& g : db.groups()) {
        vocab.insert(vocab.end(), g.keywords.begin(), g.keywords.end());
    }
    vocab.insert(vocab.end(), {"the", "and", "Hello", "#tag", "<URL>", "!!", "é"});
    for (int trial = 0; trial < 300; ++trial) {
        std::string text;
        const std::size_t n = rng.index(15);
        for (std::size_t i = 0; i < n; ++i) {
            auto w = vocab[rng.index(vocab.size())];
            if (rng.bernoulli(0.3)) {
                for (auto& c : w) {
                    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                }
            }
            text += w + (rng.bernoulli(0.5) ? " " : ", ");
        }
        const auto kc = keyword_counts(text, db);
        std::vector<double> sums(db.categories().size(), 0.0);
        const auto lower = text::to_lower_ascii(text);
        for (std::size_t g = 0; g < db.groups().size(); ++g) {
            sums[*db.category_index(db.groups()[g].category)] += kc.group_counts[g];
            bool present = false;
            for (const auto& kw : db.groups()[g].keywords) {
                present = present || lower.find(kw) != std::string::npos;
            }
            if (kc.group_counts[g] > 0) {
                EXPECT_TRUE(present);
            }
            EXPECT_GE(kc.group_counts[g], 0);
        }
        for (std::size_t c = 0; c < sums.size(); ++c) {
            EXPECT_EQ(kc.category_totals[c], sums[c]);
        }
    }
}

TEST(TextFeatures, EmptyIsAllZero) {
    EXPECT_EQ(text_features(""), TextFeatures{});
}

TEST(TextFeatures, HandCountedExample) {
    const auto f = text_features("Hi there! See <URL> #news");
    EXPECT_EQ(f.word_count, 5);
    EXPECT_EQ(f.exclamation_count, 1);
    EXPECT_EQ(f.hashtag_count, 1);
    EXPECT_EQ(f.tag_url_count, 1);
    EXPECT_EQ(f.tag_username_count, 0);
    EXPECT_EQ(f.char_count, 25);
}

TEST(TextFeatures, CharCountIsUnicodeScalars) {
    EXPECT_EQ(text_features("café ☕").char_count, 6);
}

TEST(TextFeatures, RangesProperty) {
    Rng rng(6);
    const std::string alphabet = "abcXYZ 01!?.#<>URLé";
    for (int trial = 0; trial < 500; ++trial) {
        std::string s;
        const std::size_t n = rng.index(40);
        for (std::size_t i = 0; i < n; ++i) {
            s += alphabet[rng.index(alphabet.size())];
        }
        const auto f = text_features(s);
        EXPECT_GE(f.uppercase_ratio, 0.0);
        EXPECT_LE(f.uppercase_ratio, 1.0);
        for (double v : values(f)) {
            EXPECT_GE(v, 0.0);
        }
        EXPECT_EQ(text_features(s), f);
    }
}

TEST(Temporal, ReferenceRecordGap) {
    const auto f = temporal_features(3885851, 8012737, false);
    EXPECT_EQ(f.time_diff, 4126886);
    EXPECT_NEAR(static_cast<double>(f.time_diff) / 86400.0, 47.8, 0.05);
    EXPECT_TRUE(f.is_within_quarter);
    EXPECT_FALSE(f.is_within_month);
    EXPECT_FALSE(f.is_long_gap);
    EXPECT_FALSE(f.is_same_day);
}

TEST(Temporal, ZeroGapSetsEveryWindow) {
    const auto f = temporal_features(500, 500, true);
    EXPECT_TRUE(f.is_immediate_reply && f.is_fast_reply && f.is_same_day && f.is_within_week &&
                f.is_within_month && f.is_within_quarter);
    EXPECT_FALSE(f.is_long_gap);
    EXPECT_TRUE(f.is_same_user);
}

TEST(Temporal, OneHourIsNotFast) {
    const auto f = temporal_features(0, 3600, false);
    EXPECT_FALSE(f.is_fast_reply);
    EXPECT_TRUE(f.is_same_day);
    EXPECT_FALSE(f.is_immediate_reply);
}

TEST(Temporal, OrderingError) {
    EXPECT_THROW(temporal_features(10, 9, false), ValidationError);
}

TEST(Temporal, FlagsConsistentWithGapProperty) {
    Rng rng(10);
    const std::int64_t edges[] = {60, 3600, 86400, 7 * 86400, 30 * 86400, 90 * 86400};
    for (int trial = 0; trial < 2000; ++trial) {
        const auto t1 = static_cast<std::int64_t>(rng.index(10'000'000));
        std::int64_t d;
        if (trial % 2 == 0) {
            d = edges[rng.index(6)] + static_cast<std::int64_t>(rng.index(3)) - 1;
        } else {
            d = static_cast<std::int64_t>(rng.index(200 * 86400));
        }
        const auto f = temporal_features(t1, t1 + d, false);
        EXPECT_EQ(f.time_diff, d);
        EXPECT_EQ(f.is_immediate_reply, d < 60);
        EXPECT_EQ(f.is_fast_reply, d < 3600);
        EXPECT_EQ(f.is_same_day, d < 86400);
        EXPECT_EQ(f.is_within_week, d < 7 * 86400);
        EXPECT_EQ(f.is_within_month, d < 30 * 86400);
        EXPECT_EQ(f.is_within_quarter, d < 90 * 86400);
        EXPECT_EQ(f.is_long_gap, d >= 90 * 86400);
    }
}

TEST(NeuralTemporal, PhaseZeroAndQuarterDay) {
    const auto a = neural_temporal_vector(0, 86400 * 3);
    EXPECT_NEAR(a[3], 0.0, 1e-9);
    EXPECT_NEAR(a[4], 1.0, 1e-9);
    const auto b = neural_temporal_vector(0, 86400 * 3 + 21600);
    EXPECT_NEAR(b[3], 1.0, 1e-9);
    EXPECT_NEAR(b[4], 0.0, 1e-9);
}

TEST(NeuralTemporal, UnitCirclesProperty) {
    Rng rng(12);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto t1 = static_cast<std::int64_t>(rng.index(50'000'000));
        const auto t2 = t1 + static_cast<std::int64_t>(rng.index(20'000'000));
        const auto v = neural_temporal_vector(t1, t2);
        EXPECT_EQ(v.size(), 12u);
        for (std::size_t k : {3u, 5u, 7u}) {
            EXPECT_NEAR(v[k] * v[k] + v[k + 1] * v[k + 1], 1.0, 1e-9);
        }
        EXPECT_DOUBLE_EQ(v[2], std::log1p(static_cast<double>(t2 - t1)));
    }
}

TEST(Assemble, NamedEntriesMatchSubExtractors) {
    const auto& db = starter();
    const auto schema = FeatureSchema::for_database(db);
    const auto t = support::two_message("Trump vs Biden?! #election", 3, ActionLabel::Like, 100, 5000);
    const auto fv = assemble(t, db);
    ASSERT_EQ(fv.values.size(), schema.size());
    const auto tf = text_features(*t.first().text);
    EXPECT_EQ(fv.at(schema, "question_count"), static_cast<double>(tf.question_count));
    EXPECT_EQ(fv.at(schema, "hashtag_count"), static_cast<double>(tf.hashtag_count));
    EXPECT_EQ(fv.at(schema, "political_candidates_count"), 2.0);
    EXPECT_EQ(fv.at(schema, "time_diff"), 4900.0);
    EXPECT_EQ(fv.at(schema, "is_same_user"), 0.0);
    EXPECT_EQ(fv.at(schema, "second_time_missing"), 0.0);
    EXPECT_EQ(assemble(t, db), fv);
    EXPECT_THROW(fv.at(schema, "no_such_column"), ContractError);
}

TEST(Assemble, WrongLengthIsContractError) {
    const auto& db = starter();
    EXPECT_THROW(assemble(support::long_thread(3, 0), db), ContractError);
}

TEST(Assemble, MissingSecondTimeSetsFlag) {
    const auto& db = starter();
    const auto schema = FeatureSchema::for_database(db);
    corpus::Message first{"u", 777, "hello"};
    const auto fv = assemble_parts(first, std::nullopt, std::nullopt, db);
    EXPECT_EQ(fv.at(schema, "second_time_missing"), 1.0);
    EXPECT_EQ(fv.at(schema, "time_diff"), 0.0);
    EXPECT_EQ(fv.at(schema, "second_relative_integer_time"), 777.0);
}

TEST(Assemble, GoldenRow) {
    const auto& db = starter();
    const auto schema = FeatureSchema::for_database(db);
    const auto fx = support::fixture_json("feature_golden.json");
    const auto t = corpus::parse_thread_record(fx["thread"].dump());
    const auto fv = assemble(t, db);
    const auto& nonzero = fx["nonzero"];
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& name = schema.name(i);
        const double expected = nonzero.contains(name) ? nonzero[name].get<double>() : 0.0;
        EXPECT_DOUBLE_EQ(fv.values[i], expected) << name;
    }
    for (const auto& [name, v] : nonzero.items()) {
        EXPECT_TRUE(schema.index(name).has_value()) << name;
    }
}

TEST(Schema, JsonRoundTripKeepsOrder) {
    const auto schema = FeatureSchema::for_database(starter());
    const auto back = FeatureSchema::from_json(nlohmann::json::parse(schema.to_json().dump()));
    EXPECT_EQ(back.names(), schema.names());
    EXPECT_THROW(FeatureSchema::from_json({{"version", 2}, {"columns", schema.names()}}), SchemaError);
    EXPECT_THROW(FeatureSchema({"a", "b", "a"}), SchemaError);
}

TEST(Schema, CoversReportedImportanceColumns) {
    const auto schema = FeatureSchema::for_database(starter());
    const char* reported[] = {
        "second_relative_integer_time",  "first_relative_integer_time",
        "avg_word_length",               "uppercase_ratio",
        "char_count",                    "time_diff",
        "word_count",                    "political_canadian_politics_count",
        "political_total_count",         "digit_count",
        "sentence_count",                "exclamation_count",
        "hashtag_count",                 "political_government_count",
        "question_count",                "is_same_user",
        "tag_url_count",                 "trump_specific_total_count",
        "political_candidates_count",    "political_election_2024_count",
        "social_citation_patterns_count", "political_political_parties_count",
        "social_keywords_total",         "trump_specific_trump_names_count",
        "profanity_intensity_total_count", "social_engagement_count",
    };
    for (const char* name : reported) {
        EXPECT_TRUE(schema.index(name).has_value()) << name;
    }
}

TEST(Assemble, DeterministicOverSyntheticCorpus) {
    synthetic::CorpusConfig cfg;
    cfg.n = 300;
    cfg.long_thread_fraction = 0.0;
    const auto ts = synthetic::generate_corpus(cfg);
    for (const auto& t : ts) {
        if (t.length() == 2) {
            EXPECT_EQ(assemble(t, starter()), assemble(t, starter()));
        }
    }
}
