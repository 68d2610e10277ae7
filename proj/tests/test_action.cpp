#include <gtest/gtest.h>

#include "actpred/action.hpp"
#include "actpred/error.hpp"

using namespace actpred;

TEST(Action, VocabularyInFrequencyOrder) {
    const std::vector<std::string> expected = {"follow", "like",   "unfollow",    "reply",
                                               "quote",  "unlike", "post_update", "repost",
                                               "block",  "post_delete", "unblock", "unrepost"};
    ASSERT_EQ(kNumActions, expected.size());
    for (std::size_t i = 0; i < kNumActions; ++i) {
        EXPECT_EQ(to_string(kAllActions[i]), expected[i]);
        EXPECT_EQ(index_of(kAllActions[i]), i);
    }
}

TEST(Action, ParseIsCaseInsensitiveAndRoundTrips) {
    for (auto a : kAllActions) {
        EXPECT_EQ(parse_action(to_string(a)), a);
    }
    EXPECT_EQ(parse_action("FOLLOW"), ActionLabel::Follow);
    EXPECT_EQ(parse_action("Post_Delete"), ActionLabel::PostDelete);
    EXPECT_FALSE(try_parse_action("retweet"));
    EXPECT_THROW(parse_action("retweet"), Error);
}

TEST(Action, CoarseningGroupsTheTenRareActions) {
    EXPECT_EQ(coarsen(ActionLabel::Follow), CoarseLabel::Follow);
    EXPECT_EQ(coarsen(ActionLabel::Like), CoarseLabel::Like);
    EXPECT_EQ(coarsen(ActionLabel::Block), CoarseLabel::Other);
    EXPECT_EQ(coarsen(ActionLabel::Unrepost), CoarseLabel::Other);
    std::size_t rare = 0;
    for (auto a : kAllActions) {
        EXPECT_EQ(is_rare(a), coarsen(a) == CoarseLabel::Other);
        rare += is_rare(a) ? 1 : 0;
    }
    EXPECT_EQ(rare, kNumRareActions);
}

TEST(Action, RareIndexIsDense) {
    for (std::size_t i = 0; i < kNumRareActions; ++i) {
        const auto a = rare_action_at(i);
        EXPECT_TRUE(is_rare(a));
        EXPECT_EQ(rare_index(a), i);
    }
    EXPECT_EQ(rare_action_at(0), ActionLabel::Unfollow);
    EXPECT_EQ(rare_action_at(9), ActionLabel::Unrepost);
}

TEST(Errors, KindsAreStable) {
    EXPECT_EQ(ParseError(3, "x").kind(), "parse");
    EXPECT_EQ(ParseError(3, "x").line(), 3u);
    EXPECT_EQ(SchemaError("cluster", "x").field(), "cluster");
    EXPECT_EQ(ValidationError("x").kind(), "validation");
    EXPECT_EQ(ConfigError("x").kind(), "config");
    EXPECT_EQ(GenerationError(7, "x").index(), 7u);
}
