#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "actpred/action.hpp"
#include "actpred/corpus.hpp"
#include "actpred/error.hpp"
#include "actpred/features.hpp"
#include "actpred/rare_classifier.hpp"
#include "actpred/rng.hpp"

// Seeded generators for test corpora with known structure.
namespace actpred::synthetic {

/// Action shares from the reference training distribution (percent).
inline constexpr std::array<double, kNumActions> kReferenceMix{
    68.16, 28.70, 1.52, 0.74, 0.64, 0.21, 0.02, 0.01, 0.01, 0.0002, 0.00005, 0.00003};

struct CorpusConfig {
    std::size_t n = 5000;
    std::uint64_t seed = 42;
    /// Multiplier on the share of every action other than FOLLOW and LIKE.
    double rare_boost = 4.0;
    /// Fraction of threads with three or more messages (always REPLY).
    double long_thread_fraction = 0.01;
    /// Fraction of two-message threads whose first message is a repeated viral post.
    double viral_fraction = 0.3;
    /// Probability that a thread's text and timing follow its action's profile.
    double signal = 0.85;
    std::array<double, kNumActions> mix = kReferenceMix;

    void validate() const {
        auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!unit(long_thread_fraction) || !unit(viral_fraction) || !unit(signal) || !(rare_boost > 0.0)) {
            throw ConfigError("synthetic corpus fractions must lie in [0, 1]");
        }
        for (double m : mix) {
            if (m < 0.0) {
                throw ConfigError("action mix entries must be non-negative");
            }
        }
    }
};

namespace detail {

struct Profile {
    std::array<std::string_view, 5> words;
    double median_gap_seconds;
};

// Indexed by ActionLabel.
inline constexpr std::array<Profile, kNumActions> kProfiles{{
    {{"commissions open", "new here", "twitch", "steam", "vtuber"}, 86400.0},
    {{"cozy", "good morning", "cute", "sunset", "coffee"}, 600.0},
    {{"trump", "biden", "election", "border", "ballot"}, 1209600.0},
    {{"what do you think", "how do i", "anyone else", "question", "help"}, 1800.0},
    {{"hot take", "ratio", "this is wrong", "actually", "imagine"}, 7200.0},
    {{"elon", "twitter", "bird app", "leaving", "invite codes"}, 86400.0},
    {{"edit", "typo", "correction", "update", "fixed"}, 60.0},
    {{"sharing", "boost", "signal", "please share", "spread"}, 1200.0},
    {{"idiot", "troll", "spam", "shut up", "clown"}, 259200.0},
    {{"oops", "wrong account", "test", "ignore this", "deleted"}, 3600.0},
    {{"sorry", "apologize", "misunderstanding", "my bad", "forgive"}, 864000.0},
    {{"retract", "misinformation", "fake", "debunked", "false"}, 21600.0},
}};

inline constexpr std::array<std::string_view, 24> kFiller{
    "the",   "a",     "today", "really", "just",  "think", "people", "this",
    "that",  "so",    "very",  "about",  "again", "still", "more",   "time",
    "world", "news",  "life",  "post",   "here",  "we",    "you",    "all"};

inline constexpr std::array<std::string_view, 6> kReplies{
    "totally agree with this",
    "this is such a good point honestly",
    "lol same here",
    "not sure about that one, but ok",
    "thanks for sharing @<USERNAME>",
    "love this so much"};

inline std::string make_text(Rng& rng, ActionLabel topic) {
    const auto& words = kProfiles[index_of(topic)].words;
    std::string s;
    const std::size_t fill = 3 + rng.index(6);
    const std::size_t key_at = rng.index(fill + 1);
    for (std::size_t i = 0; i <= fill; ++i) {
        if (!s.empty()) {
            s += ' ';
        }
        s += i == key_at ? words[rng.index(words.size())] : kFiller[rng.index(kFiller.size())];
    }
    const double tag = rng.uniform();
    if (tag < 0.1) {
        s += " <URL>";
    } else if (tag < 0.2) {
        s = "@<USERNAME> " + s;
    }
    if (rng.bernoulli(0.3)) {
        s += rng.bernoulli(0.5) ? "?" : "!";
    }
    return s;
}

inline std::int64_t make_gap(Rng& rng, ActionLabel a) {
    const double median = kProfiles[index_of(a)].median_gap_seconds;
    const double g = median * std::exp(0.6 * rng.normal());
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(g)));
}

inline std::string user(Rng& rng) { return "u" + std::to_string(rng.index(5000)); }

} // namespace detail

/// Labeled corpus whose actions depend on first-message topic, time gap,
/// and (for repeated viral posts) the post itself. Deterministic per seed.
inline std::vector<corpus::ConversationThread> generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::array<double, kNumActions> mix = cfg.mix;
    for (std::size_t a = 2; a < kNumActions; ++a) {
        mix[a] *= cfg.rare_boost;
    }
    struct Viral {
        std::string text;
        std::array<ActionLabel, kNumClusters> by_cluster;
    };
    std::vector<Viral> virals(std::max<std::size_t>(4, cfg.n / 60));
    for (auto& v : virals) {
        const auto topic = kAllActions[rng.categorical(mix)];
        v.text = "viral: " + detail::make_text(rng, topic);
        const auto common = kAllActions[rng.categorical(mix)];
        for (auto& c : v.by_cluster) {
            c = rng.bernoulli(0.8) ? common : kAllActions[rng.categorical(mix)];
        }
    }

    std::vector<corpus::ConversationThread> out;
    out.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        corpus::ConversationThread t;
        t.responder_cluster = static_cast<int>(rng.index(kNumClusters));
        std::int64_t time = static_cast<std::int64_t>(rng.index(8'000'000));
        if (rng.bernoulli(cfg.long_thread_fraction)) {
            const std::size_t len = 3 + rng.index(3);
            for (std::size_t m = 0; m < len; ++m) {
                t.messages.push_back(
                    {detail::user(rng), time, detail::make_text(rng, kAllActions[rng.categorical(mix)])});
                time += detail::make_gap(rng, ActionLabel::Reply);
            }
            t.gold_action = ActionLabel::Reply;
            t.gold_text = std::string(detail::kReplies[rng.index(detail::kReplies.size())]);
            out.push_back(std::move(t));
            continue;
        }

        ActionLabel action;
        std::string first_text;
        if (rng.bernoulli(cfg.viral_fraction)) {
            const auto& v = virals[rng.index(virals.size())];
            first_text = v.text;
            action = rng.bernoulli(0.93) ? v.by_cluster[static_cast<std::size_t>(t.responder_cluster)]
                                         : kAllActions[rng.categorical(mix)];
        } else {
            action = kAllActions[rng.categorical(mix)];
            const auto topic = rng.bernoulli(cfg.signal) ? action : kAllActions[rng.categorical(mix)];
            first_text = detail::make_text(rng, topic);
        }
        const auto gap_profile = rng.bernoulli(cfg.signal) ? action : kAllActions[rng.categorical(mix)];
        const std::string first_user = detail::user(rng);
        t.messages.push_back({first_user, time, first_text});
        const bool self_action = action == ActionLabel::PostUpdate || action == ActionLabel::PostDelete;
        const std::string second_user = self_action ? first_user : detail::user(rng);
        std::optional<std::string> second_text;
        if (action == ActionLabel::Reply || action == ActionLabel::Quote ||
            action == ActionLabel::PostUpdate) {
            second_text = std::string(detail::kReplies[rng.index(detail::kReplies.size())]);
        }
        t.messages.push_back({second_user, time + detail::make_gap(rng, gap_profile), second_text});
        t.gold_action = action;
        if (action == ActionLabel::Reply) {
            t.gold_text = second_text;
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Rare-action samples whose label is fixed jointly by a text topic (five
/// groups) and a time-gap bucket (under an hour vs. over a day).
inline std::vector<rare::RareSample> fusion_corpus(std::size_t n, std::uint64_t seed) {
    static constexpr std::array<std::array<std::string_view, 4>, 5> kTopics{{
        {"galaxy", "telescope", "nebula", "orbit"},
        {"recipe", "garlic", "oven", "noodles"},
        {"goalkeeper", "penalty", "stadium", "league"},
        {"guitar", "chorus", "vinyl", "drummer"},
        {"senate", "ballot", "governor", "caucus"},
    }};
    Rng rng(seed);
    std::vector<rare::RareSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t topic = rng.index(kTopics.size());
        const std::size_t bucket = rng.index(2);
        std::string text;
        const std::size_t fill = 2 + rng.index(5);
        const std::size_t key_at = rng.index(fill + 1);
        for (std::size_t w = 0; w <= fill; ++w) {
            if (!text.empty()) {
                text += ' ';
            }
            text += w == key_at ? kTopics[topic][rng.index(4)]
                                : detail::kFiller[rng.index(detail::kFiller.size())];
        }
        const auto first = static_cast<std::int64_t>(rng.index(8'000'000));
        const double gap = bucket == 0 ? 60.0 + rng.uniform() * 3000.0
                                       : 2.0 * 86400.0 + rng.uniform() * 20.0 * 86400.0;
        rare::RareSample s;
        s.text = std::move(text);
        s.t12 = features::neural_temporal_vector(first, first + static_cast<std::int64_t>(gap));
        s.label = rare_action_at(topic * 2 + bucket);
        out.push_back(std::move(s));
    }
    return out;
}

struct LabeledRows {
    std::vector<std::vector<double>> rows;
    std::vector<CoarseLabel> labels;
};

/// Isotropic Gaussian clusters, one per coarse class, centred `separation`
/// apart along distinct axes. `shares` gives the class proportions.
inline LabeledRows gaussian_blobs(std::size_t n, std::size_t dims, double separation,
                                  std::array<double, kNumCoarse> shares, std::uint64_t seed) {
    if (dims < kNumCoarse) {
        throw ConfigError("need at least one dimension per class");
    }
    Rng rng(seed);
    LabeledRows out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = rng.categorical(shares);
        std::vector<double> row(dims);
        for (std::size_t d = 0; d < dims; ++d) {
            row[d] = rng.normal() + (d == c ? separation : 0.0);
        }
        out.rows.push_back(std::move(row));
        out.labels.push_back(static_cast<CoarseLabel>(c));
    }
    return out;
}

} // namespace actpred::synthetic
