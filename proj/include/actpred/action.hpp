#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "actpred/error.hpp"

namespace actpred {

/// The twelve platform actions. Enumerator order is the global training
/// frequency rank (most frequent first) and doubles as the tie-break order
/// wherever two actions score equally.
enum class ActionLabel : std::uint8_t {
    Follow = 0,
    Like,
    Unfollow,
    Reply,
    Quote,
    Unlike,
    PostUpdate,
    Repost,
    Block,
    PostDelete,
    Unblock,
    Unrepost,
};

inline constexpr std::size_t kNumActions = 12;
inline constexpr std::size_t kNumRareActions = 10;
inline constexpr int kNumClusters = 25;

inline constexpr std::array<ActionLabel, kNumActions> kAllActions = {
    ActionLabel::Follow,     ActionLabel::Like,    ActionLabel::Unfollow,   ActionLabel::Reply,
    ActionLabel::Quote,      ActionLabel::Unlike,  ActionLabel::PostUpdate, ActionLabel::Repost,
    ActionLabel::Block,      ActionLabel::PostDelete, ActionLabel::Unblock, ActionLabel::Unrepost,
};

inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "follow", "like",   "unfollow",    "reply",   "quote",   "unlike",
    "post_update", "repost", "block", "post_delete", "unblock", "unrepost",
};

constexpr std::size_t index_of(ActionLabel a) noexcept { return static_cast<std::size_t>(a); }

constexpr std::string_view to_string(ActionLabel a) noexcept { return kActionNames[index_of(a)]; }

inline std::optional<ActionLabel> try_parse_action(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (std::size_t i = 0; i < kNumActions; ++i) {
        if (kActionNames[i] == lower) {
            return kAllActions[i];
        }
    }
    return std::nullopt;
}

inline ActionLabel parse_action(std::string_view s) {
    if (auto a = try_parse_action(s)) {
        return *a;
    }
    throw SchemaError("action", "unknown action label '" + std::string(s) + "'");
}

constexpr bool is_rare(ActionLabel a) noexcept {
    return a != ActionLabel::Follow && a != ActionLabel::Like;
}

/// Position of a rare action within the 10-way rare vocabulary.
constexpr std::size_t rare_index(ActionLabel a) noexcept { return index_of(a) - 2; }

constexpr ActionLabel rare_action_at(std::size_t i) noexcept { return kAllActions[i + 2]; }

/// Three-way target of the per-cluster boosted models.
enum class CoarseLabel : std::uint8_t { Follow = 0, Like = 1, Other = 2 };

inline constexpr std::size_t kNumCoarse = 3;
inline constexpr std::array<std::string_view, kNumCoarse> kCoarseNames = {"follow", "like", "other"};

constexpr std::size_t index_of(CoarseLabel c) noexcept { return static_cast<std::size_t>(c); }
constexpr std::string_view to_string(CoarseLabel c) noexcept { return kCoarseNames[index_of(c)]; }

constexpr CoarseLabel coarsen(ActionLabel a) noexcept {
    switch (a) {
    case ActionLabel::Follow:
        return CoarseLabel::Follow;
    case ActionLabel::Like:
        return CoarseLabel::Like;
    default:
        return CoarseLabel::Other;
    }
}

} // namespace actpred
