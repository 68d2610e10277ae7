#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "actpred/corpus.hpp"
#include "actpred/error.hpp"

namespace actpred::features {

using json = nlohmann::json;

namespace text {

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Number of Unicode scalar values in a UTF-8 string (continuation bytes skipped).
inline std::size_t scalar_count(std::string_view s) noexcept {
    std::size_t n = 0;
    for (unsigned char c : s) {
        n += (c & 0xC0) != 0x80 ? 1 : 0;
    }
    return n;
}

/// Byte length of the longest prefix holding at most `max_scalars` scalars.
inline std::size_t scalar_prefix_bytes(std::string_view s, std::size_t max_scalars) noexcept {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
            if (seen == max_scalars) {
                return i;
            }
            ++seen;
        }
    }
    return s.size();
}

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(s.substr(start, i - start));
        }
    }
    return out;
}

inline bool is_word_byte(unsigned char c) noexcept {
    return std::isalnum(c) || c == '_' || c == '\'' || c >= 0x80;
}

/// Lower-cased word tokens: maximal runs of letters, digits, '_', '\'' and
/// non-ASCII bytes.
inline std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (is_word_byte(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) noexcept {
    if (needle.empty()) {
        return 0;
    }
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos;
         pos = hay.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

inline std::string slug(std::string_view s) {
    std::string out;
    bool pending_sep = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (pending_sep && !out.empty()) {
                out.push_back('_');
            }
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_sep = true;
        }
    }
    return out;
}

} // namespace text

// ---------------------------------------------------------------------------
// Keyword database
// ---------------------------------------------------------------------------

struct KeywordGroup {
    std::string category;
    std::string subcategory;
    std::vector<std::string> keywords;
};

struct KeywordCategory {
    std::string name;
    std::string prefix;
    std::string total_column;
};

/// Topic keyword lists. File format, one record per line:
///
///     Category / Subcategory / kw1, kw2, multi word phrase
///
/// Lines starting with '#' are comments. A category's column prefix and total
/// column name default to the slug of its name and `<prefix>_total_count`; a
/// directive line `@category <Name> prefix=<p> total=<col>` overrides them.
class KeywordDatabase {
public:
    KeywordDatabase() = default;

    void add_category(KeywordCategory cat) {
        if (category_index(cat.name)) {
            throw SchemaError("category", "category '" + cat.name + "' declared twice");
        }
        categories_.push_back(std::move(cat));
    }

    void add_group(KeywordGroup g) {
        if (g.keywords.empty()) {
            throw SchemaError("keywords", "empty keyword list for " + g.category + " / " +
                                              g.subcategory);
        }
        for (const auto& existing : groups_) {
            if (existing.category == g.category && existing.subcategory == g.subcategory) {
                throw SchemaError("subcategory", "duplicate group " + g.category + " / " +
                                                     g.subcategory);
            }
        }
        if (!category_index(g.category)) {
            const auto p = text::slug(g.category);
            categories_.push_back({g.category, p, p + "_total_count"});
        }
        for (auto& k : g.keywords) {
            k = text::to_lower_ascii(k);
        }
        groups_.push_back(std::move(g));
    }

    const std::vector<KeywordGroup>& groups() const noexcept { return groups_; }
    const std::vector<KeywordCategory>& categories() const noexcept { return categories_; }
    bool empty() const noexcept { return groups_.empty(); }

    std::optional<std::size_t> category_index(std::string_view name) const {
        for (std::size_t i = 0; i < categories_.size(); ++i) {
            if (categories_[i].name == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    std::string group_column(const KeywordGroup& g) const {
        return categories_[*category_index(g.category)].prefix + "_" + text::slug(g.subcategory) +
               "_count";
    }

    /// Group columns in declaration order followed by one total per category.
    std::vector<std::string> column_names() const {
        std::vector<std::string> names;
        for (const auto& g : groups_) {
            names.push_back(group_column(g));
        }
        for (const auto& c : categories_) {
            names.push_back(c.total_column);
        }
        return names;
    }

private:
    std::vector<KeywordCategory> categories_;
    std::vector<KeywordGroup> groups_;
};

inline KeywordDatabase parse_keyword_db(std::istream& in) {
    KeywordDatabase db;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = text::trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        if (t.rfind("@category", 0) == 0) {
            std::istringstream ss(t.substr(9));
            std::vector<std::string> words;
            for (std::string w; ss >> w;) {
                words.push_back(w);
            }
            KeywordCategory cat;
            std::string name;
            for (const auto& w : words) {
                if (w.rfind("prefix=", 0) == 0) {
                    cat.prefix = w.substr(7);
                } else if (w.rfind("total=", 0) == 0) {
                    cat.total_column = w.substr(6);
                } else {
                    name += (name.empty() ? "" : " ") + w;
                }
            }
            if (name.empty()) {
                throw ParseError(line_no, "@category directive without a name");
            }
            cat.name = name;
            if (cat.prefix.empty()) {
                cat.prefix = text::slug(name);
            }
            if (cat.total_column.empty()) {
                cat.total_column = cat.prefix + "_total_count";
            }
            db.add_category(std::move(cat));
            continue;
        }
        const auto a = t.find('/');
        const auto b = a == std::string::npos ? a : t.find('/', a + 1);
        if (b == std::string::npos) {
            throw ParseError(line_no, "expected 'category / subcategory / keywords'");
        }
        KeywordGroup g;
        g.category = text::trim(std::string_view(t).substr(0, a));
        g.subcategory = text::trim(std::string_view(t).substr(a + 1, b - a - 1));
        std::stringstream kws(t.substr(b + 1));
        for (std::string kw; std::getline(kws, kw, ',');) {
            if (auto k = text::trim(kw); !k.empty()) {
                g.keywords.push_back(std::move(k));
            }
        }
        if (g.category.empty() || g.subcategory.empty()) {
            throw SchemaError("category", "line " + std::to_string(line_no) +
                                              ": empty category or subcategory");
        }
        db.add_group(std::move(g));
    }
    return db;
}

inline KeywordDatabase load_keyword_db(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open keyword database '" + path + "'");
    }
    return parse_keyword_db(in);
}

struct KeywordCounts {
    std::vector<double> group_counts;    ///< parallel to db.groups()
    std::vector<double> category_totals; ///< parallel to db.categories()
};

/// Total keyword occurrences per group. Single words match whole tokens;
/// phrases (anything with a space or punctuation) match as case-insensitive
/// substrings.
inline KeywordCounts keyword_counts(std::string_view message, const KeywordDatabase& db) {
    KeywordCounts out;
    out.group_counts.assign(db.groups().size(), 0.0);
    out.category_totals.assign(db.categories().size(), 0.0);
    if (message.empty() || db.empty()) {
        return out;
    }
    std::unordered_map<std::string, std::size_t> tokens;
    for (auto& tok : text::word_tokens(message)) {
        ++tokens[std::move(tok)];
    }
    const std::string lower = text::to_lower_ascii(message);
    for (std::size_t g = 0; g < db.groups().size(); ++g) {
        const auto& group = db.groups()[g];
        std::size_t n = 0;
        for (const auto& kw : group.keywords) {
            const bool phrase = std::any_of(kw.begin(), kw.end(), [](char c) {
                return !text::is_word_byte(static_cast<unsigned char>(c));
            });
            if (phrase) {
                n += text::count_occurrences(lower, kw);
            } else if (auto it = tokens.find(kw); it != tokens.end()) {
                n += it->second;
            }
        }
        out.group_counts[g] = static_cast<double>(n);
        out.category_totals[*db.category_index(group.category)] += static_cast<double>(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Textual features
// ---------------------------------------------------------------------------

struct TextFeatures {
    std::int64_t char_count = 0;
    std::int64_t word_count = 0;
    std::int64_t sentence_count = 0;
    std::int64_t question_count = 0;
    std::int64_t exclamation_count = 0;
    std::int64_t hashtag_count = 0;
    std::int64_t digit_count = 0;
    double uppercase_ratio = 0.0;
    double avg_word_length = 0.0;
    std::int64_t tag_username_count = 0;
    std::int64_t tag_url_count = 0;

    bool operator==(const TextFeatures&) const = default;
};

inline constexpr std::array<std::string_view, 11> kTextFeatureNames = {
    "char_count",        "word_count",      "sentence_count",     "question_count",
    "exclamation_count", "hashtag_count",   "digit_count",        "uppercase_ratio",
    "avg_word_length",   "tag_username_count", "tag_url_count",
};

inline TextFeatures text_features(std::string_view s) {
    TextFeatures f;
    if (s.empty()) {
        return f;
    }
    f.char_count = static_cast<std::int64_t>(text::scalar_count(s));
    const auto words = text::split_whitespace(s);
    f.word_count = static_cast<std::int64_t>(words.size());
    std::size_t word_scalars = 0;
    for (auto w : words) {
        word_scalars += text::scalar_count(w);
    }
    if (!words.empty()) {
        f.avg_word_length = static_cast<double>(word_scalars) / static_cast<double>(words.size());
    }
    std::size_t letters = 0;
    std::size_t upper = 0;
    bool in_terminal_run = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<unsigned char>(s[i]);
        const bool terminal = c == '.' || c == '!' || c == '?';
        if (terminal && !in_terminal_run) {
            ++f.sentence_count;
        }
        in_terminal_run = terminal;
        f.question_count += c == '?';
        f.exclamation_count += c == '!';
        f.digit_count += std::isdigit(c) ? 1 : 0;
        if (std::isalpha(c)) {
            ++letters;
            upper += std::isupper(c) ? 1 : 0;
        }
        if (c == '#' && i + 1 < s.size()) {
            const auto next = static_cast<unsigned char>(s[i + 1]);
            f.hashtag_count += (std::isalnum(next) || next == '_' || next >= 0x80) ? 1 : 0;
        }
    }
    if (f.sentence_count == 0) {
        f.sentence_count = 1;
    }
    if (letters > 0) {
        f.uppercase_ratio = static_cast<double>(upper) / static_cast<double>(letters);
    }
    f.tag_username_count = static_cast<std::int64_t>(text::count_occurrences(s, "<USERNAME>"));
    f.tag_url_count = static_cast<std::int64_t>(text::count_occurrences(s, "<URL>"));
    return f;
}

inline std::array<double, 11> values(const TextFeatures& f) {
    return {static_cast<double>(f.char_count),        static_cast<double>(f.word_count),
            static_cast<double>(f.sentence_count),    static_cast<double>(f.question_count),
            static_cast<double>(f.exclamation_count), static_cast<double>(f.hashtag_count),
            static_cast<double>(f.digit_count),       f.uppercase_ratio,
            f.avg_word_length,                        static_cast<double>(f.tag_username_count),
            static_cast<double>(f.tag_url_count)};
}

// ---------------------------------------------------------------------------
// Temporal features
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kMinute = 60;
inline constexpr std::int64_t kHour = 3600;
inline constexpr std::int64_t kDay = 86'400;
inline constexpr std::int64_t kWeek = 7 * kDay;
inline constexpr std::int64_t kMonth = 30 * kDay;
inline constexpr std::int64_t kQuarter = 90 * kDay;

struct TemporalFeatures {
    std::int64_t first_relative_integer_time = 0;
    std::int64_t second_relative_integer_time = 0;
    std::int64_t time_diff = 0;
    bool is_immediate_reply = false;
    bool is_fast_reply = false;
    bool is_same_day = false;
    bool is_within_week = false;
    bool is_within_month = false;
    bool is_within_quarter = false;
    bool is_long_gap = false;
    bool is_same_user = false;
    /// Set when the responding event carries no timestamp (single-message queries).
    bool second_time_missing = false;

    bool operator==(const TemporalFeatures&) const = default;
};

inline constexpr std::array<std::string_view, 12> kTemporalFeatureNames = {
    "first_relative_integer_time", "second_relative_integer_time", "time_diff",
    "is_immediate_reply",          "is_fast_reply",                "is_same_day",
    "is_within_week",              "is_within_month",              "is_within_quarter",
    "is_long_gap",                 "is_same_user",                 "second_time_missing",
};

inline TemporalFeatures temporal_features(std::int64_t first_time, std::int64_t second_time,
                                          bool same_user) {
    if (second_time < first_time) {
        throw ValidationError("second message time precedes the first");
    }
    TemporalFeatures f;
    f.first_relative_integer_time = first_time;
    f.second_relative_integer_time = second_time;
    const auto d = second_time - first_time;
    f.time_diff = d;
    f.is_immediate_reply = d < kMinute;
    f.is_fast_reply = d < kHour;
    f.is_same_day = d < kDay;
    f.is_within_week = d < kWeek;
    f.is_within_month = d < kMonth;
    f.is_within_quarter = d < kQuarter;
    f.is_long_gap = d >= kQuarter;
    f.is_same_user = same_user;
    return f;
}

inline std::array<double, 12> values(const TemporalFeatures& f) {
    return {static_cast<double>(f.first_relative_integer_time),
            static_cast<double>(f.second_relative_integer_time),
            static_cast<double>(f.time_diff),
            f.is_immediate_reply ? 1.0 : 0.0,
            f.is_fast_reply ? 1.0 : 0.0,
            f.is_same_day ? 1.0 : 0.0,
            f.is_within_week ? 1.0 : 0.0,
            f.is_within_month ? 1.0 : 0.0,
            f.is_within_quarter ? 1.0 : 0.0,
            f.is_long_gap ? 1.0 : 0.0,
            f.is_same_user ? 1.0 : 0.0,
            f.second_time_missing ? 1.0 : 0.0};
}

/// Inputs of the rare-action temporal branch, before standardization:
///
///     0 first time          1 second time         2 log1p(time_diff)
///     3 sin tod(second)     4 cos tod(second)     5 sin tod(first)
///     6 cos tod(first)      7 sin dow(second)     8 cos dow(second)
///     9 is_immediate_reply 10 is_same_day        11 is_long_gap
///
/// tod maps t mod 86400 onto [0, 2pi); dow maps (t / 86400) mod 7 onto [0, 2pi).
using NeuralTemporalVector = std::array<double, 12>;

inline NeuralTemporalVector neural_temporal_vector(std::int64_t first_time,
                                                   std::int64_t second_time) {
    const auto f = temporal_features(first_time, second_time, false);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    auto tod = [&](std::int64_t t) {
        return two_pi * static_cast<double>(t % kDay) / static_cast<double>(kDay);
    };
    const double dow = two_pi * static_cast<double>(second_time % kWeek) / static_cast<double>(kWeek);
    return {static_cast<double>(first_time),
            static_cast<double>(second_time),
            std::log1p(static_cast<double>(f.time_diff)),
            std::sin(tod(second_time)),
            std::cos(tod(second_time)),
            std::sin(tod(first_time)),
            std::cos(tod(first_time)),
            std::sin(dow),
            std::cos(dow),
            f.is_immediate_reply ? 1.0 : 0.0,
            f.is_same_day ? 1.0 : 0.0,
            f.is_long_gap ? 1.0 : 0.0};
}

// ---------------------------------------------------------------------------
// Assembled rows
// ---------------------------------------------------------------------------

/// Ordered column names of an assembled feature row.
class FeatureSchema {
public:
    FeatureSchema() = default;
    explicit FeatureSchema(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (!index_.emplace(names_[i], i).second) {
                throw SchemaError(names_[i], "duplicate feature column '" + names_[i] + "'");
            }
        }
    }

    /// Text columns, then keyword group and category-total columns, then temporal columns.
    static FeatureSchema for_database(const KeywordDatabase& db) {
        std::vector<std::string> names;
        for (auto n : kTextFeatureNames) {
            names.emplace_back(n);
        }
        for (auto& n : db.column_names()) {
            names.push_back(std::move(n));
        }
        for (auto n : kTemporalFeatureNames) {
            names.emplace_back(n);
        }
        return FeatureSchema(std::move(names));
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    std::optional<std::size_t> index(std::string_view name) const {
        auto it = index_.find(std::string(name));
        return it == index_.end() ? std::nullopt : std::optional(it->second);
    }

    json to_json() const { return {{"version", 1}, {"columns", names_}}; }

    static FeatureSchema from_json(const json& j) {
        if (j.value("version", 0) != 1 || !j.contains("columns")) {
            throw SchemaError("columns", "unsupported feature schema manifest");
        }
        return FeatureSchema(j.at("columns").get<std::vector<std::string>>());
    }

    bool operator==(const FeatureSchema& o) const { return names_ == o.names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct FeatureVector {
    std::vector<double> values;

    double at(const FeatureSchema& schema, std::string_view name) const {
        auto i = schema.index(name);
        if (!i) {
            throw ContractError("no feature column '" + std::string(name) + "'");
        }
        return values[*i];
    }

    bool operator==(const FeatureVector&) const = default;
};

/// Row for a query whose responding event may lack a timestamp.
inline FeatureVector assemble_parts(const corpus::Message& first,
                                    std::optional<std::int64_t> second_time,
                                    std::optional<std::string_view> second_user,
                                    const KeywordDatabase& db) {
    FeatureVector fv;
    const std::string_view body = first.text ? std::string_view(*first.text) : std::string_view();
    for (double v : values(text_features(body))) {
        fv.values.push_back(v);
    }
    const auto kc = keyword_counts(body, db);
    fv.values.insert(fv.values.end(), kc.group_counts.begin(), kc.group_counts.end());
    fv.values.insert(fv.values.end(), kc.category_totals.begin(), kc.category_totals.end());
    auto tf = temporal_features(first.relative_time, second_time.value_or(first.relative_time),
                                second_user && *second_user == first.user_id);
    tf.second_time_missing = !second_time.has_value();
    for (double v : values(tf)) {
        fv.values.push_back(v);
    }
    return fv;
}

inline FeatureVector assemble(const corpus::ConversationThread& thread, const KeywordDatabase& db) {
    if (thread.length() != 2) {
        throw ContractError("assemble expects a 2-message thread, got " +
                            std::to_string(thread.length()));
    }
    const auto& second = thread.messages[1];
    return assemble_parts(thread.first(), second.relative_time, second.user_id, db);
}

} // namespace actpred::features
