#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "actpred/action.hpp"
#include "actpred/binary_io.hpp"
#include "actpred/corpus.hpp"
#include "actpred/error.hpp"
#include "actpred/metrics.hpp"
#include "actpred/parallel.hpp"

namespace actpred::gbdt {

using json = nlohmann::json;
using Proba = std::array<double, kNumCoarse>;

/// Dense row-major feature matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    void push_row(std::span<const double> values) {
        if (rows == 0 && cols == 0) {
            cols = values.size();
        }
        if (values.size() != cols) {
            throw ContractError("row width " + std::to_string(values.size()) + " != " +
                                std::to_string(cols));
        }
        data.insert(data.end(), values.begin(), values.end());
        ++rows;
    }
};

// ---------------------------------------------------------------------------
// Class weights
// ---------------------------------------------------------------------------

struct ClassWeights {
    std::array<double, kNumCoarse> w{1.0, 1.0, 1.0};

    double operator[](CoarseLabel c) const noexcept { return w[index_of(c)]; }
    bool operator==(const ClassWeights&) const = default;
};

inline std::array<std::uint64_t, kNumCoarse> class_counts(std::span<const CoarseLabel> labels) {
    std::array<std::uint64_t, kNumCoarse> counts{};
    for (auto l : labels) {
        ++counts[index_of(l)];
    }
    return counts;
}

/// Inverse-frequency weights over the classes that occur, normalised to mean 1
/// across them; absent classes get weight 0.
inline ClassWeights present_class_weights(std::span<const CoarseLabel> labels) {
    const auto counts = class_counts(labels);
    const auto present = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
    ClassWeights out;
    for (std::size_t c = 0; c < kNumCoarse; ++c) {
        out.w[c] = counts[c] == 0 ? 0.0
                                  : static_cast<double>(labels.size()) /
                                        (static_cast<double>(present) * static_cast<double>(counts[c]));
    }
    return out;
}

/// w(c) = N / (3 * count(c)). Every class must be present.
inline ClassWeights compute_class_weights(std::span<const CoarseLabel> labels) {
    const auto counts = class_counts(labels);
    for (std::size_t c = 0; c < kNumCoarse; ++c) {
        if (counts[c] == 0) {
            throw TrainingError("degenerate cluster: class '" + std::string(kCoarseNames[c]) +
                                "' has no samples");
        }
    }
    return present_class_weights(labels);
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

inline Proba softmax(const Proba& z) noexcept {
    const double m = std::max({z[0], z[1], z[2]});
    Proba p;
    double s = 0.0;
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        p[k] = std::exp(z[k] - m);
        s += p[k];
    }
    for (auto& v : p) {
        v /= s;
    }
    return p;
}

/// -w * log softmax(z)[label]
inline double weighted_log_loss(const Proba& z, std::size_t label, double weight) noexcept {
    const double m = std::max({z[0], z[1], z[2]});
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - m);
    }
    return weight * (m + std::log(s) - z[label]);
}

struct GradHess {
    Proba grad{};
    Proba hess{};
};

/// First and diagonal second derivatives of weighted_log_loss in the margins.
inline GradHess softmax_grad_hess(const Proba& z, std::size_t label, double weight) noexcept {
    const auto p = softmax(z);
    GradHess gh;
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        gh.grad[k] = weight * (p[k] - (k == label ? 1.0 : 0.0));
        gh.hess[k] = weight * p[k] * (1.0 - p[k]);
    }
    return gh;
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

struct Hyperparams {
    int n_estimators = 100;
    double learning_rate = 0.1;
    int max_depth = -1; ///< <= 0 means unbounded
    int max_leaves = 31;
    int min_samples_leaf = 20;
    int histogram_bins = 255;
    double lambda_l2 = 1.0;
    double min_child_hessian = 1e-3;

    void validate() const {
        if (n_estimators < 1 || learning_rate <= 0.0 || max_leaves < 2 || min_samples_leaf < 1 ||
            histogram_bins < 2 || histogram_bins > 255 || lambda_l2 < 0.0) {
            throw ConfigError("invalid boosting hyperparameters");
        }
    }

    json to_json() const {
        return {{"n_estimators", n_estimators},   {"learning_rate", learning_rate},
                {"max_depth", max_depth},         {"max_leaves", max_leaves},
                {"min_samples_leaf", min_samples_leaf}, {"histogram_bins", histogram_bins},
                {"lambda_l2", lambda_l2}};
    }

    bool operator==(const Hyperparams&) const = default;
};

struct TrainConfig {
    Hyperparams base;
    /// Candidate settings for the cross-validated search; empty means {base}.
    std::vector<Hyperparams> grid;
    int k_folds = 5;
    std::uint64_t seed = 42;
    bool use_class_weights = true;
    int threads = 1;

    /// n_estimators x learning_rate x max_depth x max_leaves =
    /// {100,300} x {0.05,0.1} x {-1,8} x {31,63}.
    static std::vector<Hyperparams> default_grid(const Hyperparams& base = {}) {
        std::vector<Hyperparams> g;
        for (int n : {100, 300}) {
            for (double lr : {0.05, 0.1}) {
                for (int depth : {-1, 8}) {
                    for (int leaves : {31, 63}) {
                        Hyperparams h = base;
                        h.n_estimators = n;
                        h.learning_rate = lr;
                        h.max_depth = depth;
                        h.max_leaves = leaves;
                        g.push_back(h);
                    }
                }
            }
        }
        return g;
    }

    std::vector<Hyperparams> candidates() const {
        return grid.empty() ? std::vector<Hyperparams>{base} : grid;
    }
};

// ---------------------------------------------------------------------------
// Histogram binning
// ---------------------------------------------------------------------------

/// Per-feature bin boundaries. A value x falls in the first bin b whose upper
/// bound satisfies x <= bound[b]; the last bin is open-ended.
class BinMapper {
public:
    static BinMapper fit(const Matrix& x, std::span<const std::size_t> rows, int max_bins) {
        BinMapper m;
        m.bounds_.resize(x.cols);
        std::vector<double> col(rows.size());
        for (std::size_t f = 0; f < x.cols; ++f) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                col[i] = x(rows[i], f);
            }
            std::sort(col.begin(), col.end());
            // distinct values with multiplicities
            std::vector<std::pair<double, std::size_t>> distinct;
            for (double v : col) {
                if (distinct.empty() || distinct.back().first != v) {
                    distinct.emplace_back(v, 1);
                } else {
                    ++distinct.back().second;
                }
            }
            auto& b = m.bounds_[f];
            if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
                for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
                    b.push_back(midpoint(distinct[i].first, distinct[i + 1].first));
                }
                continue;
            }
            const double per_bin = static_cast<double>(col.size()) / max_bins;
            std::size_t acc = 0;
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
                acc += distinct[i].second;
                const auto used = static_cast<double>(b.size() + 1);
                if (static_cast<double>(acc) >= used * per_bin &&
                    b.size() + 1 < static_cast<std::size_t>(max_bins)) {
                    b.push_back(midpoint(distinct[i].first, distinct[i + 1].first));
                }
            }
        }
        return m;
    }

    std::size_t num_features() const noexcept { return bounds_.size(); }
    std::size_t num_bins(std::size_t f) const noexcept { return bounds_[f].size() + 1; }

    std::uint8_t bin(std::size_t f, double x) const noexcept {
        const auto& b = bounds_[f];
        return static_cast<std::uint8_t>(std::lower_bound(b.begin(), b.end(), x) - b.begin());
    }

    double upper_bound(std::size_t f, std::size_t bin) const { return bounds_[f].at(bin); }

private:
    static double midpoint(double a, double b) noexcept {
        const double m = a + (b - a) / 2.0;
        return m < b ? m : a;
    }

    std::vector<std::vector<double>> bounds_;
};

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

struct TreeNode {
    std::int32_t feature = -1; ///< -1 marks a leaf
    double threshold = 0.0;    ///< go left when x <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Regression tree on the margin of one class. An empty tree contributes 0.
class Tree {
public:
    Tree() = default;
    explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

    bool empty() const noexcept { return nodes_.empty(); }
    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

    double predict(std::span<const double> row) const noexcept {
        if (nodes_.empty()) {
            return 0.0;
        }
        std::int32_t i = 0;
        while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
            const auto& n = nodes_[static_cast<std::size_t>(i)];
            i = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes_[static_cast<std::size_t>(i)].value;
    }

    std::size_t num_leaves() const noexcept {
        return static_cast<std::size_t>(
            std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
    }

    bool operator==(const Tree&) const = default;

private:
    std::vector<TreeNode> nodes_;
};

/// Margin offset given to classes that never occur in the training data.
inline constexpr double kAbsentMargin = -30.0;

/// One-vs-rest softmax booster over {FOLLOW, LIKE, OTHER}.
class Ensemble {
public:
    int cluster = -1;
    std::vector<std::string> feature_names;
    Proba base_score{0.0, 0.0, 0.0};
    std::array<bool, kNumCoarse> present{true, true, true};
    ClassWeights class_weights;
    std::vector<std::array<Tree, kNumCoarse>> rounds;

    std::size_t num_features() const noexcept { return feature_names.size(); }

    Proba margins(std::span<const double> row) const {
        if (row.size() != num_features()) {
            throw ContractError("feature row has " + std::to_string(row.size()) +
                                " columns, model expects " + std::to_string(num_features()));
        }
        Proba z = base_score;
        for (const auto& r : rounds) {
            for (std::size_t k = 0; k < kNumCoarse; ++k) {
                z[k] += r[k].predict(row);
            }
        }
        return z;
    }

    bool operator==(const Ensemble&) const = default;
};

inline Proba predict_proba(const Ensemble& e, std::span<const double> row) {
    return softmax(e.margins(row));
}

namespace detail {

struct HistBin {
    double g = 0.0;
    double h = 0.0;
    std::uint32_t n = 0;
};

struct BinnedData {
    std::size_t n = 0;
    std::size_t features = 0;
    std::vector<std::uint8_t> bins; ///< column-major, features x n
    std::vector<std::size_t> offsets; ///< histogram offset per feature, size features+1
    const BinMapper* mapper = nullptr;

    std::uint8_t at(std::size_t f, std::size_t r) const noexcept { return bins[f * n + r]; }
};

inline BinnedData bin_rows(const Matrix& x, std::span<const std::size_t> rows, const BinMapper& m) {
    BinnedData d;
    d.n = rows.size();
    d.features = x.cols;
    d.mapper = &m;
    d.bins.resize(d.n * d.features);
    d.offsets.resize(d.features + 1, 0);
    for (std::size_t f = 0; f < d.features; ++f) {
        d.offsets[f + 1] = d.offsets[f] + m.num_bins(f);
        for (std::size_t i = 0; i < d.n; ++i) {
            d.bins[f * d.n + i] = m.bin(f, x(rows[i], f));
        }
    }
    return d;
}

struct Split {
    double gain = 0.0;
    std::int32_t feature = -1;
    std::int32_t bin = -1;

    bool valid() const noexcept { return feature >= 0; }
};

struct Leaf {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    int depth = 0;
    std::int32_t node = 0;
    double g = 0.0;
    double h = 0.0;
    std::vector<HistBin> hist;
    Split best;
};

class TreeGrower {
public:
    TreeGrower(const BinnedData& data, const Hyperparams& hp) : d_(data), hp_(hp), order_(data.n) {}

    /// Grows one leaf-wise tree; `contribution[i]` receives the leaf value of row i.
    Tree grow(std::span<const double> g, std::span<const double> h, std::span<double> contribution) {
        std::iota(order_.begin(), order_.end(), 0U);
        std::vector<TreeNode> nodes(1);
        std::vector<Leaf> leaves;
        Leaf root;
        root.end = static_cast<std::uint32_t>(d_.n);
        root.hist.assign(d_.offsets.back(), {});
        build_hist(root, g, h);
        for (std::size_t i = 0; i < d_.n; ++i) {
            root.g += g[i];
            root.h += h[i];
        }
        root.best = find_split(root);
        leaves.push_back(std::move(root));

        while (static_cast<int>(leaves.size()) < hp_.max_leaves) {
            std::size_t pick = leaves.size();
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                if (leaves[i].best.valid() &&
                    (pick == leaves.size() || leaves[i].best.gain > leaves[pick].best.gain)) {
                    pick = i;
                }
            }
            if (pick == leaves.size()) {
                break;
            }
            Leaf parent = std::move(leaves[pick]);
            auto [left, right] = split_leaf(parent, nodes, g, h);
            leaves[pick] = std::move(left);
            leaves.push_back(std::move(right));
        }

        std::fill(contribution.begin(), contribution.end(), 0.0);
        if (nodes.size() == 1) {
            return Tree{};
        }
        for (const auto& leaf : leaves) {
            const double v = -hp_.learning_rate * leaf.g / (leaf.h + hp_.lambda_l2);
            nodes[static_cast<std::size_t>(leaf.node)].value = v;
            for (auto i = leaf.begin; i < leaf.end; ++i) {
                contribution[order_[i]] = v;
            }
        }
        return Tree(std::move(nodes));
    }

private:
    void build_hist(Leaf& leaf, std::span<const double> g, std::span<const double> h) const {
        for (std::size_t f = 0; f < d_.features; ++f) {
            HistBin* hist = leaf.hist.data() + d_.offsets[f];
            const std::uint8_t* col = d_.bins.data() + f * d_.n;
            for (auto i = leaf.begin; i < leaf.end; ++i) {
                const auto r = order_[i];
                auto& b = hist[col[r]];
                b.g += g[r];
                b.h += h[r];
                ++b.n;
            }
        }
    }

    double score(double g, double h) const noexcept { return g * g / (h + hp_.lambda_l2); }

    Split find_split(const Leaf& leaf) const {
        Split best;
        if (hp_.max_depth > 0 && leaf.depth >= hp_.max_depth) {
            return best;
        }
        const auto count = leaf.end - leaf.begin;
        if (count < 2U * static_cast<std::uint32_t>(hp_.min_samples_leaf)) {
            return best;
        }
        const double parent = score(leaf.g, leaf.h);
        constexpr double kMinGain = 1e-12;
        for (std::size_t f = 0; f < d_.features; ++f) {
            const HistBin* hist = leaf.hist.data() + d_.offsets[f];
            const std::size_t nb = d_.offsets[f + 1] - d_.offsets[f];
            double gl = 0.0;
            double hl = 0.0;
            std::uint32_t nl = 0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
                gl += hist[b].g;
                hl += hist[b].h;
                nl += hist[b].n;
                const std::uint32_t nr = count - nl;
                if (nl < static_cast<std::uint32_t>(hp_.min_samples_leaf)) {
                    continue;
                }
                if (nr < static_cast<std::uint32_t>(hp_.min_samples_leaf)) {
                    break;
                }
                const double hr = leaf.h - hl;
                if (hl < hp_.min_child_hessian || hr < hp_.min_child_hessian) {
                    continue;
                }
                const double gain = score(gl, hl) + score(leaf.g - gl, hr) - parent;
                if (gain > kMinGain && gain > best.gain) {
                    best = {gain, static_cast<std::int32_t>(f), static_cast<std::int32_t>(b)};
                }
            }
        }
        return best;
    }

    std::pair<Leaf, Leaf> split_leaf(Leaf& parent, std::vector<TreeNode>& nodes,
                                     std::span<const double> g, std::span<const double> h) {
        const auto f = static_cast<std::size_t>(parent.best.feature);
        const auto bin = static_cast<std::uint8_t>(parent.best.bin);
        const std::uint8_t* col = d_.bins.data() + f * d_.n;
        auto first = order_.begin() + parent.begin;
        auto last = order_.begin() + parent.end;
        auto mid = std::stable_partition(first, last, [&](std::uint32_t r) { return col[r] <= bin; });
        const auto split_at = static_cast<std::uint32_t>(mid - order_.begin());

        const auto left_node = static_cast<std::int32_t>(nodes.size());
        nodes.emplace_back();
        nodes.emplace_back();
        auto& pn = nodes[static_cast<std::size_t>(parent.node)];
        pn.feature = parent.best.feature;
        pn.threshold = d_.mapper->upper_bound(f, bin);
        pn.left = left_node;
        pn.right = left_node + 1;

        Leaf left;
        left.begin = parent.begin;
        left.end = split_at;
        left.depth = parent.depth + 1;
        left.node = left_node;
        Leaf right;
        right.begin = split_at;
        right.end = parent.end;
        right.depth = parent.depth + 1;
        right.node = left_node + 1;

        // Build the smaller child directly; the sibling is parent minus child.
        Leaf& small = (left.end - left.begin) <= (right.end - right.begin) ? left : right;
        Leaf& large = &small == &left ? right : left;
        small.hist.assign(d_.offsets.back(), {});
        build_hist(small, g, h);
        large.hist = std::move(parent.hist);
        for (std::size_t i = 0; i < large.hist.size(); ++i) {
            large.hist[i].g -= small.hist[i].g;
            large.hist[i].h -= small.hist[i].h;
            large.hist[i].n -= small.hist[i].n;
        }
        for (auto i = small.begin; i < small.end; ++i) {
            small.g += g[order_[i]];
            small.h += h[order_[i]];
        }
        large.g = parent.g - small.g;
        large.h = parent.h - small.h;
        left.best = find_split(left);
        right.best = find_split(right);
        return {std::move(left), std::move(right)};
    }

    const BinnedData& d_;
    const Hyperparams& hp_;
    std::vector<std::uint32_t> order_;
};

} // namespace detail

/// Fits one booster on `rows` of `x`. `labels` and `sample_weights` are
/// parallel to `rows`. When `loss_trace` is given it receives the weighted
/// mean training log-loss before the first round and after every round.
inline Ensemble fit_ensemble(const Matrix& x, std::span<const std::size_t> rows,
                             std::span<const CoarseLabel> labels,
                             std::span<const double> sample_weights, const Hyperparams& hp,
                             std::vector<std::string> feature_names,
                             std::vector<double>* loss_trace = nullptr) {
    hp.validate();
    if (rows.empty()) {
        throw TrainingError("no training rows");
    }
    if (feature_names.size() != x.cols) {
        throw ContractError("feature name count does not match matrix width");
    }
    Ensemble e;
    e.feature_names = std::move(feature_names);
    const auto counts = class_counts(labels);
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        e.present[k] = counts[k] > 0;
        e.base_score[k] = e.present[k] ? std::log(static_cast<double>(counts[k]) /
                                                  static_cast<double>(labels.size()))
                                       : kAbsentMargin;
    }
    const BinMapper mapper = BinMapper::fit(x, rows, hp.histogram_bins);
    const auto data = detail::bin_rows(x, rows, mapper);
    const std::size_t n = rows.size();
    std::vector<Proba> z(n, e.base_score);
    std::vector<std::vector<double>> g(kNumCoarse, std::vector<double>(n));
    std::vector<std::vector<double>> h(kNumCoarse, std::vector<double>(n));
    std::vector<std::vector<double>> contrib(kNumCoarse, std::vector<double>(n));
    auto mean_loss = [&] {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num += weighted_log_loss(z[i], index_of(labels[i]), sample_weights[i]);
            den += sample_weights[i];
        }
        return den > 0.0 ? num / den : 0.0;
    };
    if (loss_trace != nullptr) {
        loss_trace->push_back(mean_loss());
    }
    detail::TreeGrower grower(data, hp);
    for (int round = 0; round < hp.n_estimators; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto gh = softmax_grad_hess(z[i], index_of(labels[i]), sample_weights[i]);
            for (std::size_t k = 0; k < kNumCoarse; ++k) {
                g[k][i] = gh.grad[k];
                h[k][i] = gh.hess[k];
            }
        }
        std::array<Tree, kNumCoarse> trees;
        bool any = false;
        for (std::size_t k = 0; k < kNumCoarse; ++k) {
            if (!e.present[k]) {
                std::fill(contrib[k].begin(), contrib[k].end(), 0.0);
                continue;
            }
            trees[k] = grower.grow(g[k], h[k], contrib[k]);
            any = any || !trees[k].empty();
        }
        if (!any) {
            break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < kNumCoarse; ++k) {
                z[i][k] += contrib[k][i];
            }
        }
        e.rounds.push_back(std::move(trees));
        if (loss_trace != nullptr) {
            loss_trace->push_back(mean_loss());
        }
    }
    e.class_weights = present_class_weights(labels);
    return e;
}

// ---------------------------------------------------------------------------
// Thresholds and decisions
// ---------------------------------------------------------------------------

struct ThresholdSet {
    Proba threshold{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    /// Validation F1 reached at each threshold.
    Proba f1{0.0, 0.0, 0.0};
    /// Classes with no positives in validation keep the 1/3 default.
    std::array<bool, kNumCoarse> defaulted{false, false, false};

    json to_json() const {
        json j = json::object();
        for (std::size_t k = 0; k < kNumCoarse; ++k) {
            j[std::string(kCoarseNames[k])] = {
                {"threshold", threshold[k]}, {"f1", f1[k]}, {"defaulted", defaulted[k]}};
        }
        return j;
    }

    static ThresholdSet from_json(const json& j) {
        ThresholdSet t;
        for (std::size_t k = 0; k < kNumCoarse; ++k) {
            const auto& c = j.at(std::string(kCoarseNames[k]));
            t.threshold[k] = c.at("threshold").get<double>();
            t.f1[k] = c.value("f1", 0.0);
            t.defaulted[k] = c.value("defaulted", false);
        }
        return t;
    }

    bool operator==(const ThresholdSet&) const = default;
};

struct ThresholdChoice {
    double threshold = 1.0 / 3.0;
    double f1 = 0.0;
    bool defaulted = true;
};

/// Best F1 cut for one-vs-rest scores, predicting positive when s >= t.
/// Candidates are the lowest score (everything positive) and the midpoints
/// between consecutive distinct scores; ties go to the lower threshold.
inline ThresholdChoice best_threshold(std::span<const double> scores, std::span<const char> positive) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    std::uint64_t pos_total = 0;
    for (char p : positive) {
        pos_total += p != 0 ? 1 : 0;
    }
    ThresholdChoice best;
    if (pos_total == 0 || scores.empty()) {
        return best;
    }
    best.defaulted = false;
    // Walk ascending; before position i every row at or above scores[idx[i]] is positive.
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    bool first = true;
    for (std::size_t i = 0; i < idx.size();) {
        const double s = scores[idx[i]];
        const std::uint64_t tp = pos_total - fn;
        const std::uint64_t fp = (scores.size() - pos_total) - tn;
        const double f1 = eval::f1_from_counts(tp, fp, fn);
        const double t = first ? s : (scores[idx[i - 1]] + (s - scores[idx[i - 1]]) / 2.0);
        if (first || f1 > best.f1) {
            best.f1 = f1;
            best.threshold = t;
        }
        first = false;
        while (i < idx.size() && scores[idx[i]] == s) {
            if (positive[idx[i]] != 0) {
                ++fn;
            } else {
                ++tn;
            }
            ++i;
        }
    }
    return best;
}

inline ThresholdSet optimize_thresholds(std::span<const Proba> probas,
                                        std::span<const CoarseLabel> labels) {
    if (probas.size() != labels.size()) {
        throw ContractError("probabilities and labels differ in length");
    }
    ThresholdSet out;
    std::vector<double> scores(probas.size());
    std::vector<char> positive(probas.size());
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        for (std::size_t i = 0; i < probas.size(); ++i) {
            scores[i] = probas[i][k];
            positive[i] = index_of(labels[i]) == k ? 1 : 0;
        }
        const auto c = best_threshold(scores, positive);
        out.threshold[k] = c.threshold;
        out.f1[k] = c.f1;
        out.defaulted[k] = c.defaulted;
    }
    return out;
}

/// OTHER wins when its probability clears its threshold; otherwise the larger
/// of P(c)/t(c) over FOLLOW and LIKE. Classes absent from training are never
/// returned.
inline CoarseLabel classify_proba(const Proba& p, const ThresholdSet& t,
                                  const std::array<bool, kNumCoarse>& present = {true, true, true}) {
    constexpr auto kOther = index_of(CoarseLabel::Other);
    const bool common_present = present[0] || present[1];
    if (present[kOther] && (p[kOther] >= t.threshold[kOther] || !common_present)) {
        return CoarseLabel::Other;
    }
    if (!present[0]) {
        return CoarseLabel::Like;
    }
    if (!present[1]) {
        return CoarseLabel::Follow;
    }
    return p[1] / t.threshold[1] > p[0] / t.threshold[0] ? CoarseLabel::Like : CoarseLabel::Follow;
}

inline CoarseLabel classify(const Ensemble& e, const ThresholdSet& t, std::span<const double> row) {
    return classify_proba(predict_proba(e, row), t, e.present);
}

inline CoarseLabel argmax_label(const Proba& p, const std::array<bool, kNumCoarse>& present) {
    std::size_t best = kNumCoarse;
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        if (present[k] && (best == kNumCoarse || p[k] > p[best])) {
            best = k;
        }
    }
    return static_cast<CoarseLabel>(best == kNumCoarse ? 0 : best);
}

/// Split counts per feature over every tree, most used first; features that
/// are never split on are omitted.
inline std::vector<std::pair<std::string, std::uint64_t>> feature_importance(const Ensemble& e) {
    std::vector<std::uint64_t> counts(e.num_features(), 0);
    for (const auto& round : e.rounds) {
        for (const auto& tree : round) {
            for (const auto& node : tree.nodes()) {
                if (!node.is_leaf()) {
                    ++counts[static_cast<std::size_t>(node.feature)];
                }
            }
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> out;
    for (std::size_t f = 0; f < counts.size(); ++f) {
        if (counts[f] > 0) {
            out.emplace_back(e.feature_names[f], counts[f]);
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

// ---------------------------------------------------------------------------
// Cross-validated training
// ---------------------------------------------------------------------------

struct GridResult {
    Hyperparams params;
    std::vector<double> fold_macro_f1;
    double mean_macro_f1 = 0.0;
};

struct CvReport {
    int k_folds = 0;
    std::vector<GridResult> grid;
    std::size_t chosen = 0;
    std::array<std::uint64_t, kNumCoarse> class_counts{};
    /// Out-of-fold scores of the chosen setting, argmax and thresholded.
    eval::F1Report oof_argmax;
    eval::F1Report oof_thresholded;

    double best_macro_f1() const { return grid.at(chosen).mean_macro_f1; }

    json to_json() const {
        json g = json::array();
        for (const auto& r : grid) {
            g.push_back({{"params", r.params.to_json()},
                         {"fold_macro_f1", r.fold_macro_f1},
                         {"mean_macro_f1", r.mean_macro_f1}});
        }
        json counts = json::object();
        for (std::size_t k = 0; k < kNumCoarse; ++k) {
            counts[std::string(kCoarseNames[k])] = class_counts[k];
        }
        return {{"k_folds", k_folds},
                {"grid", std::move(g)},
                {"chosen", chosen},
                {"chosen_params", grid.at(chosen).params.to_json()},
                {"cv_macro_f1", best_macro_f1()},
                {"class_counts", std::move(counts)},
                {"oof_argmax", oof_argmax.to_json()},
                {"oof_thresholded", oof_thresholded.to_json()}};
    }
};

struct TrainResult {
    Ensemble ensemble;
    ThresholdSet thresholds;
    CvReport report;
};

namespace detail {

inline std::vector<std::string> coarse_label_names() {
    return {kCoarseNames.begin(), kCoarseNames.end()};
}

inline eval::F1Report score_labels(std::span<const CoarseLabel> gold, std::span<const CoarseLabel> pred,
                                   const std::array<bool, kNumCoarse>& present) {
    eval::ConfusionMatrix m(coarse_label_names());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        m.add(index_of(gold[i]), index_of(pred[i]));
    }
    std::vector<std::size_t> classes;
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        if (present[k]) {
            classes.push_back(k);
        }
    }
    return eval::f1_report(m, classes);
}

inline std::vector<double> sample_weights_for(std::span<const CoarseLabel> labels, bool weighted) {
    std::vector<double> w(labels.size(), 1.0);
    if (weighted) {
        const auto cw = present_class_weights(labels);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            w[i] = cw[labels[i]];
        }
    }
    return w;
}

} // namespace detail

/// Stratified k-fold grid search on macro-F1 (argmax over the classes that
/// occur), out-of-fold threshold tuning for the chosen setting, and a final
/// refit on every row.
inline TrainResult train(const Matrix& x, std::span<const CoarseLabel> labels, const TrainConfig& cfg,
                         std::vector<std::string> feature_names) {
    if (cfg.k_folds < 2) {
        throw ConfigError("k_folds must be >= 2");
    }
    if (x.rows != labels.size()) {
        throw ContractError("feature rows and labels differ in length");
    }
    if (x.rows < static_cast<std::size_t>(3 * cfg.k_folds)) {
        throw TrainingError("need at least " + std::to_string(3 * cfg.k_folds) + " rows, got " +
                            std::to_string(x.rows));
    }
    const auto counts = class_counts(labels);
    std::array<bool, kNumCoarse> present{};
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        present[k] = counts[k] > 0;
    }
    if (std::count(present.begin(), present.end(), true) < 2) {
        throw TrainingError("degenerate labels: a single class");
    }
    const auto grid = cfg.candidates();
    for (const auto& hp : grid) {
        hp.validate();
    }

    std::vector<int> cls(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        cls[i] = static_cast<int>(index_of(labels[i]));
    }
    const auto folds = corpus::stratified_kfold(std::span<const int>(cls), cfg.k_folds, cfg.seed);
    const std::size_t k = folds.size();

    struct FoldData {
        std::vector<std::size_t> train_rows;
        std::vector<CoarseLabel> train_labels;
        std::vector<double> weights;
    };
    std::vector<FoldData> fold_data(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<bool> held(x.rows, false);
        for (auto i : folds[f]) {
            held[i] = true;
        }
        auto& fd = fold_data[f];
        for (std::size_t i = 0; i < x.rows; ++i) {
            if (!held[i]) {
                fd.train_rows.push_back(i);
                fd.train_labels.push_back(labels[i]);
            }
        }
        fd.weights = detail::sample_weights_for(fd.train_labels, cfg.use_class_weights);
    }

    // oof[g][i] = out-of-fold probabilities of row i under grid point g
    std::vector<std::vector<Proba>> oof(grid.size(), std::vector<Proba>(x.rows));
    parallel_for(grid.size() * k, cfg.threads, [&](std::size_t job) {
        const std::size_t gi = job / k;
        const std::size_t f = job % k;
        const auto& fd = fold_data[f];
        const auto model = fit_ensemble(x, fd.train_rows, fd.train_labels, fd.weights, grid[gi],
                                        feature_names);
        for (auto i : folds[f]) {
            oof[gi][i] = predict_proba(model, x.row(i));
        }
    });

    TrainResult result;
    auto& report = result.report;
    report.k_folds = cfg.k_folds;
    report.class_counts = counts;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        GridResult gr;
        gr.params = grid[gi];
        double sum = 0.0;
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<CoarseLabel> gold;
            std::vector<CoarseLabel> pred;
            for (auto i : folds[f]) {
                gold.push_back(labels[i]);
                pred.push_back(argmax_label(oof[gi][i], present));
            }
            const double m = detail::score_labels(gold, pred, present).macro_f1;
            gr.fold_macro_f1.push_back(m);
            sum += m;
        }
        gr.mean_macro_f1 = sum / static_cast<double>(k);
        if (gi == 0 || gr.mean_macro_f1 > report.grid[report.chosen].mean_macro_f1) {
            report.chosen = gi;
        }
        report.grid.push_back(std::move(gr));
    }

    const auto& best_oof = oof[report.chosen];
    result.thresholds = optimize_thresholds(best_oof, labels);
    std::vector<CoarseLabel> argmax_pred;
    std::vector<CoarseLabel> thresholded_pred;
    for (std::size_t i = 0; i < x.rows; ++i) {
        argmax_pred.push_back(argmax_label(best_oof[i], present));
        thresholded_pred.push_back(classify_proba(best_oof[i], result.thresholds, present));
    }
    report.oof_argmax = detail::score_labels(labels, argmax_pred, present);
    report.oof_thresholded = detail::score_labels(labels, thresholded_pred, present);

    std::vector<std::size_t> all(x.rows);
    std::iota(all.begin(), all.end(), 0);
    const auto weights = detail::sample_weights_for(labels, cfg.use_class_weights);
    result.ensemble =
        fit_ensemble(x, all, labels, weights, grid[report.chosen], std::move(feature_names));
    return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr std::string_view kEnsembleMagic = "APGB";
inline constexpr std::uint32_t kEnsembleVersion = 1;

inline std::vector<char> save_ensemble_bytes(const Ensemble& e) {
    io::Writer w;
    w.put(static_cast<std::int32_t>(e.cluster));
    w.put(static_cast<std::uint32_t>(e.feature_names.size()));
    for (const auto& n : e.feature_names) {
        w.put_string(n);
    }
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        w.put(e.base_score[k]);
        w.put(static_cast<std::uint8_t>(e.present[k] ? 1 : 0));
        w.put(e.class_weights.w[k]);
    }
    w.put(static_cast<std::uint32_t>(e.rounds.size()));
    for (const auto& round : e.rounds) {
        for (const auto& tree : round) {
            w.put(static_cast<std::uint32_t>(tree.nodes().size()));
            for (const auto& n : tree.nodes()) {
                w.put(n.feature);
                w.put(n.threshold);
                w.put(n.left);
                w.put(n.right);
                w.put(n.value);
            }
        }
    }
    return io::frame(kEnsembleMagic, kEnsembleVersion, w.bytes());
}

inline Ensemble load_ensemble_bytes(std::span<const char> file) {
    io::Reader r(io::unframe(file, kEnsembleMagic, kEnsembleVersion));
    Ensemble e;
    e.cluster = r.get<std::int32_t>();
    const auto nf = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nf; ++i) {
        e.feature_names.push_back(r.get_string());
    }
    for (std::size_t k = 0; k < kNumCoarse; ++k) {
        e.base_score[k] = r.get<double>();
        e.present[k] = r.get<std::uint8_t>() != 0;
        e.class_weights.w[k] = r.get<double>();
    }
    const auto nr = r.get<std::uint32_t>();
    e.rounds.resize(nr);
    for (auto& round : e.rounds) {
        for (auto& tree : round) {
            const auto nn = r.get<std::uint32_t>();
            std::vector<TreeNode> nodes(nn);
            for (auto& n : nodes) {
                n.feature = r.get<std::int32_t>();
                n.threshold = r.get<double>();
                n.left = r.get<std::int32_t>();
                n.right = r.get<std::int32_t>();
                n.value = r.get<double>();
            }
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                const auto& n = nodes[i];
                const auto bad = [&](std::int32_t c) {
                    return c <= static_cast<std::int32_t>(i) || c >= static_cast<std::int32_t>(nn);
                };
                if (!n.is_leaf() && (n.feature >= static_cast<std::int32_t>(nf) || bad(n.left) ||
                                     bad(n.right))) {
                    throw CorruptFileError("malformed tree node");
                }
            }
            tree = Tree(std::move(nodes));
        }
    }
    if (!r.at_end()) {
        throw CorruptFileError("trailing bytes after ensemble payload");
    }
    return e;
}

/// One cluster's deployable model.
struct ClusterModel {
    Ensemble ensemble;
    ThresholdSet thresholds;
};

/// Model bundle directory layout:
///   cluster_<NN>.gbdt    one ensemble per cluster
///   thresholds.json      {"<cluster>": ThresholdSet}
///   feature_schema.json  column manifest
///   cv_report.json       {"<cluster>": CvReport}
inline void save_bundle(const std::filesystem::path& dir, const std::map<int, ClusterModel>& models,
                        const json& feature_schema, const json& cv_reports) {
    std::filesystem::create_directories(dir);
    json thresholds = json::object();
    for (const auto& [cluster, m] : models) {
        char name[32];
        std::snprintf(name, sizeof(name), "cluster_%02d.gbdt", cluster);
        io::write_file((dir / name).string(), save_ensemble_bytes(m.ensemble));
        thresholds[std::to_string(cluster)] = m.thresholds.to_json();
    }
    auto write_json = [&](const char* file, const json& j) {
        std::ofstream out(dir / file);
        if (!out) {
            throw IoError("cannot write " + (dir / file).string());
        }
        out << j.dump(2) << '\n';
    };
    write_json("thresholds.json", thresholds);
    write_json("feature_schema.json", feature_schema);
    write_json("cv_report.json", cv_reports);
}

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw IoError("cannot open " + p.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw CorruptFileError(p.string() + ": " + e.what());
    }
}

inline std::map<int, ClusterModel> load_bundle(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("model directory '" + dir.string() + "' does not exist");
    }
    const json thresholds = read_json_file(dir / "thresholds.json");
    std::map<int, ClusterModel> models;
    for (const auto& [key, value] : thresholds.items()) {
        const int cluster = std::stoi(key);
        char name[32];
        std::snprintf(name, sizeof(name), "cluster_%02d.gbdt", cluster);
        ClusterModel m;
        m.ensemble = load_ensemble_bytes(io::read_file((dir / name).string()));
        m.thresholds = ThresholdSet::from_json(value);
        models.emplace(cluster, std::move(m));
    }
    return models;
}

} // namespace actpred::gbdt
