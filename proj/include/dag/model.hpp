#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dag/bag.hpp"
#include "dag/param_store.hpp"
#include "dag/spatial.hpp"
#include "dag/tape.hpp"

namespace dag {

enum class ReadoutKind { kMean, kMax, kAttention };

inline ReadoutKind parse_readout(const std::string& s) {
    if (s == "mean") return ReadoutKind::kMean;
    if (s == "max") return ReadoutKind::kMax;
    if (s == "attention") return ReadoutKind::kAttention;
    throw InputError("unknown readout kind: " + s + " (expected mean|max|attention)");
}

inline std::string readout_name(ReadoutKind k) {
    switch (k) {
        case ReadoutKind::kMean: return "mean";
        case ReadoutKind::kMax: return "max";
        default: return "attention";
    }
}

struct DagConfig {
    std::uint32_t dim = 64;           // feature dimension D
    std::uint32_t offset_hidden = 0;  // 0 -> max(8, dim/4)
    std::uint32_t neighbors = 8;      // K queries per head node
    double stride = 256.0;            // S, pixels
    ReadoutKind readout = ReadoutKind::kAttention;
    bool offset_on = true;
    bool weight_on = true;
    bool coords_on = true;
    std::uint32_t classes = 3;
    double leaky_slope = 0.01;

    std::uint32_t hidden() const {
        return offset_hidden ? offset_hidden : std::max<std::uint32_t>(8, dim / 4);
    }

    void validate() const {
        if (neighbors < 1) throw InputError("config: neighbors (K) must be >= 1");
        if (stride <= 0) throw InputError("config: stride must be positive");
        if (dim < 2) throw InputError("config: dim must be >= 2");
        if (classes < 2) throw InputError("config: classes must be >= 2");
        if (leaky_slope <= 0 || leaky_slope >= 1)
            throw InputError("config: leaky slope must lie in (0,1)");
    }
};

namespace param {
inline constexpr const char* kHeadW = "head.W";
inline constexpr const char* kHeadB = "head.b";
inline constexpr const char* kTailW = "tail.W";
inline constexpr const char* kTailB = "tail.b";
inline constexpr const char* kOffset1W = "offset.l1.W";
inline constexpr const char* kOffset1B = "offset.l1.b";
inline constexpr const char* kOffset2W = "offset.l2.W";
inline constexpr const char* kOffset2B = "offset.l2.b";
inline constexpr const char* kOffsetAlpha = "offset.alpha";
inline constexpr const char* kEdgeW = "edge.W";
inline constexpr const char* kFuseAddW = "fuse.add.W";
inline constexpr const char* kFuseAddB = "fuse.add.b";
inline constexpr const char* kFuseMulW = "fuse.mul.W";
inline constexpr const char* kFuseMulB = "fuse.mul.b";
inline constexpr const char* kReadoutW = "readout.w";
inline constexpr const char* kClsW = "cls.W";
inline constexpr const char* kClsB = "cls.b";
}  // namespace param

/// Fresh parameter store for a config. Weights are uniform(+-1/sqrt(fan_in)),
/// biases zero, alpha zero (so the offset scale starts at sigmoid(0) = 0.5).
/// Modules disabled by ablation flags get no parameters at all, so the
/// parameter set is a pure function of the config.
template <typename S>
nn::ParamStore<S> make_params(const DagConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937 rng(std::uint32_t(seed) ^ std::uint32_t(seed >> 32) ^ 0x9e3779b9u);
    nn::ParamStore<S> store;
    const std::uint32_t d = cfg.dim;
    // creation order is fixed so a seed pins every draw
    store.add(param::kHeadW, nn::init_uniform<S>(d, d, d, rng));
    store.add(param::kHeadB, nn::Tensor<S>::zeros(1, d));
    store.add(param::kTailW, nn::init_uniform<S>(d, d, d, rng));
    store.add(param::kTailB, nn::Tensor<S>::zeros(1, d));
    if (cfg.offset_on) {
        const std::uint32_t h = cfg.hidden();
        store.add(param::kOffset1W, nn::init_uniform<S>(d, h, d, rng));
        store.add(param::kOffset1B, nn::Tensor<S>::zeros(1, h));
        store.add(param::kOffset2W, nn::init_uniform<S>(h, 2 * cfg.neighbors, h, rng));
        store.add(param::kOffset2B, nn::Tensor<S>::zeros(1, 2 * cfg.neighbors));
        store.add(param::kOffsetAlpha, nn::Tensor<S>::scalar(S(0)));
    }
    if (cfg.weight_on) store.add(param::kEdgeW, nn::init_uniform<S>(d, d, d, rng));
    store.add(param::kFuseAddW, nn::init_uniform<S>(d, d, d, rng));
    store.add(param::kFuseAddB, nn::Tensor<S>::zeros(1, d));
    store.add(param::kFuseMulW, nn::init_uniform<S>(d, d, d, rng));
    store.add(param::kFuseMulB, nn::Tensor<S>::zeros(1, d));
    if (cfg.readout == ReadoutKind::kAttention)
        store.add(param::kReadoutW, nn::init_uniform<S>(d, 1, d, rng));
    store.add(param::kClsW, nn::init_uniform<S>(d, cfg.classes, d, rng));
    store.add(param::kClsB, nn::Tensor<S>::zeros(1, cfg.classes));
    return store;
}

/// Per-forward-pass view: parameter values copied onto the tape as leaves,
/// with the name of each leaf remembered so gradients can be pulled back
/// into the store after backward().
template <typename S>
struct BoundModel {
    using Id = typename nn::Tape<S>::Id;
    nn::Tape<S>* tape = nullptr;
    const DagConfig* cfg = nullptr;
    std::map<std::string, Id> params;

    Id id(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw StateError("parameter not bound: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params.count(name) != 0; }
};

template <typename S>
BoundModel<S> bind_model(nn::Tape<S>& tape, const nn::ParamStore<S>& store,
                         const DagConfig& cfg) {
    BoundModel<S> bm;
    bm.tape = &tape;
    bm.cfg = &cfg;
    store.for_each_const([&](const std::string& name, const nn::Tensor<S>& value) {
        bm.params.emplace(name, tape.leaf(value));
    });
    return bm;
}

template <typename S>
void pull_gradients(const BoundModel<S>& bm, nn::ParamStore<S>& store) {
    for (const auto& [name, id] : bm.params)
        store.accumulate_grad(name, bm.tape->grad(id));
}

/// Head/tail projections of the patch features: H = X*W_h + b_h,
/// T = X*W_t + b_t.
template <typename S>
std::pair<typename nn::Tape<S>::Id, typename nn::Tape<S>::Id> project_head_tail(
    const BoundModel<S>& bm, typename nn::Tape<S>::Id features) {
    auto& t = *bm.tape;
    if (t.value(features).cols != bm.cfg->dim)
        throw ShapeError("project_head_tail: features " + t.value(features).shape_str() +
                         " do not match config dim " + std::to_string(bm.cfg->dim));
    auto h = t.linear(features, bm.id(param::kHeadW), bm.id(param::kHeadB));
    auto tail = t.linear(features, bm.id(param::kTailW), bm.id(param::kTailB));
    return {h, tail};
}

/// Offset net: linear -> leaky_relu -> linear -> tanh, emitting K raw
/// (x, y) offsets per head node in (-1, 1), laid out [N x 2K].
template <typename S>
typename nn::Tape<S>::Id predict_offsets(const BoundModel<S>& bm,
                                         typename nn::Tape<S>::Id head) {
    if (!bm.cfg->offset_on)
        throw StateError("predict_offsets: offset module is disabled in this config");
    auto& t = *bm.tape;
    auto z = t.linear(head, bm.id(param::kOffset1W), bm.id(param::kOffset1B));
    z = t.leaky_relu(z, S(bm.cfg->leaky_slope));
    z = t.linear(z, bm.id(param::kOffset2W), bm.id(param::kOffset2B));
    return t.tanh(z);
}

/// Offset scaling law: every raw component times stride * sqrt(N) * sigmoid(alpha).
template <typename S>
typename nn::Tape<S>::Id scale_offsets(const BoundModel<S>& bm, typename nn::Tape<S>::Id raw,
                                       double stride, std::size_t patch_count) {
    if (stride <= 0) throw InputError("scale_offsets: stride must be positive");
    if (patch_count == 0) throw InputError("scale_offsets: patch count must be >= 1");
    auto& t = *bm.tape;
    auto sig = t.sigmoid(bm.id(param::kOffsetAlpha));
    return t.scale_by_scalar(raw, sig, S(stride * std::sqrt(double(patch_count))));
}

/// q_{i,k} = anchor_i + o_{i,k}; offsets come off the tape as plain values
/// because the argmin selection downstream is not differentiable.
template <typename S>
std::vector<spatial::Point2> form_queries(const std::vector<spatial::Point2>& anchors,
                                          const nn::Tensor<S>& offsets) {
    const std::size_t n = anchors.size();
    if (offsets.rows != n || offsets.cols % 2 != 0)
        throw ShapeError("form_queries: offsets " + offsets.shape_str() +
                         " do not match " + std::to_string(n) + " anchors");
    const std::size_t k = offsets.cols / 2;
    std::vector<spatial::Point2> queries(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        const S* row = offsets.row_ptr(i);
        for (std::size_t j = 0; j < k; ++j)
            queries[i * k + j] = {anchors[i].x + double(row[2 * j]),
                                  anchors[i].y + double(row[2 * j + 1])};
    }
    return queries;
}

/// Snap each query to its closest real patch (lowest index on ties).
/// Duplicates and self-selection are allowed by construction.
inline std::vector<std::uint32_t> sample_neighbors(const std::vector<spatial::Point2>& queries,
                                                   const spatial::PointIndex& index) {
    std::vector<std::uint32_t> out(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q)
        out[q] = std::uint32_t(index.nearest(queries[q]));
    return out;
}

/// Offset-off ablation: K nearest distinct patches by anchor distance
/// (self excluded when N > K; when N <= K the sorted candidate list is
/// cycled so every node still has exactly K neighbors).
inline std::vector<std::uint32_t> knn_neighbors(const std::vector<spatial::Point2>& anchors,
                                                std::size_t k) {
    const std::size_t n = anchors.size();
    std::vector<std::uint32_t> out(n * k);
    std::vector<std::pair<double, std::uint32_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (n > k && j == i) continue;
            cand.emplace_back(spatial::squared_distance(anchors[i], anchors[j]),
                              std::uint32_t(j));
        }
        std::sort(cand.begin(), cand.end());
        for (std::size_t slot = 0; slot < k; ++slot)
            out[i * k + slot] = cand[slot % cand.size()].second;
    }
    return out;
}

/// Coords-off ablation anchors: patches ranked in raster order of their real
/// coordinates ((y, x) lexicographic, ties by input index) and laid out on a
/// unit-pitch grid. Spatial ordering survives, physical geometry does not.
inline std::vector<spatial::Point2> raster_grid_anchors(const std::vector<spatial::Point2>& coords) {
    const std::size_t n = coords.size();
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = std::uint32_t(i);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (coords[a].y != coords[b].y) return coords[a].y < coords[b].y;
        if (coords[a].x != coords[b].x) return coords[a].x < coords[b].x;
        return a < b;
    });
    const std::size_t grid = std::size_t(std::ceil(std::sqrt(double(n))));
    std::vector<spatial::Point2> anchors(n);
    for (std::size_t rank = 0; rank < n; ++rank)
        anchors[order[rank]] = {double(rank % grid), double(rank / grid)};
    return anchors;
}

/// Edge attention weights (Eq. 7-8 stage): cosine similarity between the
/// expanded head embedding and each sampled tail embedding, softmax over K.
/// Returns the [N*K x 1] weight column plus the [N x K] similarity node.
template <typename S>
struct EdgeWeightNodes {
    typename nn::Tape<S>::Id alpha_col;   // [N*K x 1]
    typename nn::Tape<S>::Id alpha_mat;   // [N x K]
    typename nn::Tape<S>::Id similarity;  // [N*K x 1], weight_on only
    bool uniform = false;
};

template <typename S>
EdgeWeightNodes<S> edge_attention(const BoundModel<S>& bm, typename nn::Tape<S>::Id head,
                                  typename nn::Tape<S>::Id tails_gathered,
                                  const std::vector<std::uint32_t>& head_of_row) {
    auto& t = *bm.tape;
    const std::size_t rows = t.value(tails_gathered).rows;
    const std::size_t n = t.value(head).rows;
    const std::size_t k = rows / n;
    EdgeWeightNodes<S> out;
    if (!bm.cfg->weight_on) {
        out.uniform = true;
        out.alpha_col = t.leaf(nn::Tensor<S>::full(rows, 1, S(1) / S(k)));
        out.alpha_mat = t.leaf(nn::Tensor<S>::full(n, k, S(1) / S(k)));
        return out;
    }
    auto expanded = t.matmul(head, bm.id(param::kEdgeW));
    auto expanded_rep = t.gather_rows(expanded, std::vector<std::uint32_t>(head_of_row));
    out.similarity = t.row_cosine(expanded_rep, tails_gathered);
    auto sim_mat = t.reshape(out.similarity, n, k);
    out.alpha_mat = t.softmax_rows(sim_mat);
    out.alpha_col = t.reshape(out.alpha_mat, rows, 1);
    return out;
}

/// Gated aggregation (Eq. 9-10 stage): gate u = tanh(h + alpha*n), re-score
/// r = <u, n>/sqrt(D), beta = softmax_K(r), e = sum_k beta*n. With the edge
/// weight module off both alpha and beta stay uniform 1/K.
template <typename S>
struct AggregateNodes {
    typename nn::Tape<S>::Id e;         // [N x D]
    typename nn::Tape<S>::Id beta_mat;  // [N x K]
};

template <typename S>
AggregateNodes<S> gated_aggregate(const BoundModel<S>& bm, typename nn::Tape<S>::Id head,
                                  typename nn::Tape<S>::Id tails_gathered,
                                  const EdgeWeightNodes<S>& weights,
                                  const std::vector<std::uint32_t>& head_of_row) {
    auto& t = *bm.tape;
    const std::size_t rows = t.value(tails_gathered).rows;
    const std::size_t n = t.value(head).rows;
    const std::size_t k = rows / n;
    AggregateNodes<S> out;
    typename nn::Tape<S>::Id beta_col;
    if (weights.uniform) {
        out.beta_mat = t.leaf(nn::Tensor<S>::full(n, k, S(1) / S(k)));
        beta_col = t.leaf(nn::Tensor<S>::full(rows, 1, S(1) / S(k)));
    } else {
        auto head_rep = t.gather_rows(head, std::vector<std::uint32_t>(head_of_row));
        auto gate = t.tanh(t.add(head_rep, t.scale_rows(tails_gathered, weights.alpha_col)));
        const S inv_sqrt_d = S(1.0 / std::sqrt(double(t.value(head).cols)));
        auto scores = t.row_dot(gate, tails_gathered, inv_sqrt_d);
        out.beta_mat = t.softmax_rows(t.reshape(scores, n, k));
        beta_col = t.reshape(out.beta_mat, rows, 1);
    }
    out.e = t.sum_group_rows(t.scale_rows(tails_gathered, beta_col), k);
    return out;
}

/// Dual-channel residual fusion (Eq. 11):
/// H' = LeakyReLU(W1(h+e)+b1) + LeakyReLU(W2(h.*e)+b2).
template <typename S>
typename nn::Tape<S>::Id residual_fuse(const BoundModel<S>& bm, typename nn::Tape<S>::Id head,
                                       typename nn::Tape<S>::Id aggregate) {
    auto& t = *bm.tape;
    const S slope = S(bm.cfg->leaky_slope);
    auto add_ch = t.leaky_relu(
        t.linear(t.add(head, aggregate), bm.id(param::kFuseAddW), bm.id(param::kFuseAddB)),
        slope);
    auto mul_ch = t.leaky_relu(
        t.linear(t.mul(head, aggregate), bm.id(param::kFuseMulW), bm.id(param::kFuseMulB)),
        slope);
    return t.add(add_ch, mul_ch);
}

template <typename S>
struct ReadoutNodes {
    typename nn::Tape<S>::Id embedding;  // [1 x D]
    typename nn::Tape<S>::Id scores;     // [1 x N] softmax, attention kind only
    bool has_scores = false;
};

template <typename S>
ReadoutNodes<S> readout(const BoundModel<S>& bm, typename nn::Tape<S>::Id fused) {
    auto& t = *bm.tape;
    ReadoutNodes<S> out;
    switch (bm.cfg->readout) {
        case ReadoutKind::kMean:
            out.embedding = t.mean_rows(fused);
            return out;
        case ReadoutKind::kMax:
            out.embedding = t.max_rows(fused);
            return out;
        case ReadoutKind::kAttention: {
            const std::size_t n = t.value(fused).rows;
            auto raw = t.matmul(fused, bm.id(param::kReadoutW));  // [N x 1]
            out.scores = t.softmax_rows(t.reshape(raw, 1, n));
            out.has_scores = true;
            out.embedding = t.matmul(out.scores, fused);
            return out;
        }
    }
    throw InputError("readout: unknown kind");
}

/// Everything the forward pass learns about one bag besides the logits;
/// plain values, safe to keep after the tape is gone.
struct Diagnostics {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::uint32_t> neighbor_indices;  // n*k, D_{i,k}
    std::vector<spatial::Point2> queries;         // n*k
    std::vector<double> similarity;               // n*k (empty when uniform)
    std::vector<double> alpha;                    // n*k
    std::vector<double> beta;                     // n*k
    std::vector<double> node_scores;              // n (attention readout only)
};

template <typename S>
struct ForwardPass {
    nn::Tape<S> tape;
    BoundModel<S> model;
    typename nn::Tape<S>::Id logits;
    Diagnostics diag;

    std::vector<double> probabilities() const {
        const auto& lv = tape.value(logits);
        double mx = double(lv.data[0]);
        for (S v : lv.data) mx = std::max(mx, double(v));
        std::vector<double> p(lv.data.size());
        double sum = 0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            p[c] = std::exp(double(lv.data[c]) - mx);
            sum += p[c];
        }
        for (auto& v : p) v /= sum;
        return p;
    }

    std::uint32_t predicted_class() const {
        const auto& lv = tape.value(logits);
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < lv.data.size(); ++c)
            if (lv.data[c] > lv.data[best]) best = c;
        return best;
    }
};

namespace detail {

template <typename S>
nn::Tensor<S> features_tensor(const Bag& bag) {
    nn::Tensor<S> t(bag.n, bag.d);
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = S(bag.features[i]);
    return t;
}

template <typename S>
std::vector<double> column_to_doubles(const nn::Tensor<S>& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(t.data[i]);
    return out;
}

}  // namespace detail

/// Full pipeline for one bag. The graph lives on the returned tape; callers
/// append a loss node and run backward for training, or just read logits
/// and diagnostics for inference. The pass is deterministic given the
/// parameter values and the bag.
template <typename S>
ForwardPass<S> forward_bag(const Bag& bag, const nn::ParamStore<S>& store,
                           const DagConfig& cfg) {
    cfg.validate();
    bag.validate();
    if (bag.d != cfg.dim)
        throw ShapeError("forward_bag: bag " + bag.id + " has dim " + std::to_string(bag.d) +
                         " but config expects " + std::to_string(cfg.dim));

    ForwardPass<S> fp;
    auto& t = fp.tape;
    fp.model = bind_model(t, store, cfg);
    const auto& bm = fp.model;

    const std::size_t n = bag.n;
    const std::size_t k = cfg.neighbors;
    fp.diag.n = n;
    fp.diag.k = k;

    auto features = t.leaf(detail::features_tensor<S>(bag));
    auto [head, tail] = project_head_tail(bm, features);

    const std::vector<spatial::Point2> anchors =
        cfg.coords_on ? bag.coord_points() : raster_grid_anchors(bag.coord_points());

    if (cfg.offset_on) {
        auto raw = predict_offsets(bm, head);
        // on the synthetic unit-pitch grid the stride collapses to one pitch
        const double stride = cfg.coords_on ? cfg.stride : 1.0;
        auto scaled = scale_offsets(bm, raw, stride, n);
        fp.diag.queries = form_queries(anchors, t.value(scaled));
        spatial::PointIndex index(anchors);
        fp.diag.neighbor_indices = sample_neighbors(fp.diag.queries, index);
    } else {
        fp.diag.neighbor_indices = knn_neighbors(anchors, k);
        fp.diag.queries.resize(n * k);
        for (std::size_t q = 0; q < n * k; ++q)
            fp.diag.queries[q] = anchors[fp.diag.neighbor_indices[q]];
    }

    std::vector<std::uint32_t> head_of_row(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) head_of_row[i * k + j] = std::uint32_t(i);

    auto tails_gathered = t.gather_rows(tail, std::vector<std::uint32_t>(fp.diag.neighbor_indices));
    auto weights = edge_attention(bm, head, tails_gathered, head_of_row);
    auto agg = gated_aggregate(bm, head, tails_gathered, weights, head_of_row);
    auto fused = residual_fuse(bm, head, agg.e);
    auto ro = readout(bm, fused);
    fp.logits = t.linear(ro.embedding, bm.id(param::kClsW), bm.id(param::kClsB));

    fp.diag.alpha = detail::column_to_doubles(t.value(weights.alpha_mat));
    fp.diag.beta = detail::column_to_doubles(t.value(agg.beta_mat));
    if (!weights.uniform) fp.diag.similarity = detail::column_to_doubles(t.value(weights.similarity));
    if (ro.has_scores) fp.diag.node_scores = detail::column_to_doubles(t.value(ro.scores));
    return fp;
}

/// Per-patch relevance in [0,1], rescaled by the maximum: attention readout
/// exposes its node scores directly; mean/max readouts fall back to the
/// incoming edge-weight mass sum_{i,k: D_{i,k}=j} alpha*beta.
template <typename S>
std::vector<double> attention_heatmap(const Bag& bag, const nn::ParamStore<S>& store,
                                      const DagConfig& cfg) {
    auto fp = forward_bag(bag, store, cfg);
    std::vector<double> score(bag.n, 0.0);
    if (cfg.readout == ReadoutKind::kAttention) {
        score = fp.diag.node_scores;
    } else {
        for (std::size_t q = 0; q < fp.diag.neighbor_indices.size(); ++q)
            score[fp.diag.neighbor_indices[q]] += fp.diag.alpha[q] * fp.diag.beta[q];
    }
    const double mx = *std::max_element(score.begin(), score.end());
    if (mx > 0)
        for (auto& s : score) s /= mx;
    return score;
}

}  // namespace dag
