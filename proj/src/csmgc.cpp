#include "corrlab/csmgc.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace corrlab {

namespace ad_ = corrlab::ad;

std::vector<int> knn_indices(const Matrix& z, int k) {
    const int n = z.rows();
    if (k < 1 || k >= n) {
        throw std::invalid_argument("knn_indices: need 1 <= k < N (k=" + std::to_string(k) +
                                    ", N=" + std::to_string(n) + ")");
    }
    std::vector<int> out(static_cast<std::size_t>(n) * k);
    std::vector<std::pair<double, int>> dist(n);
    const int sorted = std::min(k + 1, n - 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < z.cols(); ++c) {
                const double diff = z.at(i, c) - z.at(j, c);
                d2 += diff * diff;
            }
            dist[j] = {d2, j};
        }
        dist[i].first = std::numeric_limits<double>::infinity();  // no self-loop
        std::partial_sort(dist.begin(), dist.begin() + sorted, dist.end());
        for (int r = 0; r < k; ++r) out[static_cast<std::size_t>(i) * k + r] = dist[r].second;
        // Selection flips when consecutive distances tie; the selection is
        // treated as constant by the gradient, so the tie margin is a kink.
        for (int r = 0; r + 1 < sorted; ++r) {
            ad::KinkScope::report(dist[r + 1].first - dist[r].first);
        }
    }
    return out;
}

KnnGraph build_knn_graph(ad_::NodePtr z, int k) {
    KnnGraph g;
    g.n = z->value.rows();
    g.k = k;
    g.neighbors = knn_indices(z->value, k);

    std::vector<int> anchor_idx(static_cast<std::size_t>(g.n) * k);
    for (int i = 0; i < g.n; ++i)
        for (int r = 0; r < k; ++r) anchor_idx[static_cast<std::size_t>(i) * k + r] = i;

    auto anchors = ad_::gather_rows(z, anchor_idx);
    auto nbrs = ad_::gather_rows(z, g.neighbors);
    g.edges = ad_::concat_cols({anchors, ad_::sub(nbrs, anchors)});
    return g;
}

ad_::NodePtr concat_graphs(const KnnGraph& g_cross, const KnnGraph& g1, const KnnGraph& g2,
                           const KnnGraph& g3) {
    const KnnGraph* graphs[4] = {&g_cross, &g1, &g2, &g3};
    for (const KnnGraph* g : graphs) {
        if (g->n != g_cross.n || g->k != g_cross.k) {
            throw std::invalid_argument("concat_graphs: graphs disagree on N or k");
        }
    }
    return ad_::concat_cols({g_cross.edges, g1.edges, g2.edges, g3.edges});
}

CsmgcBlock::CsmgcBlock(ParameterStore& store, std::string prefix, int d, int k, int ring_size,
                       int history_len, int se_reduction, Rng& rng)
    : prefix_(std::move(prefix)),
      d_(d),
      k_(k),
      ring_size_(ring_size),
      se_(store, prefix_ + "/se", d, history_len, se_reduction, rng) {
    if (ring_size < 1 || k % ring_size != 0) {
        throw std::invalid_argument("CsmgcBlock: ring size must divide k (k=" +
                                    std::to_string(k) + ", p=" + std::to_string(ring_size) + ")");
    }
    register_linear(store, prefix_ + "/align", 8 * d, d, rng);
    const int rings = k / ring_size;
    store.constant(prefix_ + "/ring_kernel", rings, ring_size, 1.0 / ring_size);
    store.zeros(prefix_ + "/ring_bias", rings, d);
    register_linear(store, prefix_ + "/combine", rings * d, d, rng);
    register_linear(store, prefix_ + "/mlp0", d, d, rng);
    register_linear(store, prefix_ + "/mlp1", d, d, rng, /*zero_weight=*/true);
}

ad_::NodePtr CsmgcBlock::cross_stage_fuse(ParameterStore& store,
                                          const std::vector<ad_::NodePtr>& z3_history) const {
    if (z3_history.empty()) {
        throw std::invalid_argument("cross_stage_fuse: empty history (needs M >= 3)");
    }
    return se_.forward(store, z3_history);
}

ad_::NodePtr CsmgcBlock::align_features(ParameterStore& store, ad_::NodePtr fused_edges) const {
    if (fused_edges->value.cols() != 8 * d_) {
        throw std::invalid_argument("align_features: fused edge width must be 8d");
    }
    return ad_::relu(linear(store, prefix_ + "/align", fused_edges));
}

ad_::NodePtr CsmgcBlock::annular_conv(ParameterStore& store, ad_::NodePtr edges,
                                      int n_anchors) const {
    if (edges->value.rows() != n_anchors * k_) {
        throw std::invalid_argument("annular_conv: edge rows != N * k");
    }
    const int rings = k_ / ring_size_;
    auto kernel = ad_::param(store, prefix_ + "/ring_kernel");
    auto bias = ad_::param(store, prefix_ + "/ring_bias");

    std::vector<ad_::NodePtr> ring_outs;
    ring_outs.reserve(rings);
    for (int ring = 0; ring < rings; ++ring) {
        ad_::NodePtr acc;
        for (int pos = 0; pos < ring_size_; ++pos) {
            const int rank = ring * ring_size_ + pos;
            std::vector<int> rows(n_anchors);
            for (int i = 0; i < n_anchors; ++i) rows[i] = i * k_ + rank;
            auto member = ad_::gather_rows(edges, rows);  // N x d at this rank
            auto weighted = ad_::mul_scalar_node(member, ad_::slice_block(kernel, ring, pos, 1, 1));
            acc = acc ? ad_::add(acc, weighted) : weighted;
        }
        ring_outs.push_back(ad_::add_rowvec(acc, ad_::slice_block(bias, ring, 0, 1, d_)));
    }
    auto combined = linear(store, prefix_ + "/combine",
                           rings == 1 ? ring_outs[0] : ad_::concat_cols(ring_outs));
    auto refined = linear(store, prefix_ + "/mlp1",
                          ad_::relu(linear(store, prefix_ + "/mlp0", combined)));
    return ad_::add(combined, refined);
}

ad_::NodePtr CsmgcBlock::forward(ParameterStore& store,
                                 const std::vector<ad_::NodePtr>& z3_history, ad_::NodePtr z1,
                                 ad_::NodePtr z2, ad_::NodePtr z3) const {
    auto z_cross = cross_stage_fuse(store, z3_history);
    const KnnGraph g_cross = build_knn_graph(z_cross, k_);
    const KnnGraph g1 = build_knn_graph(z1, k_);
    const KnnGraph g2 = build_knn_graph(z2, k_);
    const KnnGraph g3 = build_knn_graph(z3, k_);
    auto fused = concat_graphs(g_cross, g1, g2, g3);
    auto aligned = align_features(store, fused);
    return annular_conv(store, aligned, g_cross.n);
}

}  // namespace corrlab
