#pragma once

#include "corrlab/blocks.hpp"

namespace corrlab {

/// Per-anchor k-nearest-neighbor structure in feature space. Neighbors are
/// stored rank-major per anchor, sorted by descending affinity (negative
/// squared Euclidean distance), index tie-break. No self-loops.
struct KnnGraph {
    int n = 0;
    int k = 0;
    std::vector<int> neighbors;  // n * k entries
    ad::NodePtr edges;           // (n * k) x (2 d) rows of [z_i, z_j - z_i]
};

/// Exact k-NN indices by brute force; throws when k >= N or k < 1.
std::vector<int> knn_indices(const Matrix& z, int k);

/// Graph over the rows of feature map node z, with differentiable edge
/// features (the neighbor selection itself carries no gradient).
KnnGraph build_knn_graph(ad::NodePtr z, int k);

/// Rank-aligned channel concatenation of the four graphs' edge features
/// (neighbor index sets need not coincide). Output edges are (n*k) x 8d.
ad::NodePtr concat_graphs(const KnnGraph& g_cross, const KnnGraph& g1, const KnnGraph& g2,
                          const KnnGraph& g3);

/// Cross-Stage Multi-Graph Consensus: SE-fuses the z3 history (stages
/// 1..M-2), builds four k-NN graphs, concatenates them rank-aligned, aligns
/// edges to width d, and aggregates each anchor's neighbors by annular
/// convolution into an N x d feature map.
class CsmgcBlock {
public:
    CsmgcBlock(ParameterStore& store, std::string prefix, int d, int k, int ring_size,
               int history_len, int se_reduction, Rng& rng);

    ad::NodePtr forward(ParameterStore& store, const std::vector<ad::NodePtr>& z3_history,
                        ad::NodePtr z1, ad::NodePtr z2, ad::NodePtr z3) const;

    ad::NodePtr cross_stage_fuse(ParameterStore& store,
                                 const std::vector<ad::NodePtr>& z3_history) const;

    /// Per-edge linear map + rectifier reducing fused edges from 8d to d.
    ad::NodePtr align_features(ParameterStore& store, ad::NodePtr fused_edges) const;

    /// Ring-partitioned aggregation of affinity-sorted neighbors with learned
    /// 1 x p kernels, ring concat + linear combine, then a residual MLP.
    ad::NodePtr annular_conv(ParameterStore& store, ad::NodePtr edges, int n_anchors) const;

    int k() const { return k_; }
    int ring_size() const { return ring_size_; }

private:
    std::string prefix_;
    int d_;
    int k_;
    int ring_size_;
    SeFuseBlock se_;
};

}  // namespace corrlab
