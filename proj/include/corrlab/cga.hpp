#pragma once

#include "corrlab/blocks.hpp"

namespace corrlab {

struct CpaDebug {
    Matrix content_attention;    // A_F, row-stochastic
    Matrix geometric_attention;  // A_G, row-stochastic
};

/// Context Position Attention: content attention from Q/K projections,
/// geometric attention from positionally encoded coordinates, fused as
/// (A_G + A_F) V.
class CpaBlock {
public:
    /// share_pos_encoders reuses one coordinate encoder for both views;
    /// scale_geometric applies the 1/sqrt(d) factor to Q P^T as well (the
    /// content branch always scales).
    CpaBlock(ParameterStore& store, std::string prefix, int d, bool share_pos_encoders,
             bool scale_geometric, Rng& rng);

    /// f is N x d; p1/p2 are the N x 2 coordinate halves of the set. N >= 2.
    ad::NodePtr forward(ParameterStore& store, ad::NodePtr f, ad::NodePtr p1, ad::NodePtr p2,
                        CpaDebug* debug = nullptr) const;

private:
    ad::NodePtr projection(ParameterStore& store, const std::string& name, ad::NodePtr f) const;
    ad::NodePtr encode(ParameterStore& store, const std::string& name, ad::NodePtr coords) const;

    std::string prefix_;
    int d_;
    bool share_pos_encoders_;
    bool scale_geometric_;
};

/// Multi-branch feed-forward: layer-normalized input sent through identity,
/// global-average-pool and global-max-pool branches, each through a
/// conv-norm-gelu-conv unit, summed after broadcasting the pooled branches.
class MbffnBlock {
public:
    MbffnBlock(ParameterStore& store, std::string prefix, int d, Rng& rng);
    ad::NodePtr forward(ParameterStore& store, ad::NodePtr f) const;

private:
    ad::NodePtr cbgc(ParameterStore& store, const std::string& name, ad::NodePtr x) const;

    std::string prefix_;
};

}  // namespace corrlab
