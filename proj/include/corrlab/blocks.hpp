#pragma once

#include "corrlab/autodiff.hpp"

#include <string>
#include <vector>

namespace corrlab {

/// Registers prefix/w (in x out, fan-in-scaled uniform) and prefix/b
/// (1 x out, zeros). zero_weight selects the identity-leaning zero init used
/// on residual-path final layers.
void register_linear(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim,
                     Rng& rng, bool zero_weight = false);
ad::NodePtr linear(ParameterStore& store, const std::string& prefix, ad::NodePtr x);

/// Learned per-channel gain/shift applied after a parameter-free
/// normalization (the affine half of a batch-norm-style layer).
void register_channel_affine(ParameterStore& store, const std::string& prefix, int d);
ad::NodePtr channel_affine(ParameterStore& store, const std::string& prefix, ad::NodePtr x);

/// Residual block f + g(g(f)) with g = linear o affine o relu o context_norm.
/// Permutation equivariant; identity map at all-zero parameters.
class PointCNBlock {
public:
    PointCNBlock(ParameterStore& store, std::string prefix, int d, Rng& rng);
    ad::NodePtr forward(ParameterStore& store, ad::NodePtr f) const;

private:
    std::string prefix_;
};

/// Soft-assignment pooling to m clusters, two residual mixing layers over the
/// cluster axis, soft unpooling, residual add.
class OrderAwareBlock {
public:
    OrderAwareBlock(ParameterStore& store, std::string prefix, int d, int clusters, Rng& rng);
    ad::NodePtr forward(ParameterStore& store, ad::NodePtr f) const;

    /// Soft cluster pooling only (assignment-weighted mean per cluster).
    ad::NodePtr pool(ParameterStore& store, ad::NodePtr f) const;

private:
    std::string prefix_;
    int clusters_;
};

struct SeFuseDebug {
    Matrix squeeze;  // per-channel means before excitation
    Matrix gates;    // sigmoid outputs in (0, 1)
};

/// Squeeze-excitation fusion of L equally wide feature maps: concatenate to
/// N x (d*L), gate channels by a two-layer excitation with reduction ratio r,
/// compress back to N x d.
class SeFuseBlock {
public:
    SeFuseBlock(ParameterStore& store, std::string prefix, int d, int n_inputs, int reduction,
                Rng& rng);
    ad::NodePtr forward(ParameterStore& store, const std::vector<ad::NodePtr>& z_list,
                        SeFuseDebug* debug = nullptr) const;

    int n_inputs() const { return n_inputs_; }

private:
    std::string prefix_;
    int d_;
    int n_inputs_;
};

}  // namespace corrlab
