#include "corrlab/blocks.hpp"

#include <stdexcept>

namespace corrlab {

namespace ad_ = corrlab::ad;

void register_linear(ParameterStore& store, const std::string& prefix, int in_dim, int out_dim,
                     Rng& rng, bool zero_weight) {
    if (zero_weight) {
        store.zeros(prefix + "/w", in_dim, out_dim);
    } else {
        store.linear_weight(prefix + "/w", in_dim, out_dim, rng);
    }
    store.zeros(prefix + "/b", 1, out_dim);
}

ad_::NodePtr linear(ParameterStore& store, const std::string& prefix, ad_::NodePtr x) {
    auto w = ad_::param(store, prefix + "/w");
    auto b = ad_::param(store, prefix + "/b");
    return ad_::add_rowvec(ad_::matmul(x, w), b);
}

void register_channel_affine(ParameterStore& store, const std::string& prefix, int d) {
    store.constant(prefix + "/gain", 1, d, 1.0);
    store.zeros(prefix + "/shift", 1, d);
}

ad_::NodePtr channel_affine(ParameterStore& store, const std::string& prefix, ad_::NodePtr x) {
    auto gain = ad_::param(store, prefix + "/gain");
    auto shift = ad_::param(store, prefix + "/shift");
    return ad_::add_rowvec(ad_::mul_rowvec(x, gain), shift);
}

PointCNBlock::PointCNBlock(ParameterStore& store, std::string prefix, int d, Rng& rng)
    : prefix_(std::move(prefix)) {
    for (int unit = 0; unit < 2; ++unit) {
        const std::string u = prefix_ + "/unit" + std::to_string(unit);
        register_channel_affine(store, u + "/bn", d);
        register_linear(store, u + "/map", d, d, rng);
    }
}

ad_::NodePtr PointCNBlock::forward(ParameterStore& store, ad_::NodePtr f) const {
    ad_::NodePtr h = f;
    for (int unit = 0; unit < 2; ++unit) {
        const std::string u = prefix_ + "/unit" + std::to_string(unit);
        h = ad_::context_norm(h);
        h = ad_::relu(h);
        h = channel_affine(store, u + "/bn", h);
        h = linear(store, u + "/map", h);
    }
    return ad_::add(f, h);
}

OrderAwareBlock::OrderAwareBlock(ParameterStore& store, std::string prefix, int d, int clusters,
                                 Rng& rng)
    : prefix_(std::move(prefix)), clusters_(clusters) {
    if (clusters < 1) throw std::invalid_argument("OrderAwareBlock: clusters must be >= 1");
    register_linear(store, prefix_ + "/assign", d, clusters, rng);
    // Mixing layers start at zero so the block begins as pool/unpool only.
    store.zeros(prefix_ + "/mix0", clusters, clusters);
    store.zeros(prefix_ + "/mix1", clusters, clusters);
}

ad_::NodePtr OrderAwareBlock::pool(ParameterStore& store, ad_::NodePtr f) const {
    auto assign = ad_::softmax_rows(linear(store, prefix_ + "/assign", f));  // N x m
    auto raw = ad_::matmul(assign, f, /*trans_a=*/true);                     // m x d
    auto mass = ad_::col_sum_rows(assign);                                   // 1 x m
    auto inv_mass = ad_::transpose(ad_::recip(mass));                        // m x 1
    return ad_::mul_colvec(raw, inv_mass);
}

ad_::NodePtr OrderAwareBlock::forward(ParameterStore& store, ad_::NodePtr f) const {
    auto assign = ad_::softmax_rows(linear(store, prefix_ + "/assign", f));
    auto raw = ad_::matmul(assign, f, /*trans_a=*/true);
    auto mass = ad_::col_sum_rows(assign);
    auto pooled = ad_::mul_colvec(raw, ad_::transpose(ad_::recip(mass)));

    auto mixed = pooled;
    for (int layer = 0; layer < 2; ++layer) {
        auto w = ad_::param(store, prefix_ + "/mix" + std::to_string(layer));
        mixed = ad_::add(mixed, ad_::matmul(w, ad_::relu(mixed)));
    }
    auto unpooled = ad_::matmul(assign, mixed);  // N x d
    return ad_::add(f, unpooled);
}

SeFuseBlock::SeFuseBlock(ParameterStore& store, std::string prefix, int d, int n_inputs,
                         int reduction, Rng& rng)
    : prefix_(std::move(prefix)), d_(d), n_inputs_(n_inputs) {
    if (n_inputs < 1) throw std::invalid_argument("SeFuseBlock: needs at least one input");
    if (reduction < 1) throw std::invalid_argument("SeFuseBlock: reduction must be >= 1");
    const int wide = d * n_inputs;
    const int bottleneck = std::max(1, wide / reduction);
    register_linear(store, prefix_ + "/excite0", wide, bottleneck, rng);
    register_linear(store, prefix_ + "/excite1", bottleneck, wide, rng);
    register_linear(store, prefix_ + "/compress", wide, d, rng);
}

ad_::NodePtr SeFuseBlock::forward(ParameterStore& store, const std::vector<ad_::NodePtr>& z_list,
                                  SeFuseDebug* debug) const {
    if (z_list.empty()) throw std::invalid_argument("se_fuse: empty input list");
    if (static_cast<int>(z_list.size()) != n_inputs_) {
        throw std::invalid_argument("se_fuse: expected " + std::to_string(n_inputs_) +
                                    " inputs, got " + std::to_string(z_list.size()));
    }
    for (const auto& z : z_list) {
        if (z->value.cols() != d_) {
            throw std::invalid_argument("se_fuse: input width " +
                                        std::to_string(z->value.cols()) + " != " +
                                        std::to_string(d_));
        }
    }
    auto wide = z_list.size() == 1 ? z_list[0] : ad_::concat_cols(z_list);
    auto squeeze = ad_::mean_rows(wide);  // 1 x (d*L)
    auto hidden = ad_::relu(linear(store, prefix_ + "/excite0", squeeze));
    auto gates = ad_::sigmoid(linear(store, prefix_ + "/excite1", hidden));
    auto gated = ad_::mul_rowvec(wide, gates);
    if (debug) {
        debug->squeeze = squeeze->value;
        debug->gates = gates->value;
    }
    return linear(store, prefix_ + "/compress", gated);
}

}  // namespace corrlab
