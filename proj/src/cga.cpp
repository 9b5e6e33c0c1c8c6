#include "corrlab/cga.hpp"

#include <cmath>
#include <stdexcept>

namespace corrlab {

namespace ad_ = corrlab::ad;

CpaBlock::CpaBlock(ParameterStore& store, std::string prefix, int d, bool share_pos_encoders,
                   bool scale_geometric, Rng& rng)
    : prefix_(std::move(prefix)),
      d_(d),
      share_pos_encoders_(share_pos_encoders),
      scale_geometric_(scale_geometric) {
    for (const char* name : {"q", "k", "v"}) {
        const std::string p = prefix_ + "/" + name;
        register_linear(store, p + "/map", d, d, rng);
        register_channel_affine(store, p + "/bn", d);
    }
    register_linear(store, prefix_ + "/enc1/in", 2, d, rng);
    register_linear(store, prefix_ + "/enc1/out", d, d, rng);
    if (!share_pos_encoders_) {
        register_linear(store, prefix_ + "/enc2/in", 2, d, rng);
        register_linear(store, prefix_ + "/enc2/out", d, d, rng);
    }
}

ad_::NodePtr CpaBlock::projection(ParameterStore& store, const std::string& name,
                                  ad_::NodePtr f) const {
    const std::string p = prefix_ + "/" + name;
    auto h = linear(store, p + "/map", f);
    h = ad_::context_norm(h);
    h = channel_affine(store, p + "/bn", h);
    return ad_::relu(h);
}

ad_::NodePtr CpaBlock::encode(ParameterStore& store, const std::string& name,
                              ad_::NodePtr coords) const {
    const std::string p = prefix_ + "/" + name;
    auto h = ad_::relu(linear(store, p + "/in", coords));
    return linear(store, p + "/out", h);
}

ad_::NodePtr CpaBlock::forward(ParameterStore& store, ad_::NodePtr f, ad_::NodePtr p1,
                               ad_::NodePtr p2, CpaDebug* debug) const {
    if (f->value.rows() < 2) {
        throw std::invalid_argument("cpa_forward: needs at least 2 correspondences");
    }
    if (p1->value.rows() != f->value.rows() || p2->value.rows() != f->value.rows() ||
        p1->value.cols() != 2 || p2->value.cols() != 2) {
        throw std::invalid_argument("cpa_forward: coordinate shape mismatch");
    }
    auto q = projection(store, "q", f);
    auto k = projection(store, "k", f);
    auto v = projection(store, "v", f);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_));
    auto a_f = ad_::softmax_rows(ad_::scale(ad_::matmul(q, k, false, true), inv_sqrt_d));

    auto p_enc = ad_::add(encode(store, "enc1", p1),
                          encode(store, share_pos_encoders_ ? "enc1" : "enc2", p2));
    auto g_logits = ad_::matmul(q, p_enc, false, true);
    if (scale_geometric_) g_logits = ad_::scale(g_logits, inv_sqrt_d);
    auto a_g = ad_::softmax_rows(g_logits);

    if (debug) {
        debug->content_attention = a_f->value;
        debug->geometric_attention = a_g->value;
    }
    return ad_::matmul(ad_::add(a_g, a_f), v);
}

MbffnBlock::MbffnBlock(ParameterStore& store, std::string prefix, int d, Rng& rng)
    : prefix_(std::move(prefix)) {
    register_channel_affine(store, prefix_ + "/ln", d);
    for (const char* branch : {"id", "gap", "gmp"}) {
        const std::string p = prefix_ + "/" + branch;
        register_linear(store, p + "/conv0", d, d, rng);
        register_channel_affine(store, p + "/bn", d);
        register_linear(store, p + "/conv1", d, d, rng);
    }
}

ad_::NodePtr MbffnBlock::cbgc(ParameterStore& store, const std::string& name,
                              ad_::NodePtr x) const {
    const std::string p = prefix_ + "/" + name;
    auto h = linear(store, p + "/conv0", x);
    // Batch-style normalization runs over the correspondence axis; a pooled
    // single-row input has no such axis, so it standardizes over channels.
    h = h->value.rows() >= 2 ? ad_::context_norm(h) : ad_::layer_norm_rows(h);
    h = channel_affine(store, p + "/bn", h);
    h = ad_::gelu(h);
    return linear(store, p + "/conv1", h);
}

ad_::NodePtr MbffnBlock::forward(ParameterStore& store, ad_::NodePtr f) const {
    const int n = f->value.rows();
    auto ln = channel_affine(store, prefix_ + "/ln", ad_::layer_norm_rows(f));
    auto branch_id = cbgc(store, "id", ln);
    auto branch_gap = ad_::broadcast_rows(cbgc(store, "gap", ad_::mean_rows(ln)), n);
    auto branch_gmp = ad_::broadcast_rows(cbgc(store, "gmp", ad_::max_rows(ln)), n);
    return ad_::add(ad_::add(branch_gap, branch_gmp), branch_id);
}

}  // namespace corrlab
