#pragma once

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

// Cross-view refinement of patch features. Both refined views and the raw
// patch-similarity matrix are kept: the similarities also feed the weighted
// label computation downstream.
template <typename S>
struct MAResult {
    Tensor<S> refined_view1;  // bs x n x d_m
    Tensor<S> refined_view2;  // bs x n x d_m
    Tensor<S> similarity;     // bs x n x n, raw dot products
};

namespace detail {

template <typename S>
void check_feature_pair(const Tensor<S>& f1, const Tensor<S>& f2,
                        const char* op) {
    if (f1.rank() != 3 || f2.rank() != 3 || f1.shape() != f2.shape())
        throw DimensionError(std::string(op) + ": feature shapes disagree: " +
                             shape_str(f1.shape()) + " vs " +
                             shape_str(f2.shape()));
}

}  // namespace detail

// Per image: sim[k][t] = <f1_k, f2_t>; each view is then re-mixed by the
// softmax of the similarities taken from the other view's perspective —
// row-softmax of sim^T re-weights view 1, row-softmax of sim re-weights
// view 2. Softmax temperature is fixed at 1. Raw dot products by default;
// unit_normalize pre-normalizes patch rows for stability experiments.
template <typename S>
MAResult<S> mutual_attend(const Tensor<S>& f1_in, const Tensor<S>& f2_in,
                          bool unit_normalize = false) {
    detail::check_feature_pair(f1_in, f2_in, "mutual_attend");
    Tensor<S> f1 = unit_normalize ? l2_normalize_rows(f1_in) : f1_in;
    Tensor<S> f2 = unit_normalize ? l2_normalize_rows(f2_in) : f2_in;
    Tensor<S> sim = bmm(f1, permute(f2, {0, 2, 1}));
    Tensor<S> mix2 = softmax_lastaxis(sim);                      // weights for view 2
    Tensor<S> mix1 = softmax_lastaxis(permute(sim, {0, 2, 1}));  // weights for view 1
    MAResult<S> out;
    out.refined_view1 = bmm(mix1, f1);
    out.refined_view2 = bmm(mix2, f2);
    out.similarity = sim;
    return out;
}

// Ablation stand-in: each view collapses to its per-image patch mean,
// broadcast back to n rows so downstream shapes are unchanged.
template <typename S>
MAResult<S> ma_ablation_mean(const Tensor<S>& f1, const Tensor<S>& f2) {
    detail::check_feature_pair(f1, f2, "ma_ablation_mean");
    const int64_t bs = f1.dim(0), n = f1.dim(1), dm = f1.dim(2);
    Tensor<S> ones = Tensor<S>::full({bs, n, 1}, S(1));
    auto broadcast_mean = [&](const Tensor<S>& f) {
        return bmm(ones, reshape(reduce(f, 1, Reduce::Mean), {bs, 1, dm}));
    };
    MAResult<S> out;
    out.refined_view1 = broadcast_mean(f1);
    out.refined_view2 = broadcast_mean(f2);
    out.similarity = bmm(f1, permute(f2, {0, 2, 1}));
    return out;
}

}  // namespace wch
