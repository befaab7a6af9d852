#pragma once

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

// Soft similarity targets derived from patch-level feature agreement.
// Stages: Raw (means of per-row maxima of the patch similarity blocks),
// Softmaxed (temperature row-softmax), Scaled (each row divided by its
// diagonal entry, pinning the diagonal to exactly 1).
enum class WeightStage { Raw, Softmaxed, Scaled };

template <typename S>
struct WeightMatrix {
    Tensor<S> w;  // bs x bs
    double tau_w = 0.0;
    WeightStage stage = WeightStage::Raw;
};

// All patch-pair similarities between every image pair of the batch:
// G[i][j][k][t] = <f1[i,k,:], f2[j,t,:]>, shape bs x bs x n x n.
template <typename S>
Tensor<S> patch_cross_similarity(const Tensor<S>& f1, const Tensor<S>& f2) {
    if (f1.rank() != 3 || f2.rank() != 3 || f1.shape() != f2.shape())
        throw DimensionError(
            "patch_cross_similarity: feature shapes disagree: " +
            shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
    const int64_t bs = f1.dim(0), n = f1.dim(1), dm = f1.dim(2);
    Tensor<S> flat1 = reshape(f1, {bs * n, dm});
    Tensor<S> flat2 = reshape(f2, {bs * n, dm});
    Tensor<S> m = matmul(flat1, transpose(flat2));  // [(i,k), (j,t)]
    return permute(reshape(m, {bs, n, bs, n}), {0, 2, 1, 3});
}

// Raw weights: for each image pair, take the per-row maximum over the second
// view's patches, then the mean over the first view's patches.
template <typename S>
WeightMatrix<S> aggregate(const Tensor<S>& g) {
    if (g.rank() != 4 || g.dim(0) != g.dim(1) || g.dim(2) != g.dim(3))
        throw DimensionError("aggregate: expected [bs, bs, n, n], got " +
                             shape_str(g.shape()));
    WeightMatrix<S> out;
    out.w = reduce(reduce(g, 3, Reduce::Max), 2, Reduce::Mean);
    out.stage = WeightStage::Raw;
    return out;
}

// Temperature row-softmax, then scale each row by its own diagonal entry.
// Division (rather than multiplication by a reciprocal) keeps the diagonal
// exactly 1: every anchor is pinned as maximally similar to its own
// augmented view.
template <typename S>
WeightMatrix<S> normalize(const WeightMatrix<S>& raw, double tau_w) {
    if (raw.stage != WeightStage::Raw)
        throw ParameterError("normalize: weight matrix already normalized");
    if (tau_w <= 0.0)
        throw ParameterError("normalize: tau_w must be positive, got " +
                             std::to_string(tau_w));
    WeightMatrix<S> out;
    Tensor<S> sm = softmax_rows(raw.w, tau_w);
    out.w = div_rows(sm, diag_part(sm));
    out.tau_w = tau_w;
    out.stage = WeightStage::Scaled;
    return out;
}

// Value-identical copy cut out of the gradient graph; the default treatment
// of the targets before they reach the loss.
template <typename S>
WeightMatrix<S> detach_targets(const WeightMatrix<S>& wm) {
    WeightMatrix<S> out;
    out.w = wm.w.detach();
    out.tau_w = wm.tau_w;
    out.stage = wm.stage;
    return out;
}

// Full pipeline from refined features to scaled targets.
template <typename S>
WeightMatrix<S> weighted_labels(const Tensor<S>& f1, const Tensor<S>& f2,
                                double tau_w, bool detach = true) {
    WeightMatrix<S> w =
        normalize(aggregate(patch_cross_similarity(f1, f2)), tau_w);
    return detach ? detach_targets(w) : w;
}

// Hard one-hot targets: the identity matrix in the scaled stage, which turns
// the weighted objective into plain InfoNCE.
template <typename S>
WeightMatrix<S> identity_weights(int64_t bs) {
    if (bs < 1) throw ParameterError("identity_weights: batch must be >= 1");
    WeightMatrix<S> out;
    out.w = Tensor<S>::identity(bs);
    out.tau_w = 0.0;
    out.stage = WeightStage::Scaled;
    return out;
}

}  // namespace wch
