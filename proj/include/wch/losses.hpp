#pragma once

// Training objective: a similarity-weighted contrastive cross-entropy over
// hash logits, plus two code regularizers (quantization pull toward +-1 and
// per-bit batch balance).

#include <utility>

#include "wch/tensor.hpp"
#include "wch/weighted_labels.hpp"

namespace wch {

// Plain-number snapshot of one step's loss terms, for logging.
struct LossReport {
    double total = 0.0;
    double wce = 0.0;
    double quantization = 0.0;
    double bit_balance = 0.0;
    double tau = 0.0;
};

// Graph-attached loss terms; `total` is the node to backpropagate.
template <typename S>
struct LossTerms {
    Tensor<S> total, wce, quantization, bit_balance;
    double tau = 0.0;

    LossReport report() const {
        LossReport r;
        r.total = static_cast<double>(total.item());
        r.wce = static_cast<double>(wce.item());
        r.quantization = static_cast<double>(quantization.item());
        r.bit_balance = static_cast<double>(bit_balance.item());
        r.tau = tau;
        return r;
    }
};

// Contrastive cross-entropy against an arbitrary target matrix.
// logits[i][j] = <b1_i, b2_j> / (l * tau); the loss is
// -(1/bs) * sum_ij targets[i][j] * log softmax_j(logits[i]).
// This is the core used by every target variant, including the ablation that
// feeds unnormalized similarity aggregates straight in.
template <typename S>
Tensor<S> contrastive_with_targets(const Tensor<S>& b1, const Tensor<S>& b2,
                                   const Tensor<S>& targets, double tau) {
    if (tau <= 0.0)
        throw ParameterError(
            "contrastive loss: temperature must be positive, got " +
            std::to_string(tau));
    if (b1.rank() != 2 || b1.shape() != b2.shape())
        throw DimensionError("contrastive loss: code shapes disagree: " +
                             shape_str(b1.shape()) + " vs " +
                             shape_str(b2.shape()));
    const int64_t bs = b1.dim(0), l = b1.dim(1);
    if (targets.rank() != 2 || targets.dim(0) != bs || targets.dim(1) != bs)
        throw DimensionError("contrastive loss: target matrix " +
                             shape_str(targets.shape()) +
                             " does not match batch " + std::to_string(bs));
    Tensor<S> logits =
        scale(matmul(b1, transpose(b2)), 1.0 / (static_cast<double>(l) * tau));
    Tensor<S> log_probs = log_softmax_rows(logits);
    return scale(sum_all(mul(targets, log_probs)),
                 -1.0 / static_cast<double>(bs));
}

// Weighted contrastive cross-entropy between two views' codes, with the
// target discipline enforced: the weight matrix must be in the scaled stage
// (diagonal pinned to 1). With W = identity this is exactly standard InfoNCE.
template <typename S>
Tensor<S> weighted_contrastive(const Tensor<S>& b1, const Tensor<S>& b2,
                               const WeightMatrix<S>& w, double tau) {
    if (w.stage != WeightStage::Scaled)
        throw ParameterError(
            "weighted_contrastive: weight matrix must be in the scaled stage");
    return contrastive_with_targets(b1, b2, w.w, tau);
}

// Code regularizers for one view.
//   quantization = lambda_q * mean over entries of (pre - codes)^2,
//                  which for codes = sign(pre) equals (|pre| - 1)^2;
//   bit_balance  = lambda_b * mean over bits of (per-bit batch mean of pre)^2.
// `codes` is treated as data: no gradient flows into it from here.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> regularizers(const Tensor<S>& pre,
                                             const Tensor<S>& codes,
                                             double lambda_q,
                                             double lambda_b) {
    if (pre.rank() != 2 || pre.shape() != codes.shape())
        throw DimensionError("regularizers: shapes disagree: " +
                             shape_str(pre.shape()) + " vs " +
                             shape_str(codes.shape()));
    if (lambda_q < 0.0 || lambda_b < 0.0)
        throw ParameterError("regularizers: coefficients must be >= 0");
    Tensor<S> gap = sub(pre, codes.detach());
    Tensor<S> quant = scale(mean_all(mul(gap, gap)), lambda_q);
    Tensor<S> per_bit_mean = reduce(pre, 0, Reduce::Mean);
    Tensor<S> balance =
        scale(mean_all(mul(per_bit_mean, per_bit_mean)), lambda_b);
    return {quant, balance};
}

// Sums the terms into the full objective.
template <typename S>
LossTerms<S> combine_losses(Tensor<S> wce, Tensor<S> quantization,
                            Tensor<S> bit_balance, double tau) {
    LossTerms<S> out;
    out.total = add(wce, add(quantization, bit_balance));
    out.wce = std::move(wce);
    out.quantization = std::move(quantization);
    out.bit_balance = std::move(bit_balance);
    out.tau = tau;
    return out;
}

}  // namespace wch
