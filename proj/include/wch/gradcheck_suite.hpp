#pragma once

// Named gradient verification suites, shared by the command-line
// `gradcheck` command and the acceptance harness. Each suite checks a
// family of differentiable operations against Richardson-extrapolated
// central differences; primitives are gated at 1e-6, composed graphs at
// 1e-5. The sign surrogate is checked against its own definition (the
// forward pass is a step function, so finite differences do not apply).

#include <functional>
#include <string>
#include <vector>

#include "wch/encoder.hpp"
#include "wch/grad_check.hpp"
#include "wch/losses.hpp"
#include "wch/mutual_attention.hpp"
#include "wch/tensor.hpp"
#include "wch/weighted_labels.hpp"

namespace wch {

struct GradCase {
    std::string name;
    double tolerance = 0.0;
    double max_rel_err = 0.0;
    bool passed = false;
};

struct GradSuiteResult {
    std::string module;
    std::vector<GradCase> cases;

    bool passed() const {
        for (const auto& c : cases)
            if (!c.passed) return false;
        return true;
    }
};

namespace gradsuite_detail {

using Td = Tensor<double>;
using Fn = std::function<Td(const std::vector<Td>&)>;

inline Td rnd(Shape shape, uint64_t seed, double sigma = 1.0) {
    auto rng = make_rng(seed_mix(0x6C4D, seed));
    auto t = Td::randn(std::move(shape), rng, sigma);
    t.set_requires_grad(true);
    return t;
}

// Fixed-coefficient readout keeps upstream gradients non-uniform.
inline Td readout(const Td& t, uint64_t seed) {
    auto rng = make_rng(seed_mix(0x6C4E, seed));
    Td coeff = Td::randn(t.shape(), rng);
    return sum_all(mul(t, coeff));
}

inline void run_case(GradSuiteResult& suite, const std::string& name,
                     double tol, const Fn& f, std::vector<Td> inputs,
                     double eps = 1e-4) {
    GradCheckResult res = grad_check(f, std::move(inputs), eps);
    suite.cases.push_back({name, tol, res.max_rel_err, res.max_rel_err < tol});
}

inline GradSuiteResult tensor_suite() {
    GradSuiteResult suite{"tensor", {}};
    const double tol = 1e-6;

    {
        auto a = rnd({3, 4}, 1), b = rnd({4, 5}, 2);
        run_case(suite, "matmul", tol,
                 [&](const std::vector<Td>&) {
                     return readout(matmul(a, b), 3);
                 },
                 {a, b});
    }
    {
        auto a = rnd({2, 3, 4}, 4), b = rnd({2, 4, 3}, 5);
        run_case(suite, "bmm", tol,
                 [&](const std::vector<Td>&) {
                     return readout(bmm(a, b), 6);
                 },
                 {a, b});
    }
    {
        auto a = rnd({3, 5}, 7);
        run_case(suite, "transpose", tol,
                 [&](const std::vector<Td>&) {
                     return readout(transpose(a), 8);
                 },
                 {a});
    }
    {
        auto a = rnd({2, 3, 4, 2}, 9);
        run_case(suite, "permute", tol,
                 [&](const std::vector<Td>&) {
                     return readout(permute(a, {0, 2, 1, 3}), 10);
                 },
                 {a});
    }
    {
        auto a = rnd({3, 8}, 11);
        run_case(suite, "reshape", tol,
                 [&](const std::vector<Td>&) {
                     return readout(reshape(a, {6, 4}), 12);
                 },
                 {a});
    }
    {
        auto a = rnd({4, 3}, 13), b = rnd({4, 3}, 14);
        run_case(suite, "add", tol,
                 [&](const std::vector<Td>&) {
                     return readout(add(a, b), 15);
                 },
                 {a, b});
        run_case(suite, "sub", tol,
                 [&](const std::vector<Td>&) {
                     return readout(sub(a, b), 16);
                 },
                 {a, b});
        run_case(suite, "mul", tol,
                 [&](const std::vector<Td>&) {
                     return readout(mul(a, b), 17);
                 },
                 {a, b});
        run_case(suite, "scale", tol,
                 [&](const std::vector<Td>&) {
                     return readout(scale(a, -1.7), 18);
                 },
                 {a});
    }
    {
        auto a = rnd({4, 6}, 19), b = rnd({6}, 20);
        run_case(suite, "add_bias", tol,
                 [&](const std::vector<Td>&) {
                     return readout(add_bias(a, b), 21);
                 },
                 {a, b});
    }
    {
        auto a = rnd({3, 4, 5}, 22), p = rnd({4, 5}, 23);
        run_case(suite, "add_position", tol,
                 [&](const std::vector<Td>&) {
                     return readout(add_position(a, p), 24);
                 },
                 {a, p});
    }
    {
        auto a = rnd({2, 3, 5}, 25);
        run_case(suite, "softmax_lastaxis", tol,
                 [&](const std::vector<Td>&) {
                     return readout(softmax_lastaxis(a, 0.7), 26);
                 },
                 {a});
    }
    {
        auto a = rnd({4, 5}, 27);
        run_case(suite, "softmax_rows", tol,
                 [&](const std::vector<Td>&) {
                     return readout(softmax_rows(a, 0.4), 28);
                 },
                 {a});
        run_case(suite, "log_softmax_rows", tol,
                 [&](const std::vector<Td>&) {
                     return readout(log_softmax_rows(a), 29);
                 },
                 {a});
    }
    {
        auto a = rnd({3, 4, 5}, 30);
        run_case(suite, "reduce_mean", tol,
                 [&](const std::vector<Td>&) {
                     return readout(reduce(a, 1, Reduce::Mean), 31);
                 },
                 {a});
        run_case(suite, "reduce_sum", tol,
                 [&](const std::vector<Td>&) {
                     return readout(reduce(a, 2, Reduce::Sum), 32);
                 },
                 {a});
        run_case(suite, "reduce_max", tol,
                 [&](const std::vector<Td>&) {
                     return readout(reduce(a, 2, Reduce::Max), 33);
                 },
                 {a});
        run_case(suite, "sum_all", tol,
                 [&](const std::vector<Td>&) { return sum_all(a); }, {a});
        run_case(suite, "mean_all", tol,
                 [&](const std::vector<Td>&) {
                     return scale(mean_all(a), 3.1);
                 },
                 {a});
    }
    {
        auto a = rnd({2, 4, 6}, 34);
        auto g = rnd({6}, 35, 0.3);
        auto b = rnd({6}, 36, 0.3);
        run_case(suite, "layer_norm", tol,
                 [&](const std::vector<Td>&) {
                     return readout(layer_norm(a, g, b), 37);
                 },
                 {a, g, b});
    }
    {
        auto a = rnd({4, 5}, 38);
        run_case(suite, "gelu", tol,
                 [&](const std::vector<Td>&) {
                     return readout(gelu(a), 39);
                 },
                 {a});
    }
    {
        // keep denominators away from zero for a clean finite difference
        auto raw = rnd({4, 4}, 40, 0.5);
        run_case(suite, "div_rows", tol,
                 [&](const std::vector<Td>&) {
                     auto sm = softmax_rows(raw, 0.5);
                     return readout(div_rows(sm, diag_part(sm)), 41);
                 },
                 {raw});
    }
    {
        auto a = rnd({5, 5}, 42);
        run_case(suite, "diag_part", tol,
                 [&](const std::vector<Td>&) {
                     return readout(diag_part(a), 43);
                 },
                 {a});
    }
    {
        auto a = rnd({3, 6}, 44);
        run_case(suite, "l2_normalize_rows", tol,
                 [&](const std::vector<Td>&) {
                     return readout(l2_normalize_rows(a), 45);
                 },
                 {a});
    }
    {
        // The sign surrogate: forward is a step function, so it is checked
        // against its own backward definition instead of finite differences.
        auto pre = Td::from({2, 4}, {0.4, -1.6, 0.9, -0.2,
                                     1.4, -0.7, 2.3, 0.1});
        pre.set_requires_grad(true);
        auto up = Td::from({2, 4}, {1.0, 2.0, -1.0, 0.5,
                                    -2.0, 0.25, 3.0, -0.75});
        double worst_clip = 0.0, worst_id = 0.0;
        {
            pre.zero_grad();
            sum_all(mul(ste_sign(pre, SteMode::Clipped), up)).backward();
            const auto& g = pre.grad();
            for (size_t i = 0; i < g.size(); ++i) {
                const double expect =
                    std::abs(pre.values()[i]) <= 1.0 ? up.values()[i] : 0.0;
                worst_clip = std::max(worst_clip, std::abs(g[i] - expect));
            }
        }
        {
            pre.zero_grad();
            sum_all(mul(ste_sign(pre, SteMode::Identity), up)).backward();
            const auto& g = pre.grad();
            for (size_t i = 0; i < g.size(); ++i)
                worst_id =
                    std::max(worst_id, std::abs(g[i] - up.values()[i]));
        }
        suite.cases.push_back({"ste_sign_clipped_surrogate", 1e-12,
                               worst_clip, worst_clip < 1e-12});
        suite.cases.push_back({"ste_sign_identity_surrogate", 1e-12,
                               worst_id, worst_id < 1e-12});
    }
    return suite;
}

inline GradSuiteResult encoder_suite() {
    GradSuiteResult suite{"encoder", {}};
    const double tol = 1e-5;
    EncoderConfig cfg;
    cfg.n_patches = 4;
    cfg.patch_dim = 6;
    cfg.model_dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.code_length = 4;
    cfg.seed = 77;
    auto enc = Encoder<double>::init(cfg);
    auto patches = rnd({2, 4, 6}, 50, 0.5);
    {
        run_case(suite, "encode_wrt_input", tol,
                 [&](const std::vector<Td>&) {
                     return readout(enc.encode(patches), 51);
                 },
                 {patches});
    }
    {
        std::vector<Td> weight_inputs;
        for (auto& [name, t] : enc.params()) weight_inputs.push_back(*t);
        run_case(suite, "encode_wrt_parameters", tol,
                 [&](const std::vector<Td>&) {
                     return readout(enc.encode(patches), 52);
                 },
                 std::move(weight_inputs));
    }
    {
        // pooled pre-binarization activations (the smooth half of hashing)
        run_case(suite, "pooled_pre_codes", tol,
                 [&](const std::vector<Td>&) {
                     auto pooled = reduce(enc.encode(patches), 1, Reduce::Mean);
                     return readout(add_bias(matmul(pooled, enc.head_w),
                                             enc.head_b),
                                    53);
                 },
                 {patches, enc.head_w, enc.head_b});
    }
    return suite;
}

inline GradSuiteResult mutual_attention_suite() {
    GradSuiteResult suite{"mutual_attention", {}};
    const double tol = 1e-5;
    auto f1 = rnd({2, 4, 6}, 60, 0.7), f2 = rnd({2, 4, 6}, 61, 0.7);
    run_case(suite, "refined_views", tol,
             [&](const std::vector<Td>&) {
                 auto r = mutual_attend(f1, f2);
                 return add(readout(r.refined_view1, 62),
                            readout(r.refined_view2, 63));
             },
             {f1, f2});
    run_case(suite, "mean_replacement", tol,
             [&](const std::vector<Td>&) {
                 auto r = ma_ablation_mean(f1, f2);
                 return add(readout(r.refined_view1, 64),
                            readout(r.refined_view2, 65));
             },
             {f1, f2});
    return suite;
}

inline GradSuiteResult weighted_labels_suite() {
    GradSuiteResult suite{"weighted_labels", {}};
    const double tol = 1e-5;
    auto f1 = rnd({3, 3, 5}, 70, 0.6), f2 = rnd({3, 3, 5}, 71, 0.6);
    run_case(suite, "scaled_weights", tol,
             [&](const std::vector<Td>&) {
                 auto w = weighted_labels(f1, f2, 0.5, /*detach=*/false);
                 return readout(w.w, 72);
             },
             {f1, f2});
    run_case(suite, "raw_aggregate", tol,
             [&](const std::vector<Td>&) {
                 auto g = patch_cross_similarity(f1, f2);
                 return readout(aggregate(g).w, 73);
             },
             {f1, f2});
    return suite;
}

inline GradSuiteResult losses_suite() {
    GradSuiteResult suite{"losses", {}};
    const double tol = 1e-5;
    // identity-code harness: feed the smooth pre-activations through the
    // full objective so finite differences apply end to end
    auto pre1 = rnd({3, 6}, 80, 0.8), pre2 = rnd({3, 6}, 81, 0.8);
    auto mk_signs = [](Shape shape, uint64_t seed) {
        auto rng = make_rng(seed_mix(0x6C51, seed));
        Td t = Td::randn(std::move(shape), rng);
        auto& v = t.values();
        for (auto& x : v) x = x >= 0 ? 1.0 : -1.0;
        return t;
    };
    auto c1 = mk_signs({3, 6}, 82), c2 = mk_signs({3, 6}, 83);
    auto tgt_f1 = rnd({3, 2, 4}, 84, 0.5), tgt_f2 = rnd({3, 2, 4}, 85, 0.5);
    Td targets;
    {
        NoGradGuard guard;
        targets = weighted_labels(tgt_f1, tgt_f2, 0.5).w;
    }
    run_case(suite, "weighted_objective", tol,
             [&](const std::vector<Td>&) {
                 return contrastive_with_targets(pre1, pre2, targets, 0.5);
             },
             {pre1, pre2});
    run_case(suite, "regularizers", tol,
             [&](const std::vector<Td>&) {
                 auto [q, b] = regularizers(pre1, c1, 0.1, 0.1);
                 return add(q, b);
             },
             {pre1});
    run_case(suite, "combined_total", tol,
             [&](const std::vector<Td>&) {
                 auto wce = contrastive_with_targets(pre1, pre2, targets, 0.5);
                 auto [q1, b1] = regularizers(pre1, c1, 0.1, 0.1);
                 auto [q2, b2] = regularizers(pre2, c2, 0.1, 0.1);
                 return combine_losses(wce, scale(add(q1, q2), 0.5),
                                       scale(add(b1, b2), 0.5), 0.5)
                     .total;
             },
             {pre1, pre2});
    // live (non-detached) targets: gradients flow through the weight matrix
    run_case(suite, "live_target_objective", tol,
             [&](const std::vector<Td>&) {
                 auto w = weighted_labels(tgt_f1, tgt_f2, 0.5,
                                          /*detach=*/false);
                 return weighted_contrastive(pre1, pre2, w, 0.5);
             },
             {pre1, pre2, tgt_f1, tgt_f2});
    return suite;
}

}  // namespace gradsuite_detail

inline std::vector<std::string> gradcheck_modules() {
    return {"tensor", "encoder", "mutual_attention", "weighted_labels",
            "losses"};
}

inline GradSuiteResult run_gradcheck_module(const std::string& name) {
    using namespace gradsuite_detail;
    if (name == "tensor") return tensor_suite();
    if (name == "encoder") return encoder_suite();
    if (name == "mutual_attention") return mutual_attention_suite();
    if (name == "weighted_labels") return weighted_labels_suite();
    if (name == "losses") return losses_suite();
    throw ConfigError("unknown gradcheck module '" + name +
                      "' (expected all, tensor, encoder, mutual_attention, "
                      "weighted_labels, or losses)");
}

inline std::vector<GradSuiteResult> run_gradcheck(const std::string& which) {
    std::vector<GradSuiteResult> out;
    if (which == "all") {
        for (const auto& m : gradcheck_modules())
            out.push_back(run_gradcheck_module(m));
    } else {
        out.push_back(run_gradcheck_module(which));
    }
    return out;
}

}  // namespace wch
