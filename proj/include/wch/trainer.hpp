#pragma once

// Training loop: two augmented views per batch, shared encoder, cross-view
// patch refinement, soft similarity targets, hash logits, weighted
// cross-entropy with code regularizers, Adam updates, checkpoints, and a
// retrieval evaluation over the query split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wch/common.hpp"
#include "wch/encoder.hpp"
#include "wch/losses.hpp"
#include "wch/mutual_attention.hpp"
#include "wch/optimizer.hpp"
#include "wch/retrieval.hpp"
#include "wch/synth.hpp"
#include "wch/tensor.hpp"
#include "wch/tensor_io.hpp"
#include "wch/weighted_labels.hpp"

namespace wch {

enum class LrSchedule { Constant, Cosine };

struct AblationFlags {
    bool ma_mean = false;       // replace cross-view attention by patch means
    bool hard_labels = false;   // identity targets (plain InfoNCE)
    bool no_scale = false;      // raw aggregated similarities as targets
    bool no_reg = false;        // drop both code regularizers
    bool detach_targets = true; // stop gradients through the target matrix
};

struct TrainConfig {
    int64_t batch_size = 32;
    int64_t epochs = 50;
    double learning_rate = 1e-3;
    LrSchedule lr_schedule = LrSchedule::Cosine;
    double tau = 0.5;
    double tau_w = 0.2;
    double lambda_q = 0.1;
    double lambda_b = 0.1;
    uint64_t seed = 0;
    AblationFlags ablations;
    EncoderConfig encoder;
    DataConfig data;
};

// Fills the derived encoder fields (patch grid, patch dimension, seed) from
// the data config and normalizes train_count = 0 to "everything trains".
inline TrainConfig resolve(TrainConfig cfg) {
    if (cfg.data.train_count == 0) cfg.data.train_count = cfg.data.count;
    if (cfg.data.patch_size > 0 && cfg.data.image_size > 0 &&
        cfg.data.image_size % cfg.data.patch_size == 0) {
        const int64_t per_side = cfg.data.image_size / cfg.data.patch_size;
        cfg.encoder.n_patches = per_side * per_side;
        cfg.encoder.patch_dim =
            cfg.data.patch_size * cfg.data.patch_size * cfg.data.channels;
    }
    cfg.encoder.seed = cfg.seed;
    return cfg;
}

inline void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 2)
        throw ConfigError("train.batch_size must be at least 2, got " +
                          std::to_string(cfg.batch_size));
    if (cfg.epochs < 1)
        throw ConfigError("train.epochs must be at least 1, got " +
                          std::to_string(cfg.epochs));
    if (cfg.learning_rate < 0.0)
        throw ConfigError("train.learning_rate must be >= 0");
    if (cfg.tau <= 0.0)
        throw ConfigError("train.tau must be positive");
    if (cfg.tau_w <= 0.0)
        throw ConfigError("train.tau_w must be positive");
    if (cfg.lambda_q < 0.0 || cfg.lambda_b < 0.0)
        throw ConfigError("train.lambda_q and train.lambda_b must be >= 0");
    if (cfg.data.train_count < 0 || cfg.data.train_count > cfg.data.count)
        throw ConfigError("data.train_count must lie in [0, data.count]");
    validate(cfg.data);
    validate(cfg.encoder);
}

// ------------------------------ JSON binding -------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const char* where,
                           std::initializer_list<const char*> keys) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : keys)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown field '" + item.key() +
                              "' in " + where);
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: field '") + key +
                          "' has the wrong type");
    }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(
        j, "training config",
        {"batch_size", "epochs", "learning_rate", "lr_schedule", "tau",
         "tau_w", "lambda_q", "lambda_b", "seed", "ablations", "encoder",
         "data"});
    TrainConfig cfg;
    detail::read_field(j, "batch_size", cfg.batch_size);
    detail::read_field(j, "epochs", cfg.epochs);
    detail::read_field(j, "learning_rate", cfg.learning_rate);
    if (j.contains("lr_schedule")) {
        std::string s;
        detail::read_field(j, "lr_schedule", s);
        if (s == "constant")
            cfg.lr_schedule = LrSchedule::Constant;
        else if (s == "cosine")
            cfg.lr_schedule = LrSchedule::Cosine;
        else
            throw ConfigError(
                "config: lr_schedule must be 'constant' or 'cosine', got '" +
                s + "'");
    }
    detail::read_field(j, "tau", cfg.tau);
    detail::read_field(j, "tau_w", cfg.tau_w);
    detail::read_field(j, "lambda_q", cfg.lambda_q);
    detail::read_field(j, "lambda_b", cfg.lambda_b);
    detail::read_field(j, "seed", cfg.seed);
    if (j.contains("ablations")) {
        const auto& a = j.at("ablations");
        detail::reject_unknown(a, "ablations",
                               {"ma_mean", "hard_labels", "no_scale",
                                "no_reg", "detach_targets"});
        detail::read_field(a, "ma_mean", cfg.ablations.ma_mean);
        detail::read_field(a, "hard_labels", cfg.ablations.hard_labels);
        detail::read_field(a, "no_scale", cfg.ablations.no_scale);
        detail::read_field(a, "no_reg", cfg.ablations.no_reg);
        detail::read_field(a, "detach_targets", cfg.ablations.detach_targets);
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        // patch grid, patch dimension, and seed are derived, not configured
        detail::reject_unknown(e, "encoder config",
                               {"model_dim", "n_layers", "n_heads",
                                "code_length", "freeze_position",
                                "ste_identity"});
        detail::read_field(e, "model_dim", cfg.encoder.model_dim);
        detail::read_field(e, "n_layers", cfg.encoder.n_layers);
        detail::read_field(e, "n_heads", cfg.encoder.n_heads);
        detail::read_field(e, "code_length", cfg.encoder.code_length);
        detail::read_field(e, "freeze_position", cfg.encoder.freeze_position);
        detail::read_field(e, "ste_identity", cfg.encoder.ste_identity);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, "data config",
                               {"seed", "count", "classes", "image_size",
                                "patch_size", "channels", "train_count"});
        detail::read_field(d, "seed", cfg.data.seed);
        detail::read_field(d, "count", cfg.data.count);
        detail::read_field(d, "classes", cfg.data.classes);
        detail::read_field(d, "image_size", cfg.data.image_size);
        detail::read_field(d, "patch_size", cfg.data.patch_size);
        detail::read_field(d, "channels", cfg.data.channels);
        detail::read_field(d, "train_count", cfg.data.train_count);
    }
    return cfg;
}

// Full echo of a resolved config; the exact bytes written as config.json.
inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["lr_schedule"] =
        cfg.lr_schedule == LrSchedule::Constant ? "constant" : "cosine";
    j["tau"] = cfg.tau;
    j["tau_w"] = cfg.tau_w;
    j["lambda_q"] = cfg.lambda_q;
    j["lambda_b"] = cfg.lambda_b;
    j["seed"] = cfg.seed;
    j["ablations"] = {{"ma_mean", cfg.ablations.ma_mean},
                      {"hard_labels", cfg.ablations.hard_labels},
                      {"no_scale", cfg.ablations.no_scale},
                      {"no_reg", cfg.ablations.no_reg},
                      {"detach_targets", cfg.ablations.detach_targets}};
    j["encoder"] = {{"model_dim", cfg.encoder.model_dim},
                    {"n_layers", cfg.encoder.n_layers},
                    {"n_heads", cfg.encoder.n_heads},
                    {"code_length", cfg.encoder.code_length},
                    {"freeze_position", cfg.encoder.freeze_position},
                    {"ste_identity", cfg.encoder.ste_identity}};
    j["data"] = {{"seed", cfg.data.seed},
                 {"count", cfg.data.count},
                 {"classes", cfg.data.classes},
                 {"image_size", cfg.data.image_size},
                 {"patch_size", cfg.data.patch_size},
                 {"channels", cfg.data.channels},
                 {"train_count", cfg.data.train_count}};
    return j;
}

// ------------------------------ checkpoints --------------------------------

struct CheckpointInfo {
    int64_t epoch = -1;
    int64_t global_step = 0;
    int64_t adam_steps = 0;
    nlohmann::json config;
};

template <typename S>
void save_checkpoint(const std::string& dir, Encoder<S>& enc,
                     const Adam<S>& adam, int64_t epoch, int64_t global_step,
                     const nlohmann::json& config_echo) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "params", ec);
    fs::create_directories(fs::path(dir) / "adam", ec);
    if (ec) throw IoError("save_checkpoint: cannot create " + dir);

    auto params = enc.params();
    nlohmann::json manifest;
    manifest["epoch"] = epoch;
    manifest["global_step"] = global_step;
    manifest["adam_steps"] = adam.steps();
    manifest["config"] = config_echo;
    std::vector<std::string> names;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        names.push_back(name);
        save_tensor((fs::path(dir) / "params" / (name + ".wtns")).string(),
                    *t);
        save_tensor((fs::path(dir) / "adam" / ("m." + name + ".wtns")).string(),
                    Tensor<S>::from(t->shape(), adam.first_moments()[i]));
        save_tensor((fs::path(dir) / "adam" / ("v." + name + ".wtns")).string(),
                    Tensor<S>::from(t->shape(), adam.second_moments()[i]));
    }
    manifest["params"] = names;
    std::ofstream f((fs::path(dir) / "manifest.json").string());
    if (!f) throw IoError("save_checkpoint: cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

template <typename S>
CheckpointInfo load_checkpoint(const std::string& dir, Encoder<S>& enc,
                               Adam<S>& adam) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream f(manifest_path);
    if (!f) throw IoError("load_checkpoint: cannot open " + manifest_path);
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_checkpoint: bad manifest: " +
                          std::string(e.what()));
    }
    CheckpointInfo info;
    detail::read_field(manifest, "epoch", info.epoch);
    detail::read_field(manifest, "global_step", info.global_step);
    detail::read_field(manifest, "adam_steps", info.adam_steps);
    if (manifest.contains("config")) info.config = manifest.at("config");

    auto params = enc.params();
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        auto loaded = load_tensor<S>(
            (fs::path(dir) / "params" / (name + ".wtns")).string());
        if (loaded.shape() != t->shape())
            throw FormatError("load_checkpoint: parameter " + name +
                              " has shape " + shape_str(loaded.shape()) +
                              ", expected " + shape_str(t->shape()));
        t->values() = loaded.values();
        auto m = load_tensor<S>(
            (fs::path(dir) / "adam" / ("m." + name + ".wtns")).string());
        auto v = load_tensor<S>(
            (fs::path(dir) / "adam" / ("v." + name + ".wtns")).string());
        if (m.shape() != t->shape() || v.shape() != t->shape())
            throw FormatError(
                "load_checkpoint: optimizer state shape mismatch for " + name);
        adam.first_moments()[i] = m.values();
        adam.second_moments()[i] = v.values();
    }
    adam.set_steps(info.adam_steps);
    return info;
}

// ------------------------------- run record --------------------------------

struct EpochSnapshot {
    int64_t epoch = 0;
    double map_at_snapshot_k = 0.0;  // truncated mAP on the query split
    int64_t snapshot_k = 0;
    std::string checkpoint;
};

struct RunRecord {
    std::vector<LossReport> losses;       // one per step, in step order
    std::vector<EpochSnapshot> snapshots; // one per epoch (when queries exist)
    Metrics final_metrics;                // full evaluation after training
    bool evaluated = false;
    std::string final_checkpoint;
    nlohmann::json config_echo;
};

// -------------------------------- trainer ----------------------------------

template <typename S>
class Trainer {
public:
    explicit Trainer(const TrainConfig& raw)
        : cfg_(resolve(raw)), enc_(Encoder<S>::init(cfg_.encoder)) {
        validate(cfg_);
        adam_.attach(enc_.params());
    }

    const TrainConfig& config() const { return cfg_; }
    Encoder<S>& encoder() { return enc_; }
    Adam<S>& optimizer() { return adam_; }
    int64_t global_step() const { return global_step_; }

    // One optimization step over two already-augmented, already-patchified
    // views of one mini-batch. The views are pure pixel tensors: nothing in
    // this path ever sees a label. Returns the step's loss report.
    LossReport train_step(const Tensor<S>& patches1, const Tensor<S>& patches2,
                          double lr) {
        if (patches1.rank() != 3 || patches1.shape() != patches2.shape())
            throw DimensionError("train_step: view shapes disagree: " +
                                 shape_str(patches1.shape()) + " vs " +
                                 shape_str(patches2.shape()));
        const int64_t bs = patches1.dim(0);
        auto params = enc_.params();
        for (auto& [name, t] : params) {
            (void)name;
            t->zero_grad();
        }

        Tensor<S> f1 = enc_.encode(patches1);
        Tensor<S> f2 = enc_.encode(patches2);
        MAResult<S> refined = cfg_.ablations.ma_mean
                                  ? ma_ablation_mean(f1, f2)
                                  : mutual_attend(f1, f2);

        Tensor<S> targets = build_targets(refined, bs);

        auto [codes1, pre1] = enc_.hash(refined.refined_view1);
        auto [codes2, pre2] = enc_.hash(refined.refined_view2);

        Tensor<S> wce =
            contrastive_with_targets(codes1, codes2, targets, cfg_.tau);
        const double lq = cfg_.ablations.no_reg ? 0.0 : cfg_.lambda_q;
        const double lb = cfg_.ablations.no_reg ? 0.0 : cfg_.lambda_b;
        auto [q1, b1] = regularizers(pre1, codes1, lq, lb);
        auto [q2, b2] = regularizers(pre2, codes2, lq, lb);
        LossTerms<S> terms =
            combine_losses(wce, scale(add(q1, q2), 0.5),
                           scale(add(b1, b2), 0.5), cfg_.tau);

        LossReport report = terms.report();
        if (!std::isfinite(report.total))
            throw NumericError("train_step " + std::to_string(global_step_) +
                               ": non-finite loss (wce=" +
                               std::to_string(report.wce) + ", quant=" +
                               std::to_string(report.quantization) +
                               ", balance=" +
                               std::to_string(report.bit_balance) + ")");
        terms.total.backward();
        adam_.step(lr);
        ++global_step_;
        return report;
    }

    // Augments every image twice with per-(step, image, view) seed streams
    // and patchifies both views. Exposed for tests; used by fit each step.
    std::pair<Tensor<S>, Tensor<S>> make_views(
        const std::vector<SynthImage>& batch, int64_t step) const {
        if (batch.empty()) throw ConfigError("make_views: empty batch");
        std::vector<SynthImage> v1, v2;
        v1.reserve(batch.size());
        v2.reserve(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            v1.push_back(augment(
                batch[i],
                seed_mix(cfg_.seed, 0xA060'0001ull,
                         static_cast<uint64_t>(step), i)));
            v2.push_back(augment(
                batch[i],
                seed_mix(cfg_.seed, 0xA060'0002ull,
                         static_cast<uint64_t>(step), i)));
        }
        return {patchify_batch<S>(v1, cfg_.data.patch_size),
                patchify_batch<S>(v2, cfg_.data.patch_size)};
    }

    double lr_at(int64_t step, int64_t total_steps) const {
        if (cfg_.lr_schedule == LrSchedule::Constant)
            return cfg_.learning_rate;
        return cosine_lr(cfg_.learning_rate, step, total_steps);
    }

    // Encodes a corpus to packed binary codes without touching gradients.
    CodeSet encode_corpus(const std::vector<SynthImage>& images,
                          int64_t chunk = 64) {
        if (images.empty())
            throw ConfigError("encode_corpus: empty corpus");
        NoGradGuard guard;
        auto all = Tensor<S>::zeros(
            {static_cast<int64_t>(images.size()), cfg_.encoder.code_length});
        for (size_t start = 0; start < images.size();
             start += static_cast<size_t>(chunk)) {
            const size_t stop =
                std::min(images.size(), start + static_cast<size_t>(chunk));
            std::vector<SynthImage> slice(images.begin() + start,
                                          images.begin() + stop);
            Tensor<S> patches =
                patchify_batch<S>(slice, cfg_.data.patch_size);
            auto [codes, pre] = enc_.hash(enc_.encode(patches));
            std::copy(codes.values().begin(), codes.values().end(),
                      all.values().begin() +
                          start * static_cast<size_t>(
                                      cfg_.encoder.code_length));
        }
        return pack(all);
    }

    // Retrieval evaluation: database = leading train slice, queries = rest,
    // relevance = label-set intersection.
    Metrics evaluate_split(const std::vector<SynthImage>& corpus,
                           const std::vector<int64_t>& ks) {
        const int64_t train_n = cfg_.data.train_count;
        if (train_n < 1 || train_n >= static_cast<int64_t>(corpus.size()))
            throw ConfigError(
                "evaluate_split: needs a non-empty train slice and a "
                "non-empty query remainder");
        CodeSet all = encode_corpus(corpus);
        CodeSet database, queries;
        database.count = train_n;
        database.code_length = all.code_length;
        queries.count = static_cast<int64_t>(corpus.size()) - train_n;
        queries.code_length = all.code_length;
        const int64_t bpc = all.bytes_per_code();
        database.packed.assign(all.packed.begin(),
                               all.packed.begin() + train_n * bpc);
        queries.packed.assign(all.packed.begin() + train_n * bpc,
                              all.packed.end());
        database.ids.resize(static_cast<size_t>(database.count));
        for (int64_t i = 0; i < database.count; ++i) database.ids[i] = i;
        queries.ids.resize(static_cast<size_t>(queries.count));
        for (int64_t i = 0; i < queries.count; ++i) queries.ids[i] = i;

        auto ranked = rank(queries, database, database.count);
        LabelSet labels = labels_of(corpus);
        auto relevance = relevance_lists(ranked, [&](int64_t q, int64_t id) {
            return labels.relevant(train_n + q, id);
        });
        std::vector<int64_t> valid_ks;
        for (int64_t k : ks)
            if (k >= 1 && k <= database.count) valid_ks.push_back(k);
        if (valid_ks.empty()) valid_ks.push_back(database.count);
        return evaluate(relevance, valid_ks);
    }

    // Full training run: seeded epoch shuffles, cosine or constant schedule,
    // a checkpoint plus retrieval snapshot per epoch, and JSON artifacts
    // (config.json, losses.jsonl, eval.json) under out_dir.
    RunRecord fit(const std::vector<SynthImage>& corpus,
                  const std::string& out_dir,
                  const std::string& resume_from = "") {
        namespace fs = std::filesystem;
        if (corpus.empty()) throw ConfigError("fit: empty dataset");
        const int64_t train_n = cfg_.data.train_count;
        if (train_n < 1 ||
            train_n > static_cast<int64_t>(corpus.size()))
            throw ConfigError("fit: data.train_count = " +
                              std::to_string(train_n) +
                              " does not fit the dataset of " +
                              std::to_string(corpus.size()) + " items");
        const bool has_queries =
            train_n < static_cast<int64_t>(corpus.size());
        const int64_t bs = cfg_.batch_size;
        const int64_t steps_per_epoch = (train_n + bs - 1) / bs;
        const int64_t total_steps = cfg_.epochs * steps_per_epoch;

        std::error_code ec;
        fs::create_directories(fs::path(out_dir) / "checkpoints", ec);
        if (ec) throw IoError("fit: cannot create output dir " + out_dir);

        RunRecord rec;
        rec.config_echo = train_config_to_json(cfg_);
        {
            std::ofstream f((fs::path(out_dir) / "config.json").string());
            if (!f) throw IoError("fit: cannot write config.json");
            f << rec.config_echo.dump(2) << "\n";
        }

        int64_t start_epoch = 0;
        if (!resume_from.empty()) {
            CheckpointInfo info =
                load_checkpoint<S>(resume_from, enc_, adam_);
            if (info.config != rec.config_echo)
                throw ConfigError(
                    "fit: checkpoint config does not match the current "
                    "config; refusing to resume");
            start_epoch = info.epoch + 1;
            global_step_ = info.global_step;
            if (start_epoch >= cfg_.epochs)
                throw ConfigError("fit: checkpoint already covers all " +
                                  std::to_string(cfg_.epochs) + " epochs");
        } else {
            global_step_ = 0;
        }

        std::ofstream losses_file(
            (fs::path(out_dir) / "losses.jsonl").string());
        if (!losses_file) throw IoError("fit: cannot write losses.jsonl");

        std::vector<int64_t> order(static_cast<size_t>(train_n));
        for (int64_t e = start_epoch; e < cfg_.epochs; ++e) {
            for (int64_t i = 0; i < train_n; ++i) order[i] = i;
            auto rng = make_rng(seed_mix(cfg_.seed, 0x0ED0'0000ull,
                                         static_cast<uint64_t>(e)));
            rng_shuffle(rng, order);
            for (int64_t s = 0; s < steps_per_epoch; ++s) {
                const int64_t lo = s * bs;
                const int64_t hi = std::min<int64_t>(lo + bs, train_n);
                std::vector<SynthImage> batch;
                batch.reserve(static_cast<size_t>(hi - lo));
                for (int64_t i = lo; i < hi; ++i)
                    batch.push_back(corpus[order[i]]);
                auto [v1, v2] = make_views(batch, global_step_);
                const double lr = lr_at(global_step_, total_steps);
                const int64_t step_index = global_step_;
                LossReport rep = train_step(v1, v2, lr);
                rec.losses.push_back(rep);
                nlohmann::json line;
                line["step"] = step_index;
                line["wce"] = rep.wce;
                line["quant"] = rep.quantization;
                line["balance"] = rep.bit_balance;
                line["total"] = rep.total;
                losses_file << line.dump() << "\n";
            }
            const std::string ckpt_dir =
                (fs::path(out_dir) / "checkpoints" /
                 ("epoch-" + std::to_string(e)))
                    .string();
            save_checkpoint(ckpt_dir, enc_, adam_, e, global_step_,
                            rec.config_echo);
            rec.final_checkpoint = ckpt_dir;
            if (has_queries) {
                EpochSnapshot snap;
                snap.epoch = e;
                snap.snapshot_k = std::min<int64_t>(100, train_n);
                Metrics m = evaluate_split(corpus, {snap.snapshot_k});
                snap.map_at_snapshot_k = m.map_at_k.at(snap.snapshot_k);
                snap.checkpoint = ckpt_dir;
                rec.snapshots.push_back(snap);
            }
        }
        losses_file.flush();
        if (!losses_file) throw IoError("fit: writing losses.jsonl failed");

        if (has_queries) {
            rec.final_metrics = evaluate_split(corpus, {1, 10, 100});
            rec.evaluated = true;
            std::ofstream f((fs::path(out_dir) / "eval.json").string());
            if (!f) throw IoError("fit: cannot write eval.json");
            f << metrics_to_json(rec.final_metrics).dump(2) << "\n";
        }
        return rec;
    }

    static nlohmann::json metrics_to_json(const Metrics& m) {
        nlohmann::json j;
        j["map"] = m.map;
        j["map_at_k"] = nlohmann::json::object();
        for (const auto& [k, v] : m.map_at_k)
            j["map_at_k"][std::to_string(k)] = v;
        j["p_at_k"] = nlohmann::json::object();
        for (const auto& [k, v] : m.p_at_k)
            j["p_at_k"][std::to_string(k)] = v;
        j["pr_curve"] = nlohmann::json::array();
        for (const auto& [r, p] : m.pr_curve)
            j["pr_curve"].push_back({r, p});
        j["excluded_queries"] = m.excluded_queries;
        return j;
    }

private:
    Tensor<S> build_targets(const MAResult<S>& refined, int64_t bs) {
        if (cfg_.ablations.hard_labels)
            return identity_weights<S>(bs).w;
        WeightMatrix<S> raw = aggregate(
            patch_cross_similarity(refined.refined_view1,
                                   refined.refined_view2));
        WeightMatrix<S> targets =
            cfg_.ablations.no_scale ? raw : normalize(raw, cfg_.tau_w);
        if (cfg_.ablations.detach_targets) targets = detach_targets(targets);
        return targets.w;
    }

    TrainConfig cfg_;
    Encoder<S> enc_;
    Adam<S> adam_;
    int64_t global_step_ = 0;
};

}  // namespace wch
