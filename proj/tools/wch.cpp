// Command-line front end: dataset generation, training, encoding,
// indexing, querying, retrieval evaluation, gradient verification, and
// the ablation comparison table. Every command that produces artifacts
// also writes a JSON echo of its effective configuration so runs are
// reproducible from their outputs alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "wch/gradcheck_suite.hpp"
#include "wch/retrieval.hpp"
#include "wch/synth.hpp"
#include "wch/tensor_io.hpp"
#include "wch/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw wch::IoError("cannot write " + path);
    f << j.dump(2) << "\n";
    if (!f) throw wch::IoError("write failed for " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw wch::IoError("cannot read " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw wch::FormatError("malformed JSON in " + path + ": " + e.what());
    }
}

// Echo for commands whose --out is a single file: written alongside it.
void write_flag_echo(const std::string& out_path, const json& flags) {
    write_json_file(out_path + ".config.json", flags);
}

std::vector<int64_t> parse_k_list(const std::string& text) {
    std::vector<int64_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 1)
                throw std::invalid_argument(item);
            ks.push_back(v);
        } catch (const std::exception&) {
            throw wch::ConfigError("--k expects positive integers separated "
                                   "by commas, got '" + text + "'");
        }
    }
    if (ks.empty())
        throw wch::ConfigError("--k expects at least one cutoff");
    return ks;
}

// ------------------------------- gen-data ----------------------------------

int cmd_gen_data(uint64_t seed, int64_t count, int64_t classes,
                 int64_t image_size, int64_t patch_size, int64_t channels,
                 int64_t train_count, const std::string& out) {
    wch::DataConfig cfg;
    cfg.seed = seed;
    cfg.count = count;
    cfg.classes = classes;
    cfg.image_size = image_size;
    cfg.patch_size = patch_size;
    cfg.channels = channels;
    cfg.train_count = train_count;
    wch::validate(cfg);

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw wch::IoError("cannot create output dir " + out);

    auto images = wch::generate(cfg);
    wch::LabelSet labels = wch::labels_of(images);
    wch::save_tensor((fs::path(out) / "pixels.wtns").string(),
                     wch::pixels_tensor<double>(images));
    wch::save_labels((fs::path(out) / "labels.wlbl").string(), labels);

    std::vector<int64_t> histogram(static_cast<size_t>(classes), 0);
    int64_t multi = 0;
    for (int64_t i = 0; i < labels.count; ++i) {
        int64_t cardinality = 0;
        for (int64_t c = 0; c < classes; ++c)
            if (labels.get(i, c)) {
                ++histogram[static_cast<size_t>(c)];
                ++cardinality;
            }
        multi += cardinality > 1;
    }

    json echo = {{"command", "gen-data"},
                 {"seed", seed},
                 {"count", count},
                 {"classes", classes},
                 {"image_size", image_size},
                 {"patch_size", patch_size},
                 {"channels", channels},
                 {"train_count", train_count}};
    write_json_file((fs::path(out) / "config.json").string(), echo);
    json summary = {{"count", count},
                    {"classes", classes},
                    {"multi_label_images", multi},
                    {"class_histogram", histogram}};
    write_json_file((fs::path(out) / "summary.json").string(), summary);

    std::printf("wrote %lld images (%lld classes) to %s\n",
                (long long)count, (long long)classes, out.c_str());
    for (int64_t c = 0; c < classes; ++c)
        std::printf("  class %lld: %lld images\n", (long long)c,
                    (long long)histogram[static_cast<size_t>(c)]);
    std::printf("  multi-label images: %lld\n", (long long)multi);
    return kExitOk;
}

// ------------------------------- datasets ----------------------------------

std::vector<wch::SynthImage> load_dataset(const std::string& dir) {
    auto pixels =
        wch::load_tensor<double>((fs::path(dir) / "pixels.wtns").string());
    auto labels =
        wch::load_labels((fs::path(dir) / "labels.wlbl").string());
    return wch::images_from_tensor(pixels, labels);
}

// --------------------------------- train -----------------------------------

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& resume) {
    wch::TrainConfig cfg =
        wch::train_config_from_json(read_json_file(config_path));
    wch::Trainer<double> trainer(cfg);
    auto corpus = wch::generate(trainer.config().data);
    wch::RunRecord rec = trainer.fit(corpus, out, resume);

    std::printf("trained %lld steps (%lld epochs)\n",
                (long long)trainer.global_step(),
                (long long)trainer.config().epochs);
    if (!rec.losses.empty())
        std::printf("final loss %.6f\n", rec.losses.back().total);
    for (const auto& s : rec.snapshots)
        std::printf("  epoch %lld: retrieval@%lld %.4f\n", (long long)s.epoch,
                    (long long)s.snapshot_k, s.map_at_snapshot_k);
    if (rec.evaluated)
        std::printf("final mean average precision %.4f\n",
                    rec.final_metrics.map);
    return kExitOk;
}

// --------------------------------- encode ----------------------------------

int cmd_encode(const std::string& checkpoint, const std::string& data,
               const std::string& out) {
    json manifest =
        read_json_file((fs::path(checkpoint) / "manifest.json").string());
    if (!manifest.contains("config"))
        throw wch::FormatError("manifest.json has no config block in " +
                               checkpoint);
    wch::TrainConfig cfg = wch::train_config_from_json(manifest["config"]);
    wch::Trainer<double> trainer(cfg);
    wch::load_checkpoint<double>(checkpoint, trainer.encoder(),
                                 trainer.optimizer());

    auto images = load_dataset(data);
    wch::CodeSet codes = trainer.encode_corpus(images);
    wch::save_codes(out, codes);
    write_flag_echo(out, {{"command", "encode"},
                          {"checkpoint", checkpoint},
                          {"data", data},
                          {"out", out}});
    std::printf("encoded %lld items at %lld bits -> %s\n",
                (long long)codes.count, (long long)codes.code_length,
                out.c_str());
    return kExitOk;
}

// ---------------------------------- index ----------------------------------

int cmd_index(const std::string& codes_path, int64_t from, int64_t to,
              const std::string& out) {
    wch::CodeSet codes = wch::load_codes(codes_path);
    if (to == 0) to = codes.count;
    if (from < 0 || from >= to || to > codes.count)
        throw wch::ConfigError(
            "--from/--to must select a non-empty row range within " +
            std::to_string(codes.count) + " codes, got [" +
            std::to_string(from) + ", " + std::to_string(to) + ")");
    wch::CodeSet slice;
    slice.code_length = codes.code_length;
    slice.count = to - from;
    const int64_t bpc = codes.bytes_per_code();
    slice.packed.assign(codes.packed.begin() + from * bpc,
                        codes.packed.begin() + to * bpc);
    slice.ids.assign(codes.ids.begin() + from, codes.ids.begin() + to);
    wch::save_codes(out, slice);
    write_flag_echo(out, {{"command", "index"},
                          {"codes", codes_path},
                          {"from", from},
                          {"to", to},
                          {"out", out}});
    std::printf("indexed %lld codes (%lld bits) -> %s\n",
                (long long)slice.count, (long long)slice.code_length,
                out.c_str());
    return kExitOk;
}

// ---------------------------------- query ----------------------------------

int cmd_query(const std::string& queries_path, const std::string& db_path,
              int64_t k, const std::string& out) {
    wch::CodeSet queries = wch::load_codes(queries_path);
    wch::CodeSet database = wch::load_codes(db_path);
    auto ranked = wch::rank(queries, database, k);

    json results = json::array();
    for (size_t q = 0; q < ranked.size(); ++q)
        results.push_back({{"query", q},
                           {"ids", ranked[q].ids},
                           {"distances", ranked[q].distances}});
    json payload = {{"k", k}, {"results", results}};
    if (!out.empty()) {
        write_json_file(out, payload);
        write_flag_echo(out, {{"command", "query"},
                              {"queries", queries_path},
                              {"database", db_path},
                              {"k", k},
                              {"out", out}});
    }
    const size_t shown = std::min<size_t>(ranked.size(), 5);
    for (size_t q = 0; q < shown; ++q) {
        std::printf("query %zu:", q);
        for (size_t i = 0; i < ranked[q].ids.size(); ++i)
            std::printf(" %lld(%lld)", (long long)ranked[q].ids[i],
                        (long long)ranked[q].distances[i]);
        std::printf("\n");
    }
    if (ranked.size() > shown)
        std::printf("... %zu more queries\n", ranked.size() - shown);
    return kExitOk;
}

// ----------------------------------- eval ----------------------------------

int cmd_eval(const std::string& queries_path, const std::string& db_path,
             const std::string& labels_path, const std::string& k_text,
             const std::string& out) {
    wch::CodeSet queries = wch::load_codes(queries_path);
    wch::CodeSet database = wch::load_codes(db_path);
    wch::LabelSet labels = wch::load_labels(labels_path);
    if (labels.count != database.count + queries.count)
        throw wch::ConfigError(
            "labels cover " + std::to_string(labels.count) +
            " items but database+queries hold " +
            std::to_string(database.count + queries.count) +
            " (expected database rows first, then query rows)");

    auto ranked = wch::rank(queries, database, database.count);
    auto relevance =
        wch::relevance_lists(ranked, [&](int64_t q, int64_t id) {
            return labels.relevant(database.count + q, id);
        });
    std::vector<int64_t> ks;
    for (int64_t k : parse_k_list(k_text))
        if (k <= database.count) ks.push_back(k);
    if (ks.empty())
        throw wch::ConfigError("--k has no cutoff within the database size " +
                               std::to_string(database.count));
    wch::Metrics metrics = wch::evaluate(relevance, ks);

    write_json_file(out, wch::Trainer<double>::metrics_to_json(metrics));
    write_flag_echo(out, {{"command", "eval"},
                          {"queries", queries_path},
                          {"database", db_path},
                          {"labels", labels_path},
                          {"k", k_text},
                          {"out", out}});
    std::printf("mean average precision %.4f over %lld queries "
                "(%lld excluded)\n",
                metrics.map,
                (long long)(queries.count - metrics.excluded_queries),
                (long long)metrics.excluded_queries);
    for (const auto& [k, v] : metrics.map_at_k)
        std::printf("  map@%lld %.4f   p@%lld %.4f\n", (long long)k, v,
                    (long long)k, metrics.p_at_k.at(k));
    return kExitOk;
}

// -------------------------------- gradcheck ---------------------------------

int cmd_gradcheck(const std::string& module) {
    auto suites = wch::run_gradcheck(module);
    bool all_passed = true;
    for (const auto& s : suites) {
        std::printf("%s\n", s.module.c_str());
        for (const auto& c : s.cases) {
            std::printf("  %-28s max rel err %10.3e  (tol %7.0e)  %s\n",
                        c.name.c_str(), c.max_rel_err, c.tolerance,
                        c.passed ? "ok" : "FAIL");
            all_passed = all_passed && c.passed;
        }
    }
    std::printf(all_passed ? "all gradient checks passed\n"
                           : "gradient checks FAILED\n");
    return all_passed ? kExitOk : kExitNumeric;
}

// ---------------------------------- ablate ----------------------------------

struct AblationRow {
    std::string name;
    wch::AblationFlags flags;
};

std::vector<AblationRow> ablation_rows() {
    std::vector<AblationRow> rows;
    rows.push_back({"full", {}});
    wch::AblationFlags f;
    f.ma_mean = true;
    f.hard_labels = true;
    rows.push_back({"i", f});
    f = {};
    f.no_reg = true;
    rows.push_back({"ii", f});
    f = {};
    f.ma_mean = true;
    rows.push_back({"iii", f});
    f = {};
    f.hard_labels = true;
    rows.push_back({"iv", f});
    f = {};
    f.no_scale = true;
    rows.push_back({"v", f});
    return rows;
}

int cmd_ablate(const std::string& config_path, const std::string& out,
               const std::string& rows_text) {
    wch::TrainConfig base =
        wch::train_config_from_json(read_json_file(config_path));

    std::vector<std::string> wanted;
    {
        std::stringstream ss(rows_text);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) wanted.push_back(item);
    }
    std::vector<AblationRow> rows;
    for (const auto& name : wanted) {
        bool found = false;
        for (const auto& row : ablation_rows())
            if (row.name == name) {
                rows.push_back(row);
                found = true;
            }
        if (!found)
            throw wch::ConfigError("unknown ablation row '" + name +
                                   "' (expected full, i, ii, iii, iv, v)");
    }
    if (rows.empty()) throw wch::ConfigError("--rows selected nothing");

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw wch::IoError("cannot create output dir " + out);

    json table = json::array();
    for (const auto& row : rows) {
        wch::TrainConfig cfg = base;
        cfg.ablations = row.flags;
        wch::Trainer<double> trainer(cfg);
        auto corpus = wch::generate(trainer.config().data);
        const std::string run_dir = (fs::path(out) / row.name).string();
        wch::RunRecord rec = trainer.fit(corpus, run_dir);
        json entry = {{"row", row.name},
                      {"flags",
                       {{"ma_mean", row.flags.ma_mean},
                        {"hard_labels", row.flags.hard_labels},
                        {"no_scale", row.flags.no_scale},
                        {"no_reg", row.flags.no_reg},
                        {"detach_targets", row.flags.detach_targets}}},
                      {"final_loss",
                       rec.losses.empty() ? 0.0 : rec.losses.back().total}};
        if (rec.evaluated) {
            entry["map"] = rec.final_metrics.map;
            for (const auto& [k, v] : rec.final_metrics.map_at_k)
                entry["map_at_k"][std::to_string(k)] = v;
        }
        table.push_back(entry);
        std::printf("row %-4s done", row.name.c_str());
        if (rec.evaluated)
            std::printf("  map %.4f", rec.final_metrics.map);
        std::printf("\n");
    }

    json echo = {{"command", "ablate"},
                 {"config", config_path},
                 {"out", out},
                 {"rows", wanted},
                 {"base_config", wch::train_config_to_json(
                                     wch::resolve(base))}};
    write_json_file((fs::path(out) / "config.json").string(), echo);
    write_json_file((fs::path(out) / "ablate.json").string(),
                    json{{"rows", table}});

    std::printf("%-6s %-8s %-8s\n", "row", "map", "map@100");
    for (const auto& entry : table) {
        const std::string name = entry["row"];
        if (entry.contains("map")) {
            const double m = entry["map"];
            double m100 = 0.0;
            if (entry.contains("map_at_k") &&
                entry["map_at_k"].contains("100"))
                m100 = entry["map_at_k"]["100"];
            std::printf("%-6s %-8.4f %-8.4f\n", name.c_str(), m, m100);
        } else {
            std::printf("%-6s (no query split)\n", name.c_str());
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weighted contrastive hashing toolkit"};
    app.require_subcommand(1);

    // gen-data
    uint64_t gd_seed = 0;
    int64_t gd_count = 0, gd_classes = 0, gd_image_size = 32,
            gd_patch_size = 8, gd_channels = 3, gd_train_count = 0;
    std::string gd_out;
    auto* gen = app.add_subcommand("gen-data",
                                   "generate a synthetic labeled dataset");
    gen->add_option("--seed", gd_seed, "dataset seed")->required();
    gen->add_option("--count", gd_count, "number of images")->required();
    gen->add_option("--classes", gd_classes, "number of classes")->required();
    gen->add_option("--image-size", gd_image_size, "image side length");
    gen->add_option("--patch-size", gd_patch_size, "patch side length");
    gen->add_option("--channels", gd_channels, "color channels");
    gen->add_option("--train-count", gd_train_count,
                    "database split size (0 = all)");
    gen->add_option("--out", gd_out, "output directory")->required();

    // train
    std::string tr_config, tr_out, tr_resume;
    auto* train = app.add_subcommand("train", "train a hashing model");
    train->add_option("--config", tr_config, "training config JSON")
        ->required();
    train->add_option("--out", tr_out, "run output directory")->required();
    train->add_option("--resume", tr_resume, "checkpoint dir to resume from");

    // encode
    std::string en_ckpt, en_data, en_out;
    auto* encode = app.add_subcommand("encode",
                                      "encode a dataset to binary codes");
    encode->add_option("--checkpoint", en_ckpt, "checkpoint directory")
        ->required();
    encode->add_option("--data", en_data, "dataset directory")->required();
    encode->add_option("--out", en_out, "output codes file")->required();

    // index
    std::string ix_codes, ix_out;
    int64_t ix_from = 0, ix_to = 0;
    auto* index = app.add_subcommand(
        "index", "validate codes and write a canonical database file");
    index->add_option("--codes", ix_codes, "input codes file")->required();
    index->add_option("--from", ix_from, "first row of the slice");
    index->add_option("--to", ix_to, "one past the last row (0 = end)");
    index->add_option("--out", ix_out, "output database file")->required();

    // query
    std::string q_queries, q_db, q_out;
    int64_t q_k = 10;
    auto* query = app.add_subcommand("query",
                                     "rank a database for each query code");
    query->add_option("--queries", q_queries, "query codes file")->required();
    query->add_option("--database", q_db, "database codes file")->required();
    query->add_option("--k", q_k, "neighbors per query");
    query->add_option("--out", q_out, "optional JSON output path");

    // eval
    std::string ev_queries, ev_db, ev_labels, ev_out, ev_k = "1,10,100";
    auto* eval_cmd = app.add_subcommand("eval",
                                        "retrieval metrics for code files");
    eval_cmd->add_option("--queries", ev_queries, "query codes file")
        ->required();
    eval_cmd->add_option("--database", ev_db, "database codes file")
        ->required();
    eval_cmd->add_option("--labels", ev_labels,
                         "labels file covering database rows then queries")
        ->required();
    eval_cmd->add_option("--k", ev_k, "comma-separated cutoffs");
    eval_cmd->add_option("--out", ev_out, "output metrics JSON")->required();

    // gradcheck
    std::string gc_module = "all";
    auto* gradcheck = app.add_subcommand("gradcheck",
                                         "run gradient verification suites");
    gradcheck->add_option("--module", gc_module,
                          "all, tensor, encoder, mutual_attention, "
                          "weighted_labels, or losses");

    // ablate
    std::string ab_config, ab_out, ab_rows = "full,i,ii,iii,iv,v";
    auto* ablate = app.add_subcommand(
        "ablate", "train the standard ablation grid and compare");
    ablate->add_option("--config", ab_config, "training config JSON")
        ->required();
    ablate->add_option("--out", ab_out, "output directory")->required();
    ablate->add_option("--rows", ab_rows, "subset of full,i,ii,iii,iv,v");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen)
            return cmd_gen_data(gd_seed, gd_count, gd_classes, gd_image_size,
                                gd_patch_size, gd_channels, gd_train_count,
                                gd_out);
        if (*train) return cmd_train(tr_config, tr_out, tr_resume);
        if (*encode) return cmd_encode(en_ckpt, en_data, en_out);
        if (*index) return cmd_index(ix_codes, ix_from, ix_to, ix_out);
        if (*query) return cmd_query(q_queries, q_db, q_k, q_out);
        if (*eval_cmd)
            return cmd_eval(ev_queries, ev_db, ev_labels, ev_k, ev_out);
        if (*gradcheck) return cmd_gradcheck(gc_module);
        if (*ablate) return cmd_ablate(ab_config, ab_out, ab_rows);
        std::fprintf(stderr, "no command selected\n");
        return kExitConfig;
    } catch (const wch::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const wch::ParameterError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const wch::DimensionError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const wch::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const wch::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const wch::EncodingError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const wch::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
}
