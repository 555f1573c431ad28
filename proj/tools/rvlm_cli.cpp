// rvlm: ingest, inspect, query, train and evaluate chunk stores.
//
// Exit codes: 0 ok, 1 usage/config, 2 data (I/O, decode, shape, lookup),
// 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rvlm/rvlm.hpp"

namespace fs = std::filesystem;
using namespace rvlm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int verbosity = 1;
    std::string format = "table";

    bool lines() const { return format == "lines"; }
};

void log(const Globals& g, int level, const std::string& msg) {
    if (g.verbosity >= level) std::cerr << msg << '\n';
}

nlohmann::json load_config(const Globals& g) {
    if (g.config_path.empty()) return nlohmann::json::object();
    std::ifstream in(g.config_path);
    if (!in) throw IoError("cannot open config " + g.config_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + g.config_path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + g.config_path + " must hold a JSON object");
    return j;
}

template <typename T>
void take(const nlohmann::json& section, const char* key, T& out) {
    if (!section.contains(key)) return;
    try {
        out = section.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

ChunkConfig chunk_config_from(const nlohmann::json& cfg) {
    ChunkConfig c;
    if (cfg.contains("chunk")) {
        const auto& s = cfg["chunk"];
        take(s, "frames_per_chunk", c.frames_per_chunk);
        take(s, "spatial_stride", c.spatial_stride);
        take(s, "top_k", c.top_k);
    }
    return c;
}

TrainConfig train_config_from(const nlohmann::json& cfg) {
    TrainConfig t;
    if (cfg.contains("train")) {
        const auto& s = cfg["train"];
        take(s, "learning_rate", t.learning_rate);
        take(s, "batch_size", t.batch_size);
        take(s, "epochs", t.epochs);
        take(s, "lambda", t.lambda);
        take(s, "seed", t.seed);
        take(s, "hidden_dim", t.hidden_dim);
        take(s, "beta1", t.beta1);
        take(s, "beta2", t.beta2);
        take(s, "adam_epsilon", t.adam_epsilon);
        std::string opt = t.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
        take(s, "optimizer", opt);
        if (opt == "adam") {
            t.optimizer = OptimizerKind::Adam;
        } else if (opt == "sgd") {
            t.optimizer = OptimizerKind::Sgd;
        } else {
            throw ConfigError("optimizer must be \"adam\" or \"sgd\"");
        }
    }
    return t;
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
    std::vector<std::size_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            ks.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("bad K value '" + item + "' in --k-values");
        }
    }
    if (ks.empty()) throw ConfigError("--k-values is empty");
    return ks;
}

void print_reports(const Globals& g, const std::vector<EvalReport>& reports) {
    if (g.lines()) {
        write_report_lines(std::cout, reports);
    } else {
        print_report_table(std::cout, reports);
    }
}

void write_report_file(const std::string& path, const std::vector<EvalReport>& reports) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_report_lines(out, reports);
}

// Dataset location: either --data <dir> holding store.rvlm and
// annotations.jsonl, or explicit --store/--annotations.
struct DataArgs {
    std::string data_dir;
    std::string store;
    std::string annotations;

    void add(CLI::App* cmd) {
        cmd->add_option("--data", data_dir, "Directory with store.rvlm and annotations.jsonl");
        cmd->add_option("--store", store, "Chunk store file");
        cmd->add_option("--annotations", annotations, "Annotation file (JSON lines)");
    }

    fs::path store_path() const {
        if (!store.empty()) return store;
        if (!data_dir.empty()) return fs::path(data_dir) / "store.rvlm";
        throw ConfigError("need --store or --data");
    }
    fs::path annotation_path() const {
        if (!annotations.empty()) return annotations;
        if (!data_dir.empty()) return fs::path(data_dir) / "annotations.jsonl";
        throw ConfigError("need --annotations or --data");
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Query-conditioned chunk retrieval over video feature stores"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config_path, "JSON config with \"chunk\" and \"train\" sections");
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed for randomized commands");
    app.add_option("--verbosity", g.verbosity, "0 quiet, 1 normal, 2 chatty")->check(CLI::Range(0, 2));
    app.add_option("--format", g.format, "Output style")->check(CLI::IsMember({"table", "lines"}));

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Chunk and pool frame feature files into a store");
    std::vector<std::string> ingest_features;
    std::string ingest_out;
    std::optional<std::size_t> ingest_m, ingest_stride;
    ingest->add_option("--features", ingest_features, "Frame feature files (kind 0)")->required();
    ingest->add_option("--out", ingest_out, "Output store")->required();
    ingest->add_option("--frames-per-chunk", ingest_m, "Frames per chunk (M)");
    ingest->add_option("--stride", ingest_stride, "Spatial pooling stride");

    // index
    auto* index = app.add_subcommand("index", "Summarize a chunk store");
    std::string index_store;
    index->add_option("--store", index_store, "Chunk store file")->required();

    // query
    auto* query = app.add_subcommand("query", "Retrieve the top-K chunks of one video for one query");
    std::string q_store, q_encoder, q_features, q_video, q_projector;
    std::size_t q_row = 0;
    std::optional<std::size_t> q_k;
    query->add_option("--store", q_store, "Chunk store file")->required();
    query->add_option("--encoder", q_encoder, "Encoder checkpoint (kind 3)")->required();
    query->add_option("--query-features", q_features, "Text feature file (kind 2)")->required();
    query->add_option("--row", q_row, "Row of the text feature file");
    query->add_option("--video", q_video, "Video id")->required();
    query->add_option("--k", q_k, "Number of chunks to keep");
    query->add_option("--projector", q_projector, "Optional projector (kind 4) applied to exported tokens");

    // train
    auto* train = app.add_subcommand("train", "Fit the query encoder with the soft-matching loss");
    DataArgs train_data;
    train_data.add(train);
    std::string train_out, train_log, train_init;
    std::optional<double> t_lr, t_lambda;
    std::optional<std::size_t> t_batch, t_epochs, t_hidden;
    std::optional<std::string> t_opt;
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--loss-log", train_log, "Loss log path (default: <out>.loss)");
    train->add_option("--init", train_init, "Start from this checkpoint instead of a fresh init");
    train->add_option("--lr", t_lr, "Learning rate");
    train->add_option("--lambda", t_lambda, "Soft-matching loss weight");
    train->add_option("--batch-size", t_batch, "Batch size");
    train->add_option("--epochs", t_epochs, "Epochs");
    train->add_option("--hidden", t_hidden, "Hidden width H1");
    train->add_option("--optimizer", t_opt, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));

    // eval and sweep share their inputs
    struct EvalArgs {
        DataArgs data;
        std::string encoder, aligned_store, report_out;
    };
    auto add_eval_args = [](CLI::App* cmd, EvalArgs& a) {
        a.data.add(cmd);
        cmd->add_option("--encoder", a.encoder, "Encoder checkpoint (kind 3)")->required();
        cmd->add_option("--aligned-store", a.aligned_store, "Store in the shared text/vision space for clip_match");
        cmd->add_option("--report-out", a.report_out, "Also write report lines to this file");
    };
    auto* eval = app.add_subcommand("eval", "Compare retrieval with the uniform and clip_match baselines");
    EvalArgs eval_args;
    add_eval_args(eval, eval_args);
    std::optional<std::size_t> eval_k;
    eval->add_option("--k", eval_k, "K for recall@K");

    auto* sweep = app.add_subcommand("sweep", "Recall@K over several K");
    EvalArgs sweep_args;
    add_eval_args(sweep, sweep_args);
    std::string sweep_ks = "1,3,5,7";
    sweep->add_option("--k-values", sweep_ks, "Comma-separated K values")->capture_default_str();

    // report
    auto* report = app.add_subcommand("report", "Print a report line file as a table");
    std::string report_in;
    report->add_option("--in", report_in, "Report line file")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic planted corpus");
    std::string synth_spec, synth_dir;
    std::optional<double> synth_fraction;
    synth->add_option("--spec", synth_spec, "JSON generator spec (defaults otherwise)");
    synth->add_option("--out-dir", synth_dir, "Output directory")->required();
    synth->add_option("--train-fraction", synth_fraction, "Also write train.jsonl and heldout.jsonl")
        ->check(CLI::Range(0.0, 1.0));

    // cost
    auto* cost = app.add_subcommand("cost", "Relative LLM compute saved by retrieval");
    std::size_t c_chunks = 0, c_tokens = 68, c_k = 5, c_dtext = 80;
    cost->add_option("--chunks", c_chunks, "Chunks in the video")->required();
    cost->add_option("--tokens-per-chunk", c_tokens, "Tokens per chunk")->capture_default_str();
    cost->add_option("--k", c_k, "Chunks kept")->capture_default_str();
    cost->add_option("--dtext", c_dtext, "Text tokens")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }
    if (seed_opt->count() > 0) g.seed = seed_value;

    try {
        const nlohmann::json cfg = load_config(g);

        if (*ingest) {
            ChunkConfig cc = chunk_config_from(cfg);
            if (ingest_m) cc.frames_per_chunk = *ingest_m;
            if (ingest_stride) cc.spatial_stride = *ingest_stride;
            cc.validate();
            ChunkStore store;
            for (const auto& path : ingest_features) {
                const auto frames = import_frame_features(path);
                auto chunks = tokenize_video(frames, cc);
                const std::size_t l = chunks.size();
                const std::size_t tokens = chunks.front().token_count;
                store.add_video(std::move(chunks));
                std::cout << frames.video_id << ": " << l << " chunks, " << tokens << " tokens/chunk\n";
            }
            save(store, ingest_out);
            log(g, 2, "wrote " + ingest_out);
        } else if (*index) {
            const ChunkStore store = load(index_store);
            if (g.lines()) {
                std::cout << "videos=" << store.video_count() << " chunks=" << store.total_chunks()
                          << " tokens_per_chunk=" << store.token_count() << " dim=" << store.dim() << '\n';
                for (const auto& [id, chunks] : store.entries()) {
                    std::cout << "video=" << id << " chunks=" << chunks.size() << " frames="
                              << chunks.back().frame_end << '\n';
                }
            } else {
                std::cout << store.video_count() << " videos, " << store.total_chunks() << " chunks, "
                          << store.token_count() << " tokens/chunk, dim " << store.dim() << '\n';
                for (const auto& [id, chunks] : store.entries()) {
                    std::cout << "  " << std::left << std::setw(24) << id << std::right << std::setw(6)
                              << chunks.size() << " chunks  frames [0, " << chunks.back().frame_end << ")\n";
                }
            }
        } else if (*query) {
            ChunkConfig cc = chunk_config_from(cfg);
            if (q_k) cc.top_k = *q_k;
            cc.validate();
            const ChunkStore store = load(q_store);
            const QueryEncoder enc = load_encoder(q_encoder);
            const Matrix feats = read_query_features(q_features);
            if (q_row >= feats.rows) {
                throw DecodeError(DecodeFailure::OutOfRange, "row " + std::to_string(q_row) + " not in " + q_features);
            }
            std::optional<Projector> proj;
            if (!q_projector.empty()) proj = load_projector(q_projector);
            RetrieveOptions opts;
            opts.projector = proj ? &*proj : nullptr;
            const auto res = retrieve(feats.row(q_row), q_video, store, enc, cc, opts);
            if (g.lines()) {
                for (std::size_t r = 0; r < res.ranked.size(); ++r) {
                    std::cout << "rank=" << r + 1 << " chunk=" << res.ranked[r].index << " score="
                              << std::setprecision(17) << res.ranked[r].score << '\n';
                }
                std::cout << "selected=";
                for (std::size_t i = 0; i < res.selected_time_ordered.size(); ++i) {
                    std::cout << (i ? "," : "") << res.selected_time_ordered[i];
                }
                std::cout << "\ntoken_rows=" << res.exported_tokens->rows << " token_dim=" << res.exported_tokens->cols
                          << '\n';
            } else {
                std::cout << std::setw(6) << "rank" << std::setw(8) << "chunk" << std::setw(12) << "score" << '\n';
                for (std::size_t r = 0; r < res.ranked.size(); ++r) {
                    std::cout << std::setw(6) << r + 1 << std::setw(8) << res.ranked[r].index << std::setw(12)
                              << std::fixed << std::setprecision(5) << res.ranked[r].score << '\n';
                }
                std::cout.unsetf(std::ios::floatfield);
                std::cout << "time order:";
                for (std::size_t i : res.selected_time_ordered) std::cout << ' ' << i;
                std::cout << "\nexported " << res.exported_tokens->rows << " x " << res.exported_tokens->cols
                          << " tokens\n";
            }
        } else if (*train) {
            TrainConfig tc = train_config_from(cfg);
            if (t_lr) tc.learning_rate = *t_lr;
            if (t_lambda) tc.lambda = *t_lambda;
            if (t_batch) tc.batch_size = *t_batch;
            if (t_epochs) tc.epochs = *t_epochs;
            if (t_hidden) tc.hidden_dim = *t_hidden;
            if (t_opt) tc.optimizer = *t_opt == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
            if (g.seed) tc.seed = *g.seed;
            tc.validate();
            const ChunkStore store = load(train_data.store_path());
            const AnnotationSet ann = load_annotations(train_data.annotation_path(), store);
            if (ann.empty()) throw ConfigError("no training annotations");
            const auto data = make_training_examples(store, ann);
            log(g, 2, std::to_string(data.size()) + " training examples");
            const FitResult fr = train_init.empty() ? fit(data, tc) : fit(data, tc, load_encoder(train_init));
            save_encoder(train_out, fr.encoder);
            const std::string log_path = train_log.empty() ? train_out + ".loss" : train_log;
            std::ofstream lossf(log_path);
            if (!lossf) throw IoError("cannot open " + log_path + " for writing");
            lossf << std::setprecision(17);
            for (const auto& s : fr.steps) lossf << s.epoch << ' ' << s.step << ' ' << s.sm_loss << '\n';
            for (std::size_t e = 0; e < fr.epoch_sm_loss.size(); ++e) {
                if (g.lines()) {
                    std::cout << "epoch=" << e << " sm_loss=" << std::setprecision(17) << fr.epoch_sm_loss[e] << '\n';
                } else {
                    std::cout << "epoch " << e << "  mean SM loss " << std::fixed << std::setprecision(5)
                              << fr.epoch_sm_loss[e] << '\n';
                    std::cout.unsetf(std::ios::floatfield);
                }
            }
            log(g, 1, "wrote " + train_out + " and " + log_path);
        } else if (*eval || *sweep) {
            EvalArgs& a = *eval ? eval_args : sweep_args;
            const ChunkStore store = load(a.data.store_path());
            const AnnotationSet ann = load_annotations(a.data.annotation_path(), store);
            const QueryEncoder enc = load_encoder(a.encoder);
            std::optional<ChunkStore> aligned;
            if (!a.aligned_store.empty()) aligned = load(a.aligned_store);
            EvalOptions opts;
            opts.aligned_store = aligned ? &*aligned : nullptr;
            std::vector<EvalReport> reports;
            if (*eval) {
                ChunkConfig cc = chunk_config_from(cfg);
                if (eval_k) cc.top_k = *eval_k;
                reports.push_back(compare_strategies(store, ann, enc, cc, opts));
            } else {
                const auto ks = parse_k_list(sweep_ks);
                reports = k_sweep(store, ann, enc, ks, opts);
            }
            print_reports(g, reports);
            write_report_file(a.report_out, reports);
        } else if (*report) {
            std::ifstream in(report_in);
            if (!in) throw IoError("cannot open " + report_in);
            print_reports(g, read_report_lines(in));
        } else if (*synth) {
            SynthSpec spec;
            if (!synth_spec.empty()) {
                std::ifstream in(synth_spec);
                if (!in) throw IoError("cannot open " + synth_spec);
                try {
                    spec = nlohmann::json::parse(in).get<SynthSpec>();
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError("synth spec " + synth_spec + ": " + e.what());
                }
            }
            if (g.seed) spec.seed = *g.seed;
            const SynthCorpus corpus = generate_corpus(spec);
            write_corpus(synth_dir, corpus);
            if (synth_fraction) {
                const auto [tr, ho] = split(corpus.annotations, *synth_fraction, spec.seed);
                save_annotations(fs::path(synth_dir) / "train.jsonl", tr);
                save_annotations(fs::path(synth_dir) / "heldout.jsonl", ho);
                log(g, 1, "split " + std::to_string(tr.size()) + " train / " + std::to_string(ho.size()) + " held out");
            }
            std::cout << corpus.store.video_count() << " videos, " << corpus.store.total_chunks() << " chunks, "
                      << corpus.annotations.size() << " queries -> " << synth_dir << '\n';
        } else if (*cost) {
            const double f = flops_savings(c_chunks, c_tokens, c_k, c_dtext);
            if (g.lines()) {
                std::cout << "savings_percent=" << round_percent(f) << " fraction=" << std::setprecision(17) << f
                          << '\n';
            } else {
                std::cout << round_percent(f) << "%\n";
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kOk;
}
