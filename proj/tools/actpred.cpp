// actpred: command-line front end for every pipeline stage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "actpred/config.hpp"
#include "actpred/corpus.hpp"
#include "actpred/encoder.hpp"
#include "actpred/evaluation.hpp"
#include "actpred/features.hpp"
#include "actpred/gbdt.hpp"
#include "actpred/lookup.hpp"
#include "actpred/rare_classifier.hpp"
#include "actpred/replygen.hpp"
#include "actpred/router.hpp"
#include "actpred/synthetic.hpp"
#include "actpred/training.hpp"

#ifndef ACTPRED_DATA_DIR
#define ACTPRED_DATA_DIR "data"
#endif

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace actpred;

constexpr int kExitStage = 1;
constexpr int kExitUsage = 2;

std::ofstream open_out(const std::string& path) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write '" + path + "'");
    }
    return out;
}

void write_json(const std::string& path, const json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

std::string default_keywords(const config::PipelineConfig& cfg) {
    if (!cfg.paths.keywords.empty()) {
        return cfg.paths.keywords;
    }
    if (const char* env = std::getenv("ACTPRED_KEYWORDS")) {
        return env;
    }
    return std::string(ACTPRED_DATA_DIR) + "/keywords.txt";
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    std::vector<json> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return rows;
}

std::vector<eval::PredictionRow> read_predictions(const std::string& path) {
    std::vector<eval::PredictionRow> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            out.push_back(eval::parse_prediction_row(j));
        } catch (const json::exception& e) {
            throw SchemaError("prediction", std::string("bad prediction row: ") + e.what());
        }
    }
    return out;
}

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

config::PipelineConfig resolve(const Options& o) {
    config::PipelineConfig cfg = o.config_path.empty() ? config::PipelineConfig{}
                                                       : config::load_config(o.config_path);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.threads) {
        cfg.threads = *o.threads;
    }
    cfg.propagate();
    return cfg;
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) {
        throw IoError(std::string(what) + " '" + path + "' does not exist");
    }
}

// --- subcommands ------------------------------------------------------------

struct IngestArgs {
    std::string in;
    std::string out;
    bool lenient = false;
};

void run_ingest(const IngestArgs& a) {
    require_file(a.in, "input");
    const auto rr = corpus::read_threads_file(a.in, !a.lenient);
    const auto stats = corpus::dataset_stats(rr.threads);
    const auto simple = corpus::simplify_for_action_task(rr.threads);
    json errors = json::array();
    for (const auto& e : rr.errors) {
        errors.push_back({{"line", e.line}, {"kind", e.kind}, {"message", e.message}});
    }
    json report = stats.to_json();
    report["simplification"] = {{"kept", simple.kept.size()},
                                {"rule_hits", simple.rule_hits},
                                {"violations", simple.violations},
                                {"single_message", simple.dropped_short}};
    report["record_errors"] = std::move(errors);
    write_json(a.out, report);
}

struct BuildLookupArgs {
    std::string in;
    std::string out;
};

void run_build_lookup(const BuildLookupArgs& a) {
    require_file(a.in, "input");
    const auto rr = corpus::read_threads_file(a.in);
    const auto simple = corpus::simplify_for_action_task(rr.threads);
    const auto table = lookup::build(simple.kept);
    lookup::save(table, a.out);
    std::cerr << "lookup table: " << table.size() << " messages from " << simple.kept.size()
              << " threads\n";
}

struct TrainGbdtArgs {
    std::string in;
    std::string out;
    std::string keywords;
    std::string grid;
};

void run_train_gbdt(const TrainGbdtArgs& a, config::PipelineConfig cfg) {
    require_file(a.in, "input");
    const std::string kw = a.keywords.empty() ? default_keywords(cfg) : a.keywords;
    const auto db = features::load_keyword_db(kw);
    if (a.grid == "base") {
        cfg.gbdt.train.grid.clear();
    } else if (!a.grid.empty() && a.grid != "default" && a.grid != "config") {
        throw ConfigError("--grid must be default, config or base");
    }
    if (a.grid == "default") {
        cfg.gbdt.train.grid = gbdt::TrainConfig::default_grid(cfg.gbdt.train.base);
    }
    const auto rr = corpus::read_threads_file(a.in);
    const auto simple = corpus::simplify_for_action_task(rr.threads);
    auto bundle = training::train_cluster_models(simple.kept, db, cfg.gbdt.train,
                                                 cfg.gbdt.min_cluster_rows);
    gbdt::save_bundle(a.out, bundle.models, bundle.schema, bundle.cv_reports);
    fs::copy_file(kw, fs::path(a.out) / "keywords.txt", fs::copy_options::overwrite_existing);
    json importance = json::object();
    for (const auto& [c, m] : bundle.models) {
        json list = json::array();
        for (const auto& [name, n] : gbdt::feature_importance(m.ensemble)) {
            list.push_back({name, n});
        }
        importance[std::to_string(c)] = std::move(list);
    }
    write_json((fs::path(a.out) / "feature_importance.json").string(), importance);
}

struct TrainRareArgs {
    std::string in;
    std::string out;
    std::string encoder;
    std::string log;
};

void run_train_rare(const TrainRareArgs& a, const config::PipelineConfig& cfg) {
    require_file(a.in, "input");
    const auto rr = corpus::read_threads_file(a.in);
    const auto samples = training::rare_samples(rr.threads);
    const std::string spec = a.encoder.empty() ? cfg.encoder : a.encoder;
    rare::TrainLog log;
    const auto model =
        rare::train_two_phase(samples, encoder::encoder_from_spec(spec, cfg.encoder_dim), cfg.rare, &log);
    rare::save_bundle(model, a.out, {{"training_samples", samples.size()}, {"log", log.to_json()}});
    if (!a.log.empty()) {
        write_json(a.log, log.to_json());
    }
}

struct PredictArgs {
    std::string table;
    std::string models;
    std::string rare;
    std::string in;
    std::string out;
    std::string stats;
    std::string keywords;
    bool no_lookup = false;
    bool no_rare = false;
};

void run_predict(const PredictArgs& a, const config::PipelineConfig& cfg) {
    require_file(a.in, "input");
    router::Pipeline p;
    p.thresholds = cfg.lookup;
    p.toggles = {!a.no_lookup, !a.no_rare};
    if (p.toggles.lookup) {
        if (a.table.empty()) {
            throw ConfigError("--table is required unless --no-lookup is given");
        }
        require_file(a.table, "lookup table");
        p.table = lookup::load(a.table);
    }
    p.models = gbdt::load_bundle(a.models);
    std::string kw = a.keywords;
    if (kw.empty()) {
        const auto bundled = fs::path(a.models) / "keywords.txt";
        kw = fs::exists(bundled) ? bundled.string() : default_keywords(cfg);
    }
    p.keywords = features::load_keyword_db(kw);
    p.check_schema();
    if (p.toggles.rare) {
        if (a.rare.empty()) {
            throw ConfigError("--rare is required unless --no-rare is given");
        }
        p.rare_model = std::make_shared<rare::FusionModel>(rare::load_bundle(a.rare));
    }
    const auto rr = corpus::read_threads_file(a.in, false);
    auto result = router::predict_batch(p, rr.threads, cfg.threads);
    auto out = open_out(a.out);
    for (std::size_t i = 0; i < rr.threads.size(); ++i) {
        if (result.predictions[i]) {
            out << router::prediction_record(rr.record_index[i], *result.predictions[i]).dump() << '\n';
        }
    }
    result.stats.errors += rr.errors.size();
    json stats = result.stats.to_json();
    json failures = json::array();
    for (const auto& e : rr.errors) {
        failures.push_back({{"line", e.line}, {"kind", e.kind}, {"message", e.message}});
    }
    for (const auto& f : result.failures) {
        failures.push_back(
            {{"index", rr.record_index[f.index]}, {"kind", f.kind}, {"message", f.message}});
    }
    stats["failures"] = std::move(failures);
    if (!a.stats.empty()) {
        write_json(a.stats, stats);
    }
}

struct RepliesArgs {
    std::string in;
    std::string pred;
    std::string out;
    std::string provider;
    int in_flight = 1;
};

void run_generate_replies(const RepliesArgs& a, const config::PipelineConfig& cfg) {
    require_file(a.in, "input");
    require_file(a.pred, "predictions");
    const auto rr = corpus::read_threads_file(a.in);
    std::unique_ptr<replygen::GenerationProvider> provider;
    if (a.provider == "stub") {
        provider = std::make_unique<replygen::StubProvider>();
    } else if (a.provider == "http") {
        provider = std::make_unique<replygen::HttpProvider>(cfg.provider);
    } else {
        throw ConfigError("--provider must be stub or http");
    }
    std::vector<corpus::ConversationThread> todo;
    std::vector<std::size_t> indices;
    for (const auto& p : read_predictions(a.pred)) {
        if (p.action != ActionLabel::Reply) {
            continue;
        }
        if (p.index >= rr.threads.size()) {
            throw ContractError("prediction index " + std::to_string(p.index) + " has no thread");
        }
        todo.push_back(rr.threads[p.index]);
        indices.push_back(p.index);
    }
    const auto results = replygen::generate_replies(*provider, todo, indices, a.in_flight);
    auto out = open_out(a.out);
    std::size_t failed = 0;
    for (const auto& r : results) {
        json row = {{"index", r.index}};
        if (r.text) {
            row["text"] = *r.text;
        } else {
            // Empty-reply fallback keeps the file aligned with the predictions.
            row["text"] = "";
            row["error"] = r.error.value_or("");
            ++failed;
        }
        out << row.dump() << '\n';
    }
    std::cerr << "replies: " << results.size() - failed << " generated, " << failed << " failed\n";
}

struct EvaluateArgs {
    std::string pred;
    std::string gold;
    std::string replies;
    std::string embedder;
    std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
    require_file(a.pred, "predictions");
    require_file(a.gold, "gold");
    const auto preds = read_predictions(a.pred);
    const auto golds = corpus::read_threads_file(a.gold).threads;
    json report;
    if (a.replies.empty()) {
        report = eval::evaluate_run(preds, golds);
    } else {
        require_file(a.replies, "replies");
        std::vector<eval::ReplyRow> rows;
        for (const auto& j : read_jsonl(a.replies)) {
            rows.push_back({j.at("index").get<std::size_t>(), j.value("text", "")});
        }
        const std::string spec = a.embedder == "stub" ? "hashed" : a.embedder;
        const auto provider = encoder::encoder_from_spec(spec);
        report = eval::evaluate_run(preds, golds, std::span<const eval::ReplyRow>(rows), provider.get());
    }
    write_json(a.out, report);
}

struct SyntheticArgs {
    std::string out;
    std::optional<std::size_t> n;
    std::optional<double> rare_boost;
    std::optional<double> long_fraction;
};

void run_gen_synthetic(const SyntheticArgs& a, config::PipelineConfig cfg) {
    auto sc = cfg.synthetic;
    if (a.n) {
        sc.n = *a.n;
    }
    if (a.rare_boost) {
        sc.rare_boost = *a.rare_boost;
    }
    if (a.long_fraction) {
        sc.long_thread_fraction = *a.long_fraction;
    }
    const auto threads = synthetic::generate_corpus(sc);
    if (a.out.empty() || a.out == "-") {
        corpus::write_threads(std::cout, threads);
        return;
    }
    auto out = open_out(a.out);
    corpus::write_threads(out, threads);
}

void report_error(const std::string& stage, const std::string& kind, const std::string& message) {
    const json j = {{"error", {{"stage", stage}, {"kind", kind}, {"message", message}}}};
    std::cerr << j.dump() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Social media action prediction pipeline"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("--config", opt.config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "Random seed for every stochastic component");
    app.add_option("--threads", opt.threads, "Worker thread cap")->check(CLI::PositiveNumber);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest-stats", "Validate a corpus and print statistics");
    c_ingest->add_option("--in", ingest.in, "Thread JSONL")->required();
    c_ingest->add_option("--out", ingest.out, "Report path (default stdout)");
    c_ingest->add_flag("--lenient", ingest.lenient, "Skip malformed records instead of failing");

    BuildLookupArgs build;
    auto* c_build = app.add_subcommand("build-lookup", "Aggregate the vote table");
    c_build->add_option("--in", build.in, "Labeled thread JSONL")->required();
    c_build->add_option("--out", build.out, "Table file")->required();

    TrainGbdtArgs tg;
    auto* c_tg = app.add_subcommand("train-gbdt", "Train the per-cluster boosted models");
    c_tg->add_option("--in", tg.in, "Labeled thread JSONL")->required();
    c_tg->add_option("--out", tg.out, "Model bundle directory")->required();
    c_tg->add_option("--keywords", tg.keywords, "Keyword database");
    c_tg->add_option("--grid", tg.grid, "default | config | base (single setting)");

    TrainRareArgs tr;
    auto* c_tr = app.add_subcommand("train-rare", "Train the rare-action fusion model");
    c_tr->add_option("--in", tr.in, "Labeled thread JSONL")->required();
    c_tr->add_option("--out", tr.out, "Bundle directory")->required();
    c_tr->add_option("--encoder", tr.encoder, "hashed | adaptive | service:<url>");
    c_tr->add_option("--log", tr.log, "Write the epoch log here");

    PredictArgs pr;
    auto* c_pr = app.add_subcommand("predict", "Route threads to predictions");
    c_pr->add_option("--table", pr.table, "Lookup table");
    c_pr->add_option("--models", pr.models, "Boosted model bundle")->required();
    c_pr->add_option("--rare", pr.rare, "Rare model bundle");
    c_pr->add_option("--in", pr.in, "Thread JSONL")->required();
    c_pr->add_option("--out", pr.out, "Prediction JSONL")->required();
    c_pr->add_option("--stats", pr.stats, "Route statistics JSON");
    c_pr->add_option("--keywords", pr.keywords, "Keyword database (default: the bundle's)");
    c_pr->add_flag("--no-lookup", pr.no_lookup, "Skip the lookup stage");
    c_pr->add_flag("--no-rare", pr.no_rare, "Skip the rare classifier");

    RepliesArgs rp;
    auto* c_rp = app.add_subcommand("generate-replies", "Generate text for REPLY predictions");
    c_rp->add_option("--in", rp.in, "Thread JSONL")->required();
    c_rp->add_option("--pred", rp.pred, "Prediction JSONL")->required();
    c_rp->add_option("--out", rp.out, "Reply JSONL")->required();
    c_rp->add_option("--provider", rp.provider, "stub | http")->default_val("stub");
    c_rp->add_option("--in-flight", rp.in_flight, "Concurrent requests")->check(CLI::PositiveNumber);

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Score predictions against gold labels");
    c_ev->add_option("--pred", ev.pred, "Prediction JSONL")->required();
    c_ev->add_option("--gold", ev.gold, "Gold thread JSONL")->required();
    c_ev->add_option("--replies", ev.replies, "Reply JSONL");
    c_ev->add_option("--embedder", ev.embedder, "stub | hashed | service:<url>")->default_val("stub");
    c_ev->add_option("--out", ev.out, "Report JSON (default stdout)");

    SyntheticArgs sy;
    auto* c_sy = app.add_subcommand("gen-synthetic", "Write a seeded synthetic corpus");
    c_sy->add_option("--n", sy.n, "Thread count");
    c_sy->add_option("--out", sy.out, "Output JSONL (default stdout)");
    c_sy->add_option("--rare-boost", sy.rare_boost, "Multiplier on rare-action shares");
    c_sy->add_option("--long-fraction", sy.long_fraction, "Share of threads with 3+ messages");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : kExitUsage;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        const auto cfg = resolve(opt);
        if (*c_ingest) {
            run_ingest(ingest);
        } else if (*c_build) {
            run_build_lookup(build);
        } else if (*c_tg) {
            run_train_gbdt(tg, cfg);
        } else if (*c_tr) {
            run_train_rare(tr, cfg);
        } else if (*c_pr) {
            run_predict(pr, cfg);
        } else if (*c_rp) {
            run_generate_replies(rp, cfg);
        } else if (*c_ev) {
            run_evaluate(ev);
        } else if (*c_sy) {
            run_gen_synthetic(sy, cfg);
        }
    } catch (const actpred::Error& e) {
        report_error(stage, e.kind(), e.what());
        return kExitStage;
    } catch (const std::exception& e) {
        report_error(stage, "internal", e.what());
        return kExitStage;
    }
    return 0;
}
