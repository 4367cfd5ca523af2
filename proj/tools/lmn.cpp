// lmn: labeled-memory online adaptation toolkit.
//
// Subcommands: gen-data, train-pcn, train-combiner, run-online, ablate,
// gradcheck. Configuration comes from built-in defaults, then an optional
// --config file (flat key = value lines, # comments), then flags; each run
// echoes the resolved configuration into the output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lmn/config.hpp"
#include "lmn/gradcheck_suites.hpp"
#include "lmn/lmn.hpp"

namespace fs = std::filesystem;
using namespace lmn;

namespace {

int usage(std::ostream& os) {
    os << "usage: lmn <command> [--config FILE] [--key value ...]\n"
          "\n"
          "commands:\n"
          "  gen-data        generate a synthetic dataset (repeat_markov | label_stream)\n"
          "  train-pcn       batch-train the primary classification network\n"
          "  train-combiner  fit the fixed theta or train the gating RNN atop a frozen PCN\n"
          "  run-online      run the online protocol over a dataset and report metrics\n"
          "  ablate          compare modes x write policies on one dataset\n"
          "  gradcheck       verify every analytic gradient against central differences\n"
          "\n"
          "keys (flags override the config file, which overrides defaults):\n";
    for (const auto& [k, spec] : Config::specs()) os << "  --" << k << "  " << spec.doc << "\n";
    return 2;
}

struct ParsedArgs {
    std::string command;
    Config cfg;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ParsedArgs parse_args(int argc, char** argv) {
    if (argc < 2) throw UsageError("missing subcommand");
    ParsedArgs out;
    out.command = argv[1];

    // --config is applied before the remaining flags so flags win.
    std::vector<std::pair<std::string, std::string>> flags;
    for (int i = 2; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--help" || arg == "-h") {
            out.command = "help";
            return out;
        }
        if (arg.rfind("--", 0) != 0) throw UsageError("unexpected positional argument '" + arg + "'");
        std::string key = arg.substr(2), value;
        size_t eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else if (key != "config" && Config::known(key) && Config::specs().at(key).kind == Config::Kind::Flag &&
                   (i + 1 >= argc || std::string(argv[i + 1]).rfind("--", 0) == 0)) {
            value = "true";  // bare boolean flag
        } else {
            if (i + 1 >= argc) throw UsageError("flag --" + key + " is missing a value");
            value = argv[++i];
        }
        if (key != "config" && !Config::known(key)) throw UsageError("unknown flag --" + key);
        flags.emplace_back(key, value);
    }
    for (const auto& [k, v] : flags)
        if (k == "config") out.cfg.load_file(v);
    for (const auto& [k, v] : flags)
        if (k != "config") out.cfg.set(k, v);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

std::set<int> labels_present(const EpisodeDataset& ds) {
    std::set<int> out;
    for (const auto& ep : ds.episodes) {
        for (int t : ep.tokens) out.insert(t);
        for (int y : ep.ys) out.insert(y);
    }
    return out;
}

MemoryConfig memory_config(const Config& cfg, int labels, int dim) {
    MemoryConfig m;
    m.labels = labels;
    m.dim = dim;
    m.cells_per_label = static_cast<int>(cfg.geti("cells_per_label"));
    m.lambda = cfg.getd("lambda");
    m.delta = cfg.getd("delta");
    m.margin = cfg.getd("margin");
    m.decay = cfg.getd("decay");
    m.total_capacity = static_cast<int>(cfg.geti("total_capacity"));
    return m;
}

SessionMode parse_mode(const std::string& s) {
    if (s == "pcn_only") return SessionMode::pcn_only;
    if (s == "memory_only") return SessionMode::memory_only;
    if (s == "lmn_fixed") return SessionMode::lmn_fixed;
    if (s == "lmn") return SessionMode::lmn;
    throw ConfigError("mode", "unknown mode '" + s + "'");
}

WritePolicy parse_policy(const std::string& s) {
    if (s == "label_partitioned") return WritePolicy::label_partitioned;
    if (s == "write_always_global_lru") return WritePolicy::write_always_global_lru;
    throw ConfigError("policy", "unknown policy '" + s + "'");
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Loads --data, optionally against the vocabulary and seen-label annotation
// of --train_data.
EpisodeDataset load_run_data(const Config& cfg) {
    if (!cfg.is_set("data")) throw ConfigError("data", "required key is missing");
    if (cfg.is_set("train_data")) {
        EpisodeDataset train = load_jsonl(cfg.text("train_data"));
        for (int y : labels_present(train)) train.seen_labels.insert(y);
        return load_jsonl(cfg.text("data"), &train);
    }
    return load_jsonl(cfg.text("data"));
}

struct LoadedModel {
    PcnModel pcn;
    std::optional<FixedCombiner> fixed;
    std::optional<RnnCombiner> rnn;
};

LoadedModel load_model(const Config& cfg) {
    if (!cfg.is_set("model")) throw ConfigError("model", "required key is missing");
    Checkpoint cp = checkpoint_load(cfg.text("model"));
    LoadedModel out{PcnModel::from_checkpoint(cp), std::nullopt, std::nullopt};
    if (const Matrix* th = cp.find("combiner.theta")) out.fixed = FixedCombiner{th->a[0]};
    if (cp.find("combiner.Wt")) out.rnn = RnnCombiner::from_checkpoint(cp);
    return out;
}

void save_fixed_combiner(const fs::path& path, const PcnModel& pcn, double theta) {
    CheckpointHeader hdr;
    hdr.mode = pcn.mode == PcnMode::stateful ? 0 : 1;
    hdr.vocab = static_cast<uint32_t>(pcn.vocab);
    hdr.embed_dim = static_cast<uint32_t>(pcn.embed_dim);
    hdr.hidden_dim = static_cast<uint32_t>(pcn.hidden_dim);
    ParamStore merged;
    for (size_t e = 0; e < pcn.params().count(); ++e) {
        const auto& entry = pcn.params().entry(static_cast<int>(e));
        int id = merged.add(entry.name, entry.value.rows, entry.value.cols);
        merged.entry(id).value = entry.value;
    }
    int id = merged.add("combiner.theta", 1, 1);
    merged.entry(id).value.a[0] = theta;
    checkpoint_save(path, hdr, merged);
}

int cmd_gen_data(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    uint64_t seed = cfg.seed();
    std::string kind = cfg.text("generator");
    nlohmann::json meta;
    meta["generator"] = kind;

    if (kind == "repeat_markov") {
        GeneratorSpec gs;
        gs.seed = seed;
        gs.vocab = static_cast<int>(cfg.geti("vocab"));
        gs.episodes = static_cast<int>(cfg.geti("episodes"));
        gs.mean_length = static_cast<int>(cfg.geti("mean_length"));
        gs.repeat_bias = cfg.getd("rho");
        gs.home_set = static_cast<int>(cfg.geti("home_set"));
        EpisodeDataset train = gen_repeat_markov(gs);
        gs.seed = seed + 1;  // disjoint stream for the test split
        gs.episodes = static_cast<int>(cfg.geti("test_episodes"));
        EpisodeDataset test = gen_repeat_markov(gs);
        save_jsonl(train, out / "train.jsonl");
        save_jsonl(test, out / "test.jsonl");
        meta["vocab"] = gs.vocab;
        meta["train_episodes"] = train.episodes.size();
        meta["test_episodes"] = test.episodes.size();
    } else if (kind == "label_stream") {
        GeneratorSpec gs;
        gs.seed = seed;
        gs.seen = static_cast<int>(cfg.geti("seen"));
        gs.unseen = static_cast<int>(cfg.geti("unseen"));
        gs.dim = static_cast<int>(cfg.geti("input_dim"));
        gs.spread = cfg.getd("spread");
        gs.episodes = static_cast<int>(cfg.geti("episodes"));
        gs.test_episodes = static_cast<int>(cfg.geti("test_episodes"));
        gs.picks_per_episode = static_cast<int>(cfg.geti("picks"));
        gs.test_episode_length = static_cast<int>(cfg.geti("test_episode_length"));
        gs.train_episode_length = static_cast<int>(cfg.geti("train_episode_length"));
        LabelStream stream = gen_label_stream(gs);
        save_jsonl(stream.train, out / "train.jsonl");
        save_jsonl(stream.test, out / "test.jsonl");
        meta["classes"] = gs.seen + gs.unseen;
        meta["seen"] = gs.seen;
        meta["unseen"] = gs.unseen;
        meta["dim"] = gs.dim;
    } else {
        throw ConfigError("generator", "unknown generator '" + kind + "'");
    }
    write_text(out / "meta.json", meta.dump(2) + "\n");
    std::cout << "wrote " << (out / "train.jsonl").string() << " and " << (out / "test.jsonl").string()
              << "\n";
    return 0;
}

int cmd_train_pcn(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    if (!cfg.is_set("data")) throw ConfigError("data", "required key is missing");
    EpisodeDataset ds = load_jsonl(cfg.text("data"));
    for (int y : labels_present(ds)) ds.seen_labels.insert(y);

    int classes = static_cast<int>(cfg.geti("classes"));
    if (classes == 0) classes = ds.vocab;
    if (classes < ds.vocab) throw ConfigError("classes", "smaller than the dataset vocabulary");
    ds.vocab = classes;  // beta rows for never-seen classes stay untrained

    uint64_t seed = cfg.seed();
    PcnModel model = ds.kind == DatasetKind::token_sequences
                         ? PcnModel::make_stateful(classes, static_cast<int>(cfg.geti("embed_dim")),
                                                   static_cast<int>(cfg.geti("hidden_dim")), seed)
                         : PcnModel::make_stateless(classes, ds.dim,
                                                    static_cast<int>(cfg.geti("hidden_dim")), seed);
    PcnTrainOptions opt;
    opt.epochs = static_cast<int>(cfg.geti("epochs"));
    opt.lr = cfg.getd("lr");
    opt.beta1 = cfg.getd("beta1");
    opt.beta2 = cfg.getd("beta2");
    opt.adam_eps = cfg.getd("adam_eps");
    opt.seed = seed;
    std::vector<double> trace = model.train(ds, opt);

    fs::path model_path = cfg.is_set("model") ? fs::path(cfg.text("model")) : out / "model.lmn";
    model.save(model_path);
    std::ostringstream tr;
    for (size_t e = 0; e < trace.size(); ++e) tr << e << "\t" << MetricReport::format(trace[e]) << "\n";
    write_text(out / "pcn_loss_trace.tsv", tr.str());
    std::cout << "trained pcn: mean ce " << MetricReport::format(trace.front()) << " -> "
              << MetricReport::format(trace.back()) << "; saved " << model_path.string() << "\n";
    return 0;
}

int cmd_train_combiner(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    LoadedModel lm = load_model(cfg);
    if (!cfg.is_set("data")) throw ConfigError("data", "required key is missing");
    EpisodeDataset train = load_jsonl(cfg.text("data"));
    if (train.vocab > lm.pcn.vocab) throw ConfigError("data", "dataset has more classes than the model");
    train.vocab = lm.pcn.vocab;

    MemoryConfig mem = memory_config(cfg, lm.pcn.vocab, lm.pcn.hidden_dim);
    uint64_t seed = cfg.seed();
    fs::path combiner_path = out / "combiner.lmn";
    std::string kind = cfg.text("combiner_kind");

    if (kind == "fixed") {
        // Grid-search theta on a held-out tail of the training episodes.
        double frac = cfg.getd("val_fraction");
        size_t val_n = std::max<size_t>(1, static_cast<size_t>(frac * static_cast<double>(train.episodes.size())));
        EpisodeDataset val = train;
        val.episodes.assign(train.episodes.end() - static_cast<long>(val_n), train.episodes.end());
        FixedThetaFit fit = fit_fixed_theta(lm.pcn, mem, val, static_cast<int>(cfg.geti("threads")));
        save_fixed_combiner(combiner_path, lm.pcn, fit.combiner.theta);
        std::ostringstream gr;
        for (auto [th, nll] : fit.grid) gr << MetricReport::format(th) << "\t" << MetricReport::format(nll) << "\n";
        write_text(out / "theta_grid.tsv", gr.str());
        std::cout << "fitted theta = " << fit.combiner.theta << "; saved " << combiner_path.string() << "\n";
    } else if (kind == "rnn") {
        RnnCombiner comb = RnnCombiner::create(lm.pcn.hidden_dim, static_cast<int>(cfg.geti("state_dim")), seed);
        CombinerTrainOptions opt;
        opt.epochs = static_cast<int>(cfg.geti("combiner_epochs"));
        opt.lr = cfg.getd("combiner_lr");
        opt.beta1 = cfg.getd("beta1");
        opt.beta2 = cfg.getd("beta2");
        opt.adam_eps = cfg.getd("adam_eps");
        opt.seed = seed;
        std::vector<double> trace = combiner_train(lm.pcn, comb, mem, train, opt);
        comb.append_to_checkpoint(combiner_path, lm.pcn);
        std::ostringstream tr;
        for (size_t e = 0; e < trace.size(); ++e) tr << e + 1 << "\t" << MetricReport::format(trace[e]) << "\n";
        write_text(out / "combiner_loss_trace.tsv", tr.str());
        std::cout << "trained combiner: mean nll " << MetricReport::format(trace.front()) << " -> "
                  << MetricReport::format(trace.back()) << "; saved " << combiner_path.string() << "\n";
    } else {
        throw ConfigError("combiner_kind", "expected fixed or rnn, got '" + kind + "'");
    }
    return 0;
}

int cmd_run_online(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    LoadedModel lm = load_model(cfg);
    EpisodeDataset ds = load_run_data(cfg);
    if (ds.vocab > lm.pcn.vocab) throw ConfigError("data", "dataset has more classes than the model");
    ds.vocab = lm.pcn.vocab;

    RunOptions opt;
    opt.mode = parse_mode(cfg.text("mode"));
    opt.policy = parse_policy(cfg.text("policy"));
    opt.persist_memory = cfg.getb("persist_memory");
    opt.threads = static_cast<int>(cfg.geti("threads"));
    opt.seed = cfg.seed();

    FixedCombiner fixed = lm.fixed.value_or(FixedCombiner{cfg.getd("theta")});
    const RnnCombiner* rnn = lm.rnn ? &*lm.rnn : nullptr;
    if (opt.mode == SessionMode::lmn && !rnn)
        throw ConfigError("mode", "lmn mode needs a checkpoint with a trained gating RNN");

    MemoryConfig mem = memory_config(cfg, lm.pcn.vocab, lm.pcn.hidden_dim);
    RunResult rr = run_stream(lm.pcn, ds, mem, opt, &fixed, rnn);
    MetricReport rep = compute_metrics(rr.episodes, cfg.getb("second_occurrence"), ds.seen_labels);

    write_text(out / "report.txt", rep.to_text());
    write_text(out / "report.json", rep.to_json().dump(2) + "\n");
    std::ostringstream tr;
    write_trace(rr, tr);
    write_text(out / "trace.tsv", tr.str());
    std::cout << rep.to_text();
    return 0;
}

int cmd_ablate(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    LoadedModel lm = load_model(cfg);
    EpisodeDataset ds = load_run_data(cfg);
    if (ds.vocab > lm.pcn.vocab) throw ConfigError("data", "dataset has more classes than the model");
    ds.vocab = lm.pcn.vocab;

    std::vector<SessionMode> modes;
    for (const auto& m : split_csv(cfg.text("modes"))) modes.push_back(parse_mode(m));
    std::vector<WritePolicy> policies;
    for (const auto& p : split_csv(cfg.text("policies"))) policies.push_back(parse_policy(p));
    if (modes.empty()) throw ConfigError("modes", "empty mode list");
    if (policies.empty()) throw ConfigError("policies", "empty policy list");

    RunOptions opt;
    opt.threads = static_cast<int>(cfg.geti("threads"));
    opt.seed = cfg.seed();
    FixedCombiner fixed = lm.fixed.value_or(FixedCombiner{cfg.getd("theta")});
    const RnnCombiner* rnn = lm.rnn ? &*lm.rnn : nullptr;
    for (SessionMode m : modes)
        if (m == SessionMode::lmn && !rnn)
            throw ConfigError("modes", "lmn mode needs a checkpoint with a trained gating RNN");

    MemoryConfig mem = memory_config(cfg, lm.pcn.vocab, lm.pcn.hidden_dim);
    AblationTable table =
        ablate(lm.pcn, ds, mem, modes, policies, opt, cfg.getb("second_occurrence"), &fixed, rnn);
    write_text(out / "ablation.txt", table.to_text());
    write_text(out / "ablation.csv", table.to_csv());
    std::cout << table.to_text();
    return 0;
}

int cmd_gradcheck(const Config& cfg) {
    fs::path out = cfg.text("out");
    cfg.write_echo(out);
    auto results = run_gradcheck_suites(cfg.seed(), static_cast<int>(cfg.geti("gc_instances")),
                                        cfg.getd("gc_eps"), cfg.getd("gc_tol"));
    bool all_pass = true;
    std::ostringstream os;
    for (const auto& r : results) {
        os << r.component << "\tmax_rel_err " << r.max_rel_err << "\t" << (r.pass ? "pass" : "FAIL")
           << " (" << r.instances << " instances)\n";
        all_pass = all_pass && r.pass;
    }
    write_text(out / "gradcheck.txt", os.str());
    std::cout << os.str();
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    ParsedArgs args;
    try {
        args = parse_args(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage(std::cerr);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (args.command == "help") {
            usage(std::cout);
            return 0;
        }
        if (args.command == "gen-data") return cmd_gen_data(args.cfg);
        if (args.command == "train-pcn") return cmd_train_pcn(args.cfg);
        if (args.command == "train-combiner") return cmd_train_combiner(args.cfg);
        if (args.command == "run-online") return cmd_run_online(args.cfg);
        if (args.command == "ablate") return cmd_ablate(args.cfg);
        if (args.command == "gradcheck") return cmd_gradcheck(args.cfg);
        std::cerr << "error: unknown command '" << args.command << "'\n";
        return usage(std::cerr);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
