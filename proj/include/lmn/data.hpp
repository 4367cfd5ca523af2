#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "lmn/numcore.hpp"
#include "lmn/prng.hpp"

namespace lmn {

enum class DatasetKind { token_sequences, labeled_vectors };

// One deployment sequence. Token episodes store the raw token stream; the
// prediction steps are (tokens[i] -> tokens[i+1]). Vector episodes store
// explicit (x, y) steps.
struct Episode {
    std::vector<int> tokens;
    std::vector<Vec> xs;
    std::vector<int> ys;

    int steps(DatasetKind kind) const {
        if (kind == DatasetKind::token_sequences)
            return tokens.empty() ? 0 : static_cast<int>(tokens.size()) - 1;
        return static_cast<int>(ys.size());
    }
};

struct EpisodeDataset {
    DatasetKind kind = DatasetKind::token_sequences;
    int vocab = 0;  // V: class / token count
    std::vector<std::string> names;  // id -> token/label string, first-appearance order
    std::vector<Episode> episodes;
    std::set<int> seen_labels;  // annotation: labels known at batch-training time
    int dim = 0;                // feature dimension, labeled_vectors only

    int intern(const std::string& tok) {
        auto it = ids_.find(tok);
        if (it != ids_.end()) return it->second;
        int id = vocab++;
        ids_[tok] = id;
        names.push_back(tok);
        return id;
    }

    int find(const std::string& tok) const {
        auto it = ids_.find(tok);
        return it == ids_.end() ? -1 : it->second;
    }

    void validate() const {
        for (const auto& ep : episodes) {
            if (kind == DatasetKind::token_sequences) {
                require(!ep.tokens.empty(), "dataset: empty episode");
                for (int t : ep.tokens) require(t >= 0 && t < vocab, "dataset: token id out of range");
            } else {
                require(!ep.ys.empty(), "dataset: empty episode");
                require(ep.xs.size() == ep.ys.size(), "dataset: step count mismatch");
                for (int y : ep.ys) require(y >= 0 && y < vocab, "dataset: label id out of range");
                for (const auto& x : ep.xs)
                    require(static_cast<int>(x.size()) == dim, "dataset: inconsistent vector dimension");
            }
        }
    }

private:
    std::unordered_map<std::string, int> ids_;
};

struct GeneratorSpec {
    uint64_t seed = 0;
    int vocab = 0;
    int episodes = 0;
    int mean_length = 0;       // episode lengths drawn uniformly in [0.8L, 1.2L]
    double repeat_bias = 0.0;  // rho: P(next token drawn from episode-local history)
    int home_set = 5;

    // labeled_vectors task
    int dim = 16;
    int seen = 0;
    int unseen = 0;
    double spread = 0.25;
    int test_episodes = 0;
    int picks_per_episode = 5;
    int test_episode_length = 10;
    int train_episode_length = 10;
    int combiner_episodes = 0;   // deployment-shaped streams for gate training
    int combiner_novel = 0;      // extra classes used only in those streams
    bool test_picks_unseen_only = false;
};

// Repeat-heavy token sequences. Each episode opens with a private home set
// of `home_set` distinct tokens, then grows by a Polya urn: with probability
// rho the next token is drawn from the episode's own emitted history, else
// uniformly from the whole vocabulary. At rho = 1 every post-preamble token
// is therefore a repeat of an earlier episode token. Labels are simply the
// next tokens.
inline EpisodeDataset gen_repeat_markov(const GeneratorSpec& spec) {
    require(spec.vocab >= 2, "gen_repeat_markov: vocabulary must have at least 2 tokens");
    require(spec.repeat_bias >= 0.0 && spec.repeat_bias <= 1.0, "gen_repeat_markov: rho must be in [0,1]");
    require(spec.episodes >= 1, "gen_repeat_markov: episode count must be positive");
    require(spec.home_set >= 1 && spec.home_set <= spec.vocab, "gen_repeat_markov: home set larger than vocabulary");
    require(spec.mean_length > spec.home_set, "gen_repeat_markov: length must exceed the home set");

    Prng rng(spec.seed);
    EpisodeDataset ds;
    ds.kind = DatasetKind::token_sequences;
    for (int v = 0; v < spec.vocab; ++v) ds.intern(std::to_string(v));

    int lo = std::max(spec.home_set + 1, static_cast<int>(0.8 * spec.mean_length));
    int hi = std::max(lo, static_cast<int>(1.2 * spec.mean_length));
    for (int e = 0; e < spec.episodes; ++e) {
        int len = lo + rng.below(hi - lo + 1);
        Episode ep;
        ep.tokens = rng.distinct(spec.home_set, spec.vocab);
        ep.tokens.reserve(static_cast<size_t>(len));
        for (int t = spec.home_set; t < len; ++t) {
            int tok;
            if (rng.uniform() < spec.repeat_bias)
                tok = ep.tokens[static_cast<size_t>(rng.below(t))];
            else
                tok = rng.below(spec.vocab);
            ep.tokens.push_back(tok);
        }
        ds.episodes.push_back(std::move(ep));
    }
    for (int v = 0; v < spec.vocab; ++v) ds.seen_labels.insert(v);
    ds.validate();
    return ds;
}

// Gaussian-cluster label streams with a seen/unseen class split. Classes are
// isotropic Gaussians whose centers are rejection-sampled to stay at least
// 4x the spread apart. Train episodes draw seen classes only; each test
// episode picks `picks_per_episode` classes uniformly from all of them, then
// emits a stream covering every picked class at least twice.
//
// Class id layout: [0, seen) are batch-training classes, [seen, seen+unseen)
// appear only at deployment, and [seen+unseen, total) are reserved for the
// gate-training streams (`combiner_novel`): classes the deployed PCN has
// never been trained on, so the gate can learn what a new label looks like
// without touching the evaluation's unseen block.
struct LabelStream {
    EpisodeDataset train;
    EpisodeDataset test;
    EpisodeDataset combiner;  // deployment-shaped seen-only streams; may be empty
    std::vector<Vec> centers;
};

inline LabelStream gen_label_stream(const GeneratorSpec& spec) {
    int total = spec.seen + spec.unseen + spec.combiner_novel;
    require(spec.vocab == 0 || spec.vocab == total, "gen_label_stream: vocab must equal the class count");
    require(spec.seen >= 1, "gen_label_stream: need at least one seen class");
    require(spec.picks_per_episode >= 1 && spec.picks_per_episode <= total,
            "gen_label_stream: infeasible picks per episode");
    require(spec.test_episode_length >= 2 * spec.picks_per_episode,
            "gen_label_stream: test episodes too short to cover each picked class twice");
    require(spec.spread > 0.0, "gen_label_stream: spread must be positive");

    Prng rng(spec.seed);
    std::vector<Vec> centers;
    double min_sep = 4.0 * spec.spread;
    while (static_cast<int>(centers.size()) < total) {
        Vec c(static_cast<size_t>(spec.dim));
        for (double& x : c) x = rng.normal();
        bool ok = true;
        for (const auto& o : centers) {
            double d2 = 0.0;
            for (size_t i = 0; i < c.size(); ++i) d2 += (c[i] - o[i]) * (c[i] - o[i]);
            if (std::sqrt(d2) < min_sep) {
                ok = false;
                break;
            }
        }
        if (ok) centers.push_back(std::move(c));
    }

    auto draw = [&](int cls) {
        Vec x = centers[static_cast<size_t>(cls)];
        for (double& v : x) v += spec.spread * rng.normal();
        return x;
    };

    LabelStream out;
    out.centers = centers;
    for (auto* ds : {&out.train, &out.test, &out.combiner}) {
        ds->kind = DatasetKind::labeled_vectors;
        ds->dim = spec.dim;
        for (int c = 0; c < total; ++c) ds->intern("c" + std::to_string(c));
        for (int c = 0; c < spec.seen; ++c) ds->seen_labels.insert(c);
    }

    for (int e = 0; e < spec.episodes; ++e) {
        Episode ep;
        for (int t = 0; t < spec.train_episode_length; ++t) {
            int cls = rng.below(spec.seen);
            ep.xs.push_back(draw(cls));
            ep.ys.push_back(cls);
        }
        out.train.episodes.push_back(std::move(ep));
    }

    // Picked-class episode: cover every picked class twice, fill uniformly,
    // shuffle.
    auto picked_episode = [&](const std::vector<int>& pool) {
        std::vector<int> idx = rng.distinct(spec.picks_per_episode, static_cast<int>(pool.size()));
        std::vector<int> picked;
        for (int i : idx) picked.push_back(pool[static_cast<size_t>(i)]);
        std::vector<int> order;
        for (int c : picked) {
            order.push_back(c);
            order.push_back(c);
        }
        while (static_cast<int>(order.size()) < spec.test_episode_length)
            order.push_back(picked[static_cast<size_t>(rng.below(spec.picks_per_episode))]);
        rng.shuffle(order);
        Episode ep;
        for (int cls : order) {
            ep.xs.push_back(draw(cls));
            ep.ys.push_back(cls);
        }
        return ep;
    };

    // Deployment pool: seen plus unseen. The few-shot variant evaluates on
    // unseen classes only.
    std::vector<int> test_pool;
    if (spec.test_picks_unseen_only) {
        require(spec.unseen >= spec.picks_per_episode, "gen_label_stream: infeasible picks per episode");
        for (int c = spec.seen; c < spec.seen + spec.unseen; ++c) test_pool.push_back(c);
    } else {
        for (int c = 0; c < spec.seen + spec.unseen; ++c) test_pool.push_back(c);
    }
    for (int e = 0; e < spec.test_episodes; ++e) out.test.episodes.push_back(picked_episode(test_pool));

    // Gate-training streams: seen classes mixed with the reserved novel
    // block, so these sequences look like deployment (familiar labels plus
    // labels the PCN has never been trained on).
    if (spec.combiner_episodes > 0) {
        std::vector<int> comb_pool;
        for (int c = 0; c < spec.seen; ++c) comb_pool.push_back(c);
        for (int c = spec.seen + spec.unseen; c < total; ++c) comb_pool.push_back(c);
        require(static_cast<int>(comb_pool.size()) >= spec.picks_per_episode,
                "gen_label_stream: infeasible picks per episode");
        for (int e = 0; e < spec.combiner_episodes; ++e)
            out.combiner.episodes.push_back(picked_episode(comb_pool));
        out.combiner.validate();
    }
    out.train.validate();
    out.test.validate();
    return out;
}

// JSONL: one episode per line. Token episodes are arrays of token strings;
// vector episodes are arrays of {"x": [...], "y": "label"}. The vocabulary
// grows in first-appearance order; pass `vocab_from` to extend an existing
// mapping (e.g. load test data against the training vocabulary).
inline EpisodeDataset load_jsonl(const std::filesystem::path& path,
                                 const EpisodeDataset* vocab_from = nullptr) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open dataset: " + path.string());

    EpisodeDataset ds;
    if (vocab_from) {
        ds.kind = vocab_from->kind;
        ds.dim = vocab_from->dim;
        ds.seen_labels = vocab_from->seen_labels;
        for (const auto& n : vocab_from->names) ds.intern(n);
    }

    bool kind_known = vocab_from != nullptr;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(std::string("bad JSON: ") + ex.what(), lineno, "line");
        }
        if (!j.is_array() || j.empty()) throw ParseError("episode must be a non-empty JSON array", lineno, "line");

        bool vectors = j[0].is_object();
        if (!kind_known) {
            ds.kind = vectors ? DatasetKind::labeled_vectors : DatasetKind::token_sequences;
            kind_known = true;
        } else if (vectors != (ds.kind == DatasetKind::labeled_vectors)) {
            throw ParseError("mixed episode kinds in one dataset", lineno, "line");
        }

        Episode ep;
        for (const auto& el : j) {
            if (ds.kind == DatasetKind::token_sequences) {
                if (!el.is_string()) throw ParseError("token episodes must contain strings", lineno, "line");
                ep.tokens.push_back(ds.intern(el.get<std::string>()));
            } else {
                if (!el.is_object() || !el.contains("x") || !el.contains("y"))
                    throw ParseError("vector steps must be {\"x\": [...], \"y\": label}", lineno, "line");
                Vec x;
                for (const auto& v : el["x"]) {
                    if (!v.is_number()) throw ParseError("x must be an array of numbers", lineno, "line");
                    x.push_back(v.get<double>());
                }
                if (ds.dim == 0) ds.dim = static_cast<int>(x.size());
                if (static_cast<int>(x.size()) != ds.dim)
                    throw ParseError("inconsistent vector dimension", lineno, "line");
                ep.xs.push_back(std::move(x));
                ep.ys.push_back(ds.intern(el["y"].get<std::string>()));
            }
        }
        ds.episodes.push_back(std::move(ep));
    }
    if (ds.episodes.empty()) throw ParseError("no episodes", lineno, "line");
    if (!vocab_from) ds.seen_labels.clear();
    ds.validate();
    return ds;
}

inline void save_jsonl(const EpisodeDataset& ds, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    for (const auto& ep : ds.episodes) {
        nlohmann::json j = nlohmann::json::array();
        if (ds.kind == DatasetKind::token_sequences) {
            for (int t : ep.tokens) j.push_back(ds.names[static_cast<size_t>(t)]);
        } else {
            for (size_t i = 0; i < ep.ys.size(); ++i)
                j.push_back({{"x", ep.xs[i]}, {"y", ds.names[static_cast<size_t>(ep.ys[i])]}});
        }
        os << j.dump() << '\n';
    }
}

}  // namespace lmn
