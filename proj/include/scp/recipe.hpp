#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "scp/data_io.hpp"
#include "scp/error.hpp"
#include "scp/fairness.hpp"
#include "scp/nn.hpp"
#include "scp/rng.hpp"
#include "scp/snnl.hpp"

namespace scp {

// ---------------------------------------------------------------------------
// Configuration and trace types
// ---------------------------------------------------------------------------

struct RecipeConfig {
    double prune_ratio = 0.02;       // fraction of current channels removed per iteration
    int layer = 0;                   // 1-based tap/prune layer; 0 = last conv layer
    double temperature = 1.0;        // SNNL temperature
    double max_accuracy_drop = 0.02; // stop when original F1 - current F1 exceeds this
    double min_fairness_gain = 0.001; // stop when the per-iteration Eodd decrease falls below
    int max_iters = 10;
    int finetune_epochs = 2;
    double finetune_lr = 0.05;
    int batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (prune_ratio <= 0.0 || prune_ratio >= 1.0) {
            throw config_error("prune ratio must be in (0,1)");
        }
        if (max_accuracy_drop < 0.0) throw config_error("accuracy-drop threshold must be >= 0");
        if (min_fairness_gain < 0.0) throw config_error("fairness-gain threshold must be >= 0");
        if (max_iters < 1) throw config_error("max_iters must be >= 1");
        if (finetune_epochs < 0) throw config_error("finetune epochs must be >= 0");
        if (finetune_lr <= 0.0) throw config_error("finetune learning rate must be > 0");
        if (batch_size < 2) throw config_error("batch size must be >= 2");
        if (temperature <= 0.0) throw config_error("temperature must be > 0");
    }

    int resolve_layer(const ToyCnn& model) const {
        const int l = layer == 0 ? model.num_conv_layers() : layer;
        if (l < 1 || l > model.num_conv_layers()) {
            throw config_error("prune layer " + std::to_string(layer) + " out of range [1," +
                               std::to_string(model.num_conv_layers()) + "]");
        }
        return l;
    }
};

enum class StopReason { accuracy_drop, fairness_plateau, max_iters, channel_floor };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::accuracy_drop: return "accuracy_drop";
        case StopReason::fairness_plateau: return "fairness_plateau";
        case StopReason::max_iters: return "max_iters";
        case StopReason::channel_floor: return "channel_floor";
    }
    return "unknown";
}

struct TraceEntry {
    int iteration = 0;
    std::vector<int> pruned_channels; // original-model channel numbering
    int channels_remaining = 0;
    double f1_avg = 0.0;
    double f1_group0 = 0.0;
    double f1_group1 = 0.0;
    double eopp0 = 0.0;
    double eopp1 = 0.0;
    double eodd = 0.0;
    double mean_score = 0.0; // mean SNNL-Fair score of the table this iteration pruned from
};

struct RecipeTrace {
    std::vector<TraceEntry> entries;
    StopReason stop_reason = StopReason::max_iters;
    // original unpruned model, measured before iteration 1
    double baseline_f1 = 0.0;
    double baseline_f1_group0 = 0.0;
    double baseline_f1_group1 = 0.0;
    double baseline_eopp0 = 0.0;
    double baseline_eopp1 = 0.0;
    double baseline_eodd = 0.0;
    double baseline_mean_score = 0.0;
    int baseline_channels = 0;
    // returned model, measured after the loop (reflects any rollback)
    double final_f1 = 0.0;
    double final_eodd = 0.0;
    double final_mean_score = 0.0;
};

// ---------------------------------------------------------------------------
// Channel selection
// ---------------------------------------------------------------------------

// The max(1, floor(ratio * K)) channels with the smallest scores, ties broken
// toward the lower channel index, capped at K-1 so a layer always keeps at
// least one channel. Returned indices are sorted ascending.
inline std::vector<int> select_prune_set(const ChannelScoreTable& scores, double prune_ratio) {
    if (prune_ratio <= 0.0 || prune_ratio >= 1.0) {
        throw config_error("prune ratio must be in (0,1)");
    }
    const int k = scores.num_channels();
    if (k < 2) throw config_error("cannot select channels to prune from fewer than 2");
    int n_p = std::max(1, static_cast<int>(std::floor(prune_ratio * k)));
    n_p = std::min(n_p, k - 1);
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
        return scores.scores[static_cast<std::size_t>(a)] <
               scores.scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> picked(order.begin(), order.begin() + n_p);
    std::sort(picked.begin(), picked.end());
    return picked;
}

// ---------------------------------------------------------------------------
// One prune + fine-tune iteration
// ---------------------------------------------------------------------------

// Plain SGD over shuffled minibatches; used for both initial training and
// the post-prune fine-tuning passes.
inline void sgd_train(ToyCnn& model, const Dataset& train, int epochs, double lr, int batch_size,
                      std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(mix_seed(seed, 0xf17e + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (int start = 0; start + 1 < train.size(); start += batch_size) {
            const int count = std::min(batch_size, train.size() - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + count);
            backward_and_step(model, train.gather(idx), lr);
        }
    }
}

namespace detail {

struct EvalMetrics {
    PrfReport prf;
    GapMetrics gaps;
};

inline EvalMetrics eval_metrics(const ToyCnn& model, const Dataset& eval_set) {
    const std::vector<int> preds = evaluate(model, eval_set);
    const ConfusionTensor conf =
        build_confusion(preds, eval_set.labels, eval_set.groups, eval_set.num_classes);
    return {group_prf(conf), eopp_eodd(conf)};
}

} // namespace detail

struct IterationResult {
    ToyCnn model;
    TraceEntry entry;
    ChannelScoreTable scores;          // table the prune set was selected from
    std::vector<int> pruned_current;   // prune set in current-model numbering
};

// Steps: score the tapped layer on the training set, remove the lowest
// scoring channels, fine-tune on the training set, measure on the eval set.
// origin_map translates current channel indices to original-model numbering
// for the trace.
inline IterationResult prune_iteration(const ToyCnn& model, const Dataset& train,
                                       const Dataset& eval_set, const RecipeConfig& cfg,
                                       int iteration, const std::vector<int>& origin_map) {
    cfg.validate();
    const int layer = cfg.resolve_layer(model);
    if (model.channels_at(layer) < 2) {
        throw config_error("layer " + std::to_string(layer) + " has too few channels to prune");
    }

    IterationResult res;
    res.scores = snnl_fair_scores(model, train, layer, cfg.temperature, cfg.batch_size,
                                  mix_seed(cfg.seed, 0x5c02e000 + static_cast<std::uint64_t>(iteration)));
    res.pruned_current = select_prune_set(res.scores, cfg.prune_ratio);
    res.model = remove_channels(model, layer, res.pruned_current);

    sgd_train(res.model, train, cfg.finetune_epochs, cfg.finetune_lr, cfg.batch_size,
              mix_seed(cfg.seed, 0xf73e000 + static_cast<std::uint64_t>(iteration)));

    const detail::EvalMetrics m = detail::eval_metrics(res.model, eval_set);
    res.entry.iteration = iteration;
    for (const int c : res.pruned_current) {
        res.entry.pruned_channels.push_back(origin_map[static_cast<std::size_t>(c)]);
    }
    res.entry.channels_remaining = res.model.channels_at(layer);
    res.entry.f1_avg = m.prf.average.f1;
    res.entry.f1_group0 = m.prf.group[0].f1;
    res.entry.f1_group1 = m.prf.group[1].f1;
    res.entry.eopp0 = m.gaps.eopp0;
    res.entry.eopp1 = m.gaps.eopp1;
    res.entry.eodd = m.gaps.eodd;
    res.entry.mean_score = res.scores.mean_score();
    return res;
}

// ---------------------------------------------------------------------------
// The full recipe loop
// ---------------------------------------------------------------------------

struct RecipeResult {
    ToyCnn model;
    RecipeTrace trace;
};

// Iterates prune_iteration until a stopping criterion fires, checked after
// each iteration in this order:
//   (a) accuracy drop vs the ORIGINAL model beyond max_accuracy_drop
//       -> roll the iteration back and return the previous model;
//   (b) Eodd improvement vs the PREVIOUS iteration below min_fairness_gain
//       -> keep the current model;
//   (c) iteration cap;
//   (d) channel floor (layer cannot be pruned again).
inline RecipeResult run_recipe(const ToyCnn& model, const Dataset& train, const Dataset& eval_set,
                               const RecipeConfig& cfg) {
    cfg.validate();
    model.validate();
    const int layer = cfg.resolve_layer(model);

    RecipeResult out;
    out.model = model;
    RecipeTrace& trace = out.trace;

    {
        const detail::EvalMetrics m = detail::eval_metrics(model, eval_set);
        trace.baseline_f1 = m.prf.average.f1;
        trace.baseline_f1_group0 = m.prf.group[0].f1;
        trace.baseline_f1_group1 = m.prf.group[1].f1;
        trace.baseline_eopp0 = m.gaps.eopp0;
        trace.baseline_eopp1 = m.gaps.eopp1;
        trace.baseline_eodd = m.gaps.eodd;
        trace.baseline_channels = model.channels_at(layer);
        trace.baseline_mean_score =
            snnl_fair_scores(model, train, layer, cfg.temperature, cfg.batch_size,
                             mix_seed(cfg.seed, 0x5c02e000))
                .mean_score();
    }

    std::vector<int> origin_map(static_cast<std::size_t>(model.channels_at(layer)));
    std::iota(origin_map.begin(), origin_map.end(), 0);

    double prev_eodd = trace.baseline_eodd;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        if (out.model.channels_at(layer) < 2) {
            trace.stop_reason = StopReason::channel_floor;
            break;
        }
        IterationResult ir = prune_iteration(out.model, train, eval_set, cfg, iter, origin_map);
        trace.entries.push_back(ir.entry);

        if (trace.baseline_f1 - ir.entry.f1_avg > cfg.max_accuracy_drop) {
            trace.stop_reason = StopReason::accuracy_drop; // roll back, keep previous model
            break;
        }

        // iteration accepted
        std::vector<int> next_map;
        std::size_t removed = 0;
        for (std::size_t c = 0; c < origin_map.size(); ++c) {
            if (removed < ir.pruned_current.size() &&
                static_cast<int>(c) == ir.pruned_current[removed]) {
                ++removed;
                continue;
            }
            next_map.push_back(origin_map[c]);
        }
        origin_map = std::move(next_map);
        out.model = std::move(ir.model);

        if (prev_eodd - ir.entry.eodd < cfg.min_fairness_gain) {
            trace.stop_reason = StopReason::fairness_plateau;
            break;
        }
        prev_eodd = ir.entry.eodd;

        if (iter == cfg.max_iters) {
            trace.stop_reason = StopReason::max_iters;
            break;
        }
    }

    {
        const detail::EvalMetrics m = detail::eval_metrics(out.model, eval_set);
        trace.final_f1 = m.prf.average.f1;
        trace.final_eodd = m.gaps.eodd;
        trace.final_mean_score =
            snnl_fair_scores(out.model, train, layer, cfg.temperature, cfg.batch_size,
                             mix_seed(cfg.seed, 0x5c02efff))
                .mean_score();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json trace_entry_json(const TraceEntry& e) {
    nlohmann::ordered_json j;
    j["iteration"] = e.iteration;
    j["pruned_channels"] = e.pruned_channels;
    j["channels_remaining"] = e.channels_remaining;
    j["f1_avg"] = e.f1_avg;
    j["f1_group0"] = e.f1_group0;
    j["f1_group1"] = e.f1_group1;
    j["eopp0"] = e.eopp0;
    j["eopp1"] = e.eopp1;
    j["eodd"] = e.eodd;
    j["mean_score"] = e.mean_score;
    return j;
}

// JSON lines: one record per iteration plus a trailing summary record.
inline std::string trace_jsonl(const RecipeTrace& trace) {
    std::string out;
    for (const auto& e : trace.entries) {
        out += trace_entry_json(e).dump();
        out += "\n";
    }
    nlohmann::ordered_json summary;
    summary["summary"] = true;
    summary["stop_reason"] = to_string(trace.stop_reason);
    summary["iterations"] = trace.entries.size();
    summary["baseline"] = {{"f1_avg", trace.baseline_f1},
                           {"f1_group0", trace.baseline_f1_group0},
                           {"f1_group1", trace.baseline_f1_group1},
                           {"eopp0", trace.baseline_eopp0},
                           {"eopp1", trace.baseline_eopp1},
                           {"eodd", trace.baseline_eodd},
                           {"mean_score", trace.baseline_mean_score},
                           {"channels", trace.baseline_channels}};
    summary["final"] = {{"f1_avg", trace.final_f1},
                        {"eodd", trace.final_eodd},
                        {"mean_score", trace.final_mean_score}};
    out += summary.dump();
    out += "\n";
    return out;
}

// Plot-ready CSV: iteration 0 is the unpruned baseline.
inline std::string trace_csv(const RecipeTrace& trace) {
    std::string out = "iteration,f1_avg,eopp0,eopp1,eodd,mean_score\n";
    char buf[192];
    std::snprintf(buf, sizeof(buf), "0,%.9g,%.9g,%.9g,%.9g,%.9g\n", trace.baseline_f1,
                  trace.baseline_eopp0, trace.baseline_eopp1, trace.baseline_eodd,
                  trace.baseline_mean_score);
    out += buf;
    for (const auto& e : trace.entries) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.iteration, e.f1_avg,
                      e.eopp0, e.eopp1, e.eodd, e.mean_score);
        out += buf;
    }
    return out;
}

} // namespace scp
