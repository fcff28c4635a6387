// scp: fairness-aware channel pruning toolkit.
//
// Subcommands: gen-data, train, score-channels, prune, run-recipe,
// eval-fairness, report. Exit codes: 0 success, 2 usage/config error,
// 3 data-format error, 4 runtime numeric failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scp/checkpoint.hpp"
#include "scp/data_io.hpp"
#include "scp/error.hpp"
#include "scp/fairness.hpp"
#include "scp/nn.hpp"
#include "scp/recipe.hpp"
#include "scp/snnl.hpp"
#include "scp/version.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// SCP_SEED wins over --seed when set.
std::uint64_t resolve_seed(std::uint64_t cli_seed) {
    const char* env = std::getenv("SCP_SEED");
    if (!env || !*env) return cli_seed;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(env, &pos);
        if (pos != std::string(env).size()) throw std::invalid_argument("trailing characters");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw scp::config_error(std::string("SCP_SEED is not an unsigned integer: \"") + env +
                                "\"");
    }
}

ordered_json manifest_base(const std::string& command, std::uint64_t seed) {
    ordered_json m;
    m["command"] = command;
    m["toolkit_version"] = scp::version;
    m["seed"] = seed;
    return m;
}

void write_manifest(const fs::path& path, const ordered_json& m) {
    scp::binio::write_file(path.string(), m.dump(2) + "\n");
}

// Dataset arguments accept either a directory holding <split>.scd or a file.
scp::Dataset load_dataset_arg(const std::string& path, const std::string& split) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= split + ".scd";
    if (!fs::exists(p)) {
        throw scp::config_error("dataset file does not exist: " + p.string());
    }
    return scp::load_dataset(p.string());
}

scp::ToyCnn load_model_arg(const std::string& path) {
    if (!fs::exists(path)) throw scp::config_error("model file does not exist: " + path);
    return scp::load_model(path).model;
}

struct Metrics {
    std::string name;
    std::optional<double> precision_g0, precision_g1, precision_avg, precision_diff;
    std::optional<double> recall_g0, recall_g1, recall_avg, recall_diff;
    std::optional<double> f1_g0, f1_g1, f1_diff;
    double f1_avg = 0.0;
    double eopp0 = 0.0, eopp1 = 0.0, eodd = 0.0;
};

Metrics metrics_from_report(const scp::FairnessReport& r, const std::string& name) {
    Metrics m;
    m.name = name;
    m.precision_g0 = r.prf.group[0].precision;
    m.precision_g1 = r.prf.group[1].precision;
    m.precision_avg = r.prf.average.precision;
    m.precision_diff = r.prf.difference.precision;
    m.recall_g0 = r.prf.group[0].recall;
    m.recall_g1 = r.prf.group[1].recall;
    m.recall_avg = r.prf.average.recall;
    m.recall_diff = r.prf.difference.recall;
    m.f1_g0 = r.prf.group[0].f1;
    m.f1_g1 = r.prf.group[1].f1;
    m.f1_diff = r.prf.difference.f1;
    m.f1_avg = r.prf.average.f1;
    m.eopp0 = r.gaps.eopp0;
    m.eopp1 = r.gaps.eopp1;
    m.eodd = r.gaps.eodd;
    return m;
}

ordered_json metrics_json(const Metrics& m, const scp::FairnessReport* rep) {
    ordered_json j;
    j["name"] = m.name;
    auto put = [&j](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("precision_group0", m.precision_g0);
    put("precision_group1", m.precision_g1);
    put("precision_avg", m.precision_avg);
    put("precision_diff", m.precision_diff);
    put("recall_group0", m.recall_g0);
    put("recall_group1", m.recall_g1);
    put("recall_avg", m.recall_avg);
    put("recall_diff", m.recall_diff);
    put("f1_group0", m.f1_g0);
    put("f1_group1", m.f1_g1);
    j["f1_avg"] = m.f1_avg;
    put("f1_diff", m.f1_diff);
    j["eopp0"] = m.eopp0;
    j["eopp1"] = m.eopp1;
    j["eodd"] = m.eodd;
    if (rep && rep->fate_eopp0) {
        j["baseline"] = rep->baseline_name;
        j["fate_eopp0"] = *rep->fate_eopp0;
        j["fate_eopp1"] = *rep->fate_eopp1;
        j["fate_eodd"] = *rep->fate_eodd;
    }
    return j;
}

Metrics load_metrics_file(const std::string& path) {
    if (!fs::exists(path)) throw scp::config_error("metrics file does not exist: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(scp::binio::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw scp::format_error(scp::format_error::code::bad_header,
                                path + ": unparsable JSON: " + e.what());
    }
    Metrics m;
    try {
        m.f1_avg = j.at("f1_avg").get<double>();
        m.eopp0 = j.at("eopp0").get<double>();
        m.eopp1 = j.at("eopp1").get<double>();
        m.eodd = j.at("eodd").get<double>();
    } catch (const nlohmann::json::exception&) {
        throw scp::format_error(scp::format_error::code::missing_column,
                                path + ": metrics JSON needs f1_avg, eopp0, eopp1, eodd");
    }
    m.name = j.value("name", fs::path(path).stem().string());
    auto opt = [&j](const char* key) -> std::optional<double> {
        if (j.contains(key)) return j.at(key).get<double>();
        return std::nullopt;
    };
    m.precision_g0 = opt("precision_group0");
    m.precision_g1 = opt("precision_group1");
    m.precision_avg = opt("precision_avg");
    m.precision_diff = opt("precision_diff");
    m.recall_g0 = opt("recall_group0");
    m.recall_g1 = opt("recall_group1");
    m.recall_avg = opt("recall_avg");
    m.recall_diff = opt("recall_diff");
    m.f1_g0 = opt("f1_group0");
    m.f1_g1 = opt("f1_group1");
    m.f1_diff = opt("f1_diff");
    return m;
}

scp::BaselineMetrics to_baseline(const Metrics& m) {
    scp::BaselineMetrics b;
    b.name = m.name;
    b.f1 = m.f1_avg;
    b.eopp0 = m.eopp0;
    b.eopp1 = m.eopp1;
    b.eodd = m.eodd;
    return b;
}

void print_metrics_table(const Metrics& m, const Metrics* baseline, double lambda) {
    auto line = [](const char* name, std::optional<double> p, std::optional<double> r,
                   std::optional<double> f) {
        std::printf("%-8s", name);
        for (const auto& v : {p, r, f}) {
            if (v) std::printf(" %10.4f", *v);
            else std::printf(" %10s", "");
        }
    };
    std::printf("%-8s %10s %10s %10s %10s %10s %10s\n", "", "Precision", "Recall", "F1-score",
                "Eopp0", "Eopp1", "Eodd");
    if (m.f1_g0) {
        line("group0", m.precision_g0, m.recall_g0, m.f1_g0);
        std::printf("\n");
        line("group1", m.precision_g1, m.recall_g1, m.f1_g1);
        std::printf("\n");
    }
    line("avg", m.precision_avg, m.recall_avg, m.f1_avg);
    std::printf(" %10.4f %10.4f %10.4f\n", m.eopp0, m.eopp1, m.eodd);
    if (m.f1_diff) {
        line("diff", m.precision_diff, m.recall_diff, m.f1_diff);
        std::printf("\n");
    }
    if (baseline) {
        const double f0 = scp::fate(m.f1_avg, baseline->f1_avg, m.eopp0, baseline->eopp0, lambda);
        const double f1 = scp::fate(m.f1_avg, baseline->f1_avg, m.eopp1, baseline->eopp1, lambda);
        const double fo = scp::fate(m.f1_avg, baseline->f1_avg, m.eodd, baseline->eodd, lambda);
        std::printf("%-8s %10s %10s %10s %10.4f %10.4f %10.4f  (vs %s)\n", "FATE", "", "", "", f0,
                    f1, fo, baseline->name.c_str());
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    scp::SyntheticConfig cfg;
    bool implicit = false;
    std::string out;
};

int run_gen_data(GenDataArgs& a) {
    a.cfg.seed = resolve_seed(a.cfg.seed);
    a.cfg.explicit_attribute = !a.implicit;
    a.cfg.validate();
    const scp::SyntheticData data = scp::gen_synthetic(a.cfg);

    fs::create_directories(a.out);
    const fs::path dir(a.out);
    ordered_json meta{{"rho", a.cfg.spurious_strength},
                      {"group_imbalance", a.cfg.group_imbalance},
                      {"noise_std", a.cfg.noise_std},
                      {"explicit_attribute", a.cfg.explicit_attribute},
                      {"seed", a.cfg.seed}};
    scp::save_dataset((dir / "train.scd").string(), data.train, meta);
    scp::save_dataset((dir / "eval.scd").string(), data.eval, meta);

    ordered_json m = manifest_base("gen-data", a.cfg.seed);
    m["config"] = {{"n", a.cfg.num_samples},
                   {"classes", a.cfg.num_classes},
                   {"channels", a.cfg.channels},
                   {"height", a.cfg.height},
                   {"width", a.cfg.width},
                   {"rho", a.cfg.spurious_strength},
                   {"imbalance", a.cfg.group_imbalance},
                   {"noise", a.cfg.noise_std},
                   {"explicit_attribute", a.cfg.explicit_attribute}};
    m["outputs"] = {{"train", (dir / "train.scd").string()},
                    {"eval", (dir / "eval.scd").string()}};
    write_manifest(dir / "manifest.json", m);
    std::cout << "wrote " << (dir / "train.scd").string() << " and "
              << (dir / "eval.scd").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out;
    int epochs = 5;
    double lr = 0.1;
    int batch = 32;
    std::uint64_t seed = 0;
};

int run_train(TrainArgs& a) {
    a.seed = resolve_seed(a.seed);
    const scp::Dataset train = load_dataset_arg(a.data, "train");
    const scp::Dataset eval_set = load_dataset_arg(a.data, "eval");

    scp::ToyCnn model =
        scp::default_toy_cnn(train.images.dim(1), train.images.dim(2), train.images.dim(3),
                             train.num_classes, scp::mix_seed(a.seed, 0x0de1));
    scp::sgd_train(model, train, a.epochs, a.lr, a.batch, scp::mix_seed(a.seed, 0x12a1));

    const std::vector<int> preds = scp::evaluate(model, eval_set);
    const scp::ConfusionTensor conf =
        scp::build_confusion(preds, eval_set.labels, eval_set.groups, eval_set.num_classes);
    const scp::PrfReport prf = scp::group_prf(conf);
    const scp::GapMetrics gaps = scp::eopp_eodd(conf);

    ordered_json meta{{"seed", a.seed},      {"epochs", a.epochs},
                      {"lr", a.lr},          {"batch", a.batch},
                      {"eval_f1", prf.average.f1}, {"eval_eodd", gaps.eodd}};
    scp::save_model(a.out, model, meta);

    ordered_json m = manifest_base("train", a.seed);
    m["config"] = {{"epochs", a.epochs}, {"lr", a.lr}, {"batch", a.batch}};
    m["inputs"] = {{"data", a.data}};
    m["outputs"] = {{"model", a.out}};
    m["results"] = {{"eval_f1", prf.average.f1},
                    {"eval_eopp0", gaps.eopp0},
                    {"eval_eopp1", gaps.eopp1},
                    {"eval_eodd", gaps.eodd}};
    write_manifest(a.out + ".manifest.json", m);
    std::cout << "eval F1 " << prf.average.f1 << ", Eodd " << gaps.eodd << ", model " << a.out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// score-channels
// ---------------------------------------------------------------------------

struct ScoreArgs {
    std::string model;
    std::string fmap;
    std::string data;
    std::string out;
    int layer = 0;
    double temp = 1.0;
    double auto_temp = 0.0; // quantile; 0 = off
    int batch = 32;
    std::uint64_t seed = 0;
};

int run_score_channels(ScoreArgs& a) {
    a.seed = resolve_seed(a.seed);
    if (!a.model.empty() && !a.fmap.empty()) {
        throw scp::config_error("--model and --fmap are mutually exclusive");
    }
    if (a.model.empty() && a.fmap.empty()) {
        throw scp::config_error("one of --model or --fmap is required");
    }
    scp::ChannelScoreTable table;
    ordered_json inputs;
    if (!a.fmap.empty()) {
        if (a.auto_temp > 0.0) {
            throw scp::config_error("--auto-temp needs a model; use --temp with --fmap");
        }
        if (!fs::exists(a.fmap)) throw scp::config_error("FMAP file does not exist: " + a.fmap);
        const scp::FeatureMaps fm = scp::load_feature_maps(a.fmap);
        table = scp::snnl_fair_scores(fm.maps, fm.labels, a.temp, a.batch, a.seed);
        inputs["fmap"] = a.fmap;
    } else {
        const scp::ToyCnn model = load_model_arg(a.model);
        if (a.data.empty()) throw scp::config_error("--data is required with --model");
        const scp::Dataset ds = load_dataset_arg(a.data, "train");
        const int layer = a.layer == 0 ? model.tap_layer : a.layer;
        if (a.auto_temp > 0.0) {
            a.temp = scp::calibrate_temperature(model, ds, layer, a.batch,
                                                scp::mix_seed(a.seed, 0xca1), a.auto_temp);
        }
        table = scp::snnl_fair_scores(model, ds, layer, a.temp, a.batch, a.seed);
        inputs["model"] = a.model;
        inputs["data"] = a.data;
    }
    scp::binio::write_file(a.out, scp::score_table_csv(table));

    ordered_json m = manifest_base("score-channels", a.seed);
    m["config"] = {{"layer", table.layer_index},
                   {"temp", a.temp},
                   {"batch", a.batch},
                   {"n_batches", table.n_batches}};
    m["inputs"] = inputs;
    m["outputs"] = {{"scores", a.out}};
    write_manifest(a.out + ".manifest.json", m);
    std::cout << "wrote " << a.out << " (" << table.num_channels() << " channels, "
              << table.n_batches << " batches)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

struct PruneArgs {
    std::string model;
    std::string data;
    std::string out;
    std::string channels; // explicit list "3,5"
    double prc = 2.0;     // percent
    bool prc_given = false;
    int layer = 0;
    int epochs = 0;
    double lr = 0.05;
    int batch = 32;
    double temp = 1.0;
    std::uint64_t seed = 0;
};

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::string cell =
            s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (cell.empty()) throw scp::config_error("empty entry in channel list");
        std::size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(cell, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != cell.size()) {
            throw scp::config_error("channel list entry is not an integer: \"" + cell + "\"");
        }
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

int run_prune(PruneArgs& a) {
    a.seed = resolve_seed(a.seed);
    scp::ToyCnn model = load_model_arg(a.model);
    const int layer = a.layer == 0 ? model.tap_layer : a.layer;
    if (!a.channels.empty() && a.prc_given) {
        throw scp::config_error("--channels and --prc are mutually exclusive");
    }

    std::vector<int> prune_set;
    if (!a.channels.empty()) {
        prune_set = parse_int_list(a.channels);
    } else {
        if (a.prc <= 0.0 || a.prc >= 100.0) {
            throw scp::config_error("--prc must be in (0,100) percent");
        }
        if (a.data.empty()) throw scp::config_error("--data is required when scoring channels");
        const scp::Dataset train = load_dataset_arg(a.data, "train");
        const scp::ChannelScoreTable table =
            scp::snnl_fair_scores(model, train, layer, a.temp, a.batch, a.seed);
        prune_set = scp::select_prune_set(table, a.prc / 100.0);
    }
    scp::ToyCnn pruned = scp::remove_channels(model, layer, prune_set);
    if (a.epochs > 0) {
        if (a.data.empty()) throw scp::config_error("--data is required for fine-tuning");
        const scp::Dataset train = load_dataset_arg(a.data, "train");
        scp::sgd_train(pruned, train, a.epochs, a.lr, a.batch, scp::mix_seed(a.seed, 0xf73e));
    }
    ordered_json meta{{"pruned_layer", layer}, {"pruned_channels", prune_set}, {"seed", a.seed}};
    scp::save_model(a.out, pruned, meta);

    ordered_json m = manifest_base("prune", a.seed);
    m["config"] = {{"layer", layer},
                   {"prc", a.channels.empty() ? ordered_json(a.prc) : ordered_json()},
                   {"channels", prune_set},
                   {"epochs", a.epochs},
                   {"lr", a.lr},
                   {"batch", a.batch},
                   {"temp", a.temp}};
    m["inputs"] = {{"model", a.model}, {"data", a.data}};
    m["outputs"] = {{"model", a.out}};
    write_manifest(a.out + ".manifest.json", m);
    std::cout << "removed " << prune_set.size() << " channel(s) from layer " << layer << " -> "
              << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// run-recipe
// ---------------------------------------------------------------------------

struct RecipeArgs {
    std::string model;
    std::string data;
    std::string out;
    double prc = 2.0; // percent
    int layer = 0;
    double temp = 1.0;
    double auto_temp = 0.0; // quantile; 0 = off
    double th_acc = 0.02;
    double th_fair = 0.001;
    int max_iters = 10;
    int epochs = 2;
    double lr = 0.05;
    int batch = 32;
    std::uint64_t seed = 0;
    std::string sweep;
};

scp::RecipeConfig recipe_config(const RecipeArgs& a, const scp::ToyCnn& model,
                                const scp::Dataset& train) {
    if (a.prc <= 0.0 || a.prc >= 100.0) {
        throw scp::config_error("--prc must be in (0,100) percent");
    }
    scp::RecipeConfig cfg;
    cfg.prune_ratio = a.prc / 100.0;
    cfg.layer = a.layer;
    cfg.temperature = a.temp;
    cfg.max_accuracy_drop = a.th_acc;
    cfg.min_fairness_gain = a.th_fair;
    cfg.max_iters = a.max_iters;
    cfg.finetune_epochs = a.epochs;
    cfg.finetune_lr = a.lr;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    if (a.auto_temp > 0.0) {
        cfg.temperature = scp::calibrate_temperature(model, train, cfg.resolve_layer(model),
                                                     a.batch, scp::mix_seed(a.seed, 0xca1),
                                                     a.auto_temp);
    }
    cfg.validate();
    return cfg;
}

ordered_json recipe_config_json(const RecipeArgs& a) {
    return {{"prc", a.prc},       {"layer", a.layer},         {"temp", a.temp},
            {"th_acc", a.th_acc}, {"th_fair", a.th_fair},     {"max_iters", a.max_iters},
            {"epochs", a.epochs}, {"lr", a.lr},               {"batch", a.batch}};
}

void run_recipe_once(const RecipeArgs& a, const scp::ToyCnn& model, const scp::Dataset& train,
                     const scp::Dataset& eval_set, const fs::path& dir) {
    const scp::RecipeConfig cfg = recipe_config(a, model, train);
    const scp::RecipeResult res = scp::run_recipe(model, train, eval_set, cfg);

    fs::create_directories(dir);
    ordered_json meta{{"stop_reason", scp::to_string(res.trace.stop_reason)},
                      {"iterations", res.trace.entries.size()},
                      {"seed", a.seed}};
    scp::save_model((dir / "final.scp").string(), res.model, meta);
    scp::binio::write_file((dir / "trace.jsonl").string(), scp::trace_jsonl(res.trace));
    scp::binio::write_file((dir / "ablation.csv").string(), scp::trace_csv(res.trace));

    ordered_json m = manifest_base("run-recipe", a.seed);
    m["config"] = recipe_config_json(a);
    m["config"]["auto_temp"] = a.auto_temp;
    m["config"]["resolved_temp"] = cfg.temperature;
    m["inputs"] = {{"model", a.model}, {"data", a.data}};
    m["outputs"] = {{"model", (dir / "final.scp").string()},
                    {"trace", (dir / "trace.jsonl").string()},
                    {"ablation", (dir / "ablation.csv").string()}};
    m["results"] = {{"stop_reason", scp::to_string(res.trace.stop_reason)},
                    {"iterations", res.trace.entries.size()},
                    {"baseline_f1", res.trace.baseline_f1},
                    {"baseline_eodd", res.trace.baseline_eodd},
                    {"final_f1", res.trace.final_f1},
                    {"final_eodd", res.trace.final_eodd}};
    write_manifest(dir / "manifest.json", m);
    std::cout << dir.string() << ": stop " << scp::to_string(res.trace.stop_reason) << " after "
              << res.trace.entries.size() << " iteration(s), F1 " << res.trace.baseline_f1
              << " -> " << res.trace.final_f1 << ", Eodd " << res.trace.baseline_eodd << " -> "
              << res.trace.final_eodd << "\n";
}

int run_recipe_cmd(RecipeArgs& a) {
    a.seed = resolve_seed(a.seed);
    const scp::ToyCnn model = load_model_arg(a.model);
    const scp::Dataset train = load_dataset_arg(a.data, "train");
    const scp::Dataset eval_set = load_dataset_arg(a.data, "eval");

    if (a.sweep.empty()) {
        run_recipe_once(a, model, train, eval_set, fs::path(a.out));
        return 0;
    }

    const std::size_t eq = a.sweep.find('=');
    if (eq == std::string::npos) {
        throw scp::config_error("--sweep expects name=v1,v2,... with name prc or layer");
    }
    const std::string name = a.sweep.substr(0, eq);
    if (name != "prc" && name != "layer") {
        throw scp::config_error("--sweep parameter must be prc or layer, got \"" + name + "\"");
    }
    const std::string values = a.sweep.substr(eq + 1);
    if (values.empty()) throw scp::config_error("--sweep has no values");

    ordered_json runs = ordered_json::array();
    std::size_t start = 0;
    while (start <= values.size()) {
        const std::size_t comma = values.find(',', start);
        const std::string cell = values.substr(
            start, comma == std::string::npos ? std::string::npos : comma - start);
        if (cell.empty()) throw scp::config_error("empty entry in --sweep values");
        RecipeArgs variant = a;
        if (name == "prc") {
            try {
                variant.prc = std::stod(cell);
            } catch (const std::exception&) {
                throw scp::config_error("--sweep prc value is not a number: \"" + cell + "\"");
            }
        } else {
            try {
                variant.layer = std::stoi(cell);
            } catch (const std::exception&) {
                throw scp::config_error("--sweep layer value is not an integer: \"" + cell +
                                        "\"");
            }
        }
        const fs::path dir = fs::path(a.out) / (name + "_" + cell);
        run_recipe_once(variant, model, train, eval_set, dir);
        runs.push_back({{name, cell}, {"dir", dir.string()}});
        if (comma == std::string::npos) break;
        start = comma + 1;
    }

    ordered_json m = manifest_base("run-recipe", a.seed);
    m["config"] = recipe_config_json(a);
    m["config"]["sweep"] = a.sweep;
    m["inputs"] = {{"model", a.model}, {"data", a.data}};
    m["outputs"] = {{"runs", runs}};
    write_manifest(fs::path(a.out) / "manifest.json", m);
    return 0;
}

// ---------------------------------------------------------------------------
// eval-fairness and report
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string preds;
    std::string model;
    std::string data;
    std::string metrics;
    std::string baseline;
    std::string save_preds;
    std::string name = "model";
    std::string out;
    double lambda = 1.0;
};

int run_eval_fairness(EvalArgs& a) {
    const int modes = (!a.preds.empty()) + (!a.model.empty()) + (!a.metrics.empty());
    if (modes != 1) {
        throw scp::config_error("exactly one of --preds, --model, or --metrics is required");
    }

    std::optional<Metrics> baseline;
    if (!a.baseline.empty()) baseline = load_metrics_file(a.baseline);

    Metrics metrics;
    std::optional<scp::FairnessReport> report;
    ordered_json inputs;

    if (!a.metrics.empty()) {
        metrics = load_metrics_file(a.metrics);
        inputs["metrics"] = a.metrics;
    } else {
        scp::ConfusionTensor conf;
        if (!a.preds.empty()) {
            if (!fs::exists(a.preds)) {
                throw scp::config_error("predictions file does not exist: " + a.preds);
            }
            const scp::PredictionRows rows = scp::load_predictions_csv(a.preds);
            conf = scp::build_confusion(rows.preds, rows.labels, rows.groups);
            inputs["preds"] = a.preds;
        } else {
            const scp::ToyCnn model = load_model_arg(a.model);
            if (a.data.empty()) throw scp::config_error("--data is required with --model");
            const scp::Dataset ds = load_dataset_arg(a.data, "eval");
            const std::vector<int> preds = scp::evaluate(model, ds);
            conf = scp::build_confusion(preds, ds.labels, ds.groups, ds.num_classes);
            inputs["model"] = a.model;
            inputs["data"] = a.data;
            if (!a.save_preds.empty()) {
                scp::PredictionRows rows;
                rows.preds = preds;
                rows.labels = ds.labels;
                rows.groups = ds.groups;
                scp::save_predictions_csv(a.save_preds, rows);
            }
        }
        std::optional<scp::BaselineMetrics> bm;
        if (baseline) bm = to_baseline(*baseline);
        report = scp::make_report(conf, bm, a.lambda);
        metrics = metrics_from_report(*report, a.name);
    }

    print_metrics_table(metrics, baseline ? &*baseline : nullptr, a.lambda);

    if (!a.out.empty()) {
        ordered_json mj = metrics_json(metrics, report ? &*report : nullptr);
        if (!report && baseline) {
            mj["baseline"] = baseline->name;
            mj["fate_eopp0"] =
                scp::fate(metrics.f1_avg, baseline->f1_avg, metrics.eopp0, baseline->eopp0, a.lambda);
            mj["fate_eopp1"] =
                scp::fate(metrics.f1_avg, baseline->f1_avg, metrics.eopp1, baseline->eopp1, a.lambda);
            mj["fate_eodd"] =
                scp::fate(metrics.f1_avg, baseline->f1_avg, metrics.eodd, baseline->eodd, a.lambda);
        }
        scp::binio::write_file(a.out + ".json", mj.dump(2) + "\n");
        if (report) {
            scp::binio::write_file(a.out + ".csv", scp::report_csv(*report));
        }
        ordered_json m = manifest_base("eval-fairness", 0);
        m["config"] = {{"lambda", a.lambda}, {"name", a.name}};
        m["inputs"] = inputs;
        if (!a.baseline.empty()) m["inputs"]["baseline"] = a.baseline;
        m["outputs"] = {{"metrics", a.out + ".json"}};
        if (report) m["outputs"]["csv"] = a.out + ".csv";
        write_manifest(a.out + ".manifest.json", m);
    }
    return 0;
}

struct ReportArgs {
    std::string metrics;
    std::string baseline;
    std::string out;
    double lambda = 1.0;
};

int run_report(ReportArgs& a) {
    const Metrics m = load_metrics_file(a.metrics);
    std::optional<Metrics> baseline;
    if (!a.baseline.empty()) baseline = load_metrics_file(a.baseline);
    print_metrics_table(m, baseline ? &*baseline : nullptr, a.lambda);
    if (!a.out.empty()) {
        std::string csv = "name,f1_avg,eopp0,eopp1,eodd,fate_eopp0,fate_eopp1,fate_eodd\n";
        char buf[256];
        if (baseline) {
            std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                          m.name.c_str(), m.f1_avg, m.eopp0, m.eopp1, m.eodd,
                          scp::fate(m.f1_avg, baseline->f1_avg, m.eopp0, baseline->eopp0, a.lambda),
                          scp::fate(m.f1_avg, baseline->f1_avg, m.eopp1, baseline->eopp1, a.lambda),
                          scp::fate(m.f1_avg, baseline->f1_avg, m.eodd, baseline->eodd, a.lambda));
        } else {
            std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g,%.6g,,,\n", m.name.c_str(),
                          m.f1_avg, m.eopp0, m.eopp1, m.eodd);
        }
        csv += buf;
        scp::binio::write_file(a.out, csv);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairness-aware channel pruning toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic biased dataset");
    gen_cmd->add_option("--n", gen.cfg.num_samples, "samples per split")->capture_default_str();
    gen_cmd->add_option("--classes", gen.cfg.num_classes, "number of classes")
        ->capture_default_str();
    gen_cmd->add_option("--channels", gen.cfg.channels, "image channels")->capture_default_str();
    gen_cmd->add_option("--height", gen.cfg.height, "image height")->capture_default_str();
    gen_cmd->add_option("--width", gen.cfg.width, "image width")->capture_default_str();
    gen_cmd->add_option("--rho", gen.cfg.spurious_strength,
                        "train-split class/attribute correlation in [0,1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen_cmd->add_option("--imbalance", gen.cfg.group_imbalance, "marginal P(group=1) in (0,1)")
        ->capture_default_str();
    gen_cmd->add_option("--noise", gen.cfg.noise_std, "Gaussian pixel noise stddev")
        ->capture_default_str();
    gen_cmd->add_flag("--implicit", gen.implicit,
                      "keep the attribute out of the image (label-only)");
    gen_cmd->add_option("--seed", gen.cfg.seed, "RNG seed (SCP_SEED overrides)")
        ->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->callback([&gen] { run_gen_data(gen); });

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train the toy CNN on a dataset");
    train_cmd->add_option("--data", train.data, "dataset directory or train.scd file")
        ->required();
    train_cmd->add_option("--epochs", train.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--lr", train.lr, "SGD learning rate")->capture_default_str();
    train_cmd->add_option("--batch", train.batch, "minibatch size")->capture_default_str();
    train_cmd->add_option("--seed", train.seed, "RNG seed (SCP_SEED overrides)")
        ->capture_default_str();
    train_cmd->add_option("--out", train.out, "output checkpoint path")->required();
    train_cmd->callback([&train] { run_train(train); });

    ScoreArgs score;
    auto* score_cmd =
        app.add_subcommand("score-channels", "per-channel group-separation scores");
    score_cmd->add_option("--model", score.model, "model checkpoint");
    score_cmd->add_option("--fmap", score.fmap, "external feature-map file (FMAP)");
    score_cmd->add_option("--data", score.data, "dataset (with --model); train split");
    score_cmd->add_option("--layer", score.layer, "tapped conv layer, 1-based (0 = model tap)")
        ->capture_default_str();
    score_cmd->add_option("--temp", score.temp, "SNNL temperature")->capture_default_str();
    score_cmd->add_option("--auto-temp", score.auto_temp,
                          "calibrate the temperature to this quantile of observed distances");
    score_cmd->add_option("--batch", score.batch, "scoring batch size")->capture_default_str();
    score_cmd->add_option("--seed", score.seed, "RNG seed (SCP_SEED overrides)")
        ->capture_default_str();
    score_cmd->add_option("--out", score.out, "output CSV path")->required();
    score_cmd->callback([&score] { run_score_channels(score); });

    PruneArgs prune;
    auto* prune_cmd = app.add_subcommand("prune", "one scored (or explicit) pruning step");
    prune_cmd->add_option("--model", prune.model, "model checkpoint")->required();
    prune_cmd->add_option("--data", prune.data, "dataset for scoring/fine-tuning");
    prune_cmd->add_option("--layer", prune.layer, "conv layer, 1-based (0 = model tap)")
        ->capture_default_str();
    prune_cmd->add_option("--prc", prune.prc, "percent of channels to prune");
    prune_cmd->add_option("--channels", prune.channels, "explicit channel list, e.g. 3,5");
    prune_cmd->add_option("--epochs", prune.epochs, "fine-tune epochs")->capture_default_str();
    prune_cmd->add_option("--lr", prune.lr, "fine-tune learning rate")->capture_default_str();
    prune_cmd->add_option("--batch", prune.batch, "minibatch size")->capture_default_str();
    prune_cmd->add_option("--temp", prune.temp, "SNNL temperature")->capture_default_str();
    prune_cmd->add_option("--seed", prune.seed, "RNG seed (SCP_SEED overrides)")
        ->capture_default_str();
    prune_cmd->add_option("--out", prune.out, "output checkpoint path")->required();
    prune_cmd->callback([&prune, &prune_cmd = *prune_cmd] {
        prune.prc_given = prune_cmd.count("--prc") > 0;
        run_prune(prune);
    });

    RecipeArgs recipe;
    auto* recipe_cmd =
        app.add_subcommand("run-recipe", "iterative score/prune/fine-tune loop");
    recipe_cmd->add_option("--model", recipe.model, "model checkpoint")->required();
    recipe_cmd->add_option("--data", recipe.data, "dataset directory")->required();
    recipe_cmd->add_option("--prc", recipe.prc, "percent of channels pruned per iteration")
        ->capture_default_str();
    recipe_cmd->add_option("--layer", recipe.layer, "conv layer, 1-based (0 = last)")
        ->capture_default_str();
    recipe_cmd->add_option("--temp", recipe.temp, "SNNL temperature")->capture_default_str();
    recipe_cmd->add_option("--auto-temp", recipe.auto_temp,
                           "calibrate the temperature to this quantile of observed distances");
    recipe_cmd->add_option("--th-acc", recipe.th_acc, "max tolerated F1 drop vs original")
        ->capture_default_str();
    recipe_cmd->add_option("--th-fair", recipe.th_fair, "min per-iteration Eodd improvement")
        ->capture_default_str();
    recipe_cmd->add_option("--max-iters", recipe.max_iters, "iteration cap")
        ->capture_default_str();
    recipe_cmd->add_option("--epochs", recipe.epochs, "fine-tune epochs per iteration")
        ->capture_default_str();
    recipe_cmd->add_option("--lr", recipe.lr, "fine-tune learning rate")->capture_default_str();
    recipe_cmd->add_option("--batch", recipe.batch, "minibatch size")->capture_default_str();
    recipe_cmd->add_option("--seed", recipe.seed, "RNG seed (SCP_SEED overrides)")
        ->capture_default_str();
    recipe_cmd->add_option("--sweep", recipe.sweep, "sweep one parameter: prc=1,2,5 or layer=1,2");
    recipe_cmd->add_option("--out", recipe.out, "output directory")->required();
    recipe_cmd->callback([&recipe] { run_recipe_cmd(recipe); });

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval-fairness", "group metrics and FATE report");
    eval_cmd->add_option("--preds", eval.preds, "predictions CSV (pred,label,group)");
    eval_cmd->add_option("--model", eval.model, "model checkpoint");
    eval_cmd->add_option("--data", eval.data, "dataset (with --model); eval split");
    eval_cmd->add_option("--metrics", eval.metrics, "precomputed metrics JSON");
    eval_cmd->add_option("--baseline", eval.baseline, "baseline metrics JSON for FATE");
    eval_cmd->add_option("--lambda", eval.lambda, "FATE fairness weight")->capture_default_str();
    eval_cmd->add_option("--name", eval.name, "model name used in reports")
        ->capture_default_str();
    eval_cmd->add_option("--save-preds", eval.save_preds, "write predictions CSV (with --model)");
    eval_cmd->add_option("--out", eval.out, "output base path (writes .json and .csv)");
    eval_cmd->callback([&eval] { run_eval_fairness(eval); });

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "pretty-print a metrics JSON file");
    report_cmd->add_option("--metrics", report.metrics, "metrics JSON file")->required();
    report_cmd->add_option("--baseline", report.baseline, "baseline metrics JSON for FATE");
    report_cmd->add_option("--lambda", report.lambda, "FATE fairness weight")
        ->capture_default_str();
    report_cmd->add_option("--out", report.out, "also write a summary CSV");
    report_cmd->callback([&report] { run_report(report); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const scp::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const scp::format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const scp::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
