#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seg/seg.hpp"
#include "seg/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

std::string flag_name(std::string field) {
    std::replace(field.begin(), field.end(), '_', '-');
    return "--" + field;
}

// Converts a flag string to the JSON type of the config field it overrides.
json typed_value(const std::string& field, const json& ref, const std::string& text) {
    try {
        if (ref.is_boolean()) {
            std::string t = text;
            std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
            if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
            if (t == "false" || t == "0" || t == "off" || t == "no") return false;
            throw seg::ConfigError("");
        }
        if (ref.is_number_unsigned()) {
            if (text.empty() || text[0] == '-') throw seg::ConfigError("");
            std::size_t used = 0;
            const auto v = std::stoull(text, &used);
            if (used != text.size()) throw seg::ConfigError("");
            return v;
        }
        if (ref.is_number_float()) {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) throw seg::ConfigError("");
            return v;
        }
        return text;
    } catch (const std::exception&) {
        throw seg::ConfigError("config field '" + field + "': cannot parse '" + text + "'");
    }
}

json read_json_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw seg::DataError("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw seg::ConfigError(file.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw seg::DataError("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

// One option per TrainConfig field; values stay strings until resolution.
struct ConfigFlags {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app) {
        const json defaults = seg::TrainConfig{};
        const json desk = seg::desk_preset();
        for (const auto& [field, value] : defaults.items()) {
            std::string help = "config field " + field + " (default: " + value.dump();
            if (desk.at(field) != value) help += "; desk preset: " + desk.at(field).dump();
            help += ")";
            options[field] = app->add_option(flag_name(field), values[field], help)->group("Config fields");
        }
    }

    bool given(const std::string& field) const { return options.at(field)->count() > 0; }

    // default < preset < config file < flags
    seg::TrainConfig resolve(const std::string& preset_name, const std::string& config_file) const {
        seg::TrainConfig cfg = seg::preset(preset_name);
        if (!config_file.empty()) seg::apply_json(cfg, read_json_file(config_file));
        const json ref = cfg;
        json overrides = json::object();
        for (const auto& [field, opt] : options)
            if (opt->count() > 0) overrides[field] = typed_value(field, ref.at(field), values.at(field));
        seg::apply_json(cfg, overrides);
        cfg.validate();
        return cfg;
    }
};

struct TrainArgs {
    std::string kg1, kg2, seeds, config, preset = "default", out;
    std::vector<std::string> ablate;
    std::string init1, init2, rel1, rel2;
    bool parallel_folds = false;
    bool quiet = false;
    ConfigFlags flags;
};

struct FoldResult {
    json report;
};

FoldResult run_fold(const seg::KnowledgeGraph& kg1, const seg::KnowledgeGraph& kg2, const seg::SeedAlignment& seeds,
                    seg::TrainConfig cfg, std::size_t fold, const fs::path& dir, const seg::TrainInputs& base,
                    const std::map<std::string, std::string>& digests, bool quiet) {
    cfg.fold = fold;
    seg::TrainInputs in = base;
    in.split = seg::split_seeds(seeds, cfg.ratios(), cfg.rng_seed, cfg.fold, cfg.folds);
    fs::create_directories(dir);
    std::ofstream trace(dir / "trace.jsonl", std::ios::binary);
    if (!trace) throw seg::DataError("cannot write " + (dir / "trace.jsonl").string());
    seg::TrainHooks hooks;
    hooks.on_epoch = [&](const seg::EpochRecord& r) {
        trace << seg::epoch_json(r).dump() << '\n';
        if (!quiet && r.epoch % 50 == 0)
            std::cerr << "fold " << fold << " epoch " << r.epoch << " loss " << r.loss << " val_hit1 " << r.val_hit1
                      << " pseudo " << r.n_pseudo << '\n';
    };
    seg::Checkpoint ck;
    try {
        ck = seg::train(in, cfg, hooks);
    } catch (...) {
        trace.flush();
        throw;
    }
    seg::save_checkpoint(ck, dir / "checkpoint.json");
    seg::RunManifest manifest{cfg, digests};
    write_json_file(seg::manifest_json(manifest), dir / "manifest.json");
    std::ofstream audit(dir / "soft_labels.tsv", std::ios::binary);
    seg::write_soft_label_audit(audit, ck.soft_labels, kg1, kg2);
    seg::SeedAlignment pseudo{ck.pseudo_seeds, seg::SeedOrigin::pseudo};
    seg::write_seeds(pseudo, kg1, kg2, dir / "pseudo_seeds.tsv");
    json report = seg::metrics_json(seg::evaluate_checkpoint(ck, ck.split), seg::config_digest(cfg));
    report["fold"] = fold;
    report["best_epoch"] = ck.epoch;
    write_json_file(report, dir / "report.json");
    return {report};
}

int cmd_train(TrainArgs& a) {
    seg::TrainConfig cfg = a.flags.resolve(a.preset, a.config);
    for (const auto& x : a.ablate) {
        if (x == "bwm")
            cfg.enable_weighted = false;
        else if (x == "softlabels")
            cfg.enable_soft_labels = false;
        else
            throw seg::ConfigError("--ablate expects bwm or softlabels, got '" + x + "'");
    }
    cfg.validate();

    const seg::KnowledgeGraph kg1 = seg::load_kg_dir(a.kg1);
    const seg::KnowledgeGraph kg2 = seg::load_kg_dir(a.kg2);
    const seg::SeedAlignment seeds = seg::parse_seeds(a.seeds, kg1, kg2);
    std::map<std::string, std::string> digests{
        {"kg1", seg::file_digest(a.kg1)}, {"kg2", seg::file_digest(a.kg2)}, {"seeds", seg::file_digest(a.seeds)}};

    seg::TrainInputs base;
    base.kg1 = &kg1;
    base.kg2 = &kg2;
    if (a.init1.empty() != a.init2.empty()) throw seg::ConfigError("--init-emb1 and --init-emb2 must be given together");
    if (!a.init1.empty()) {
        base.init1 = seg::load_entity_vectors(a.init1, kg1);
        base.init2 = seg::load_entity_vectors(a.init2, kg2);
        digests["init_emb1"] = seg::file_digest(a.init1);
        digests["init_emb2"] = seg::file_digest(a.init2);
    }
    if (a.rel1.empty() != a.rel2.empty()) throw seg::ConfigError("--rel-vec1 and --rel-vec2 must be given together");
    if (!a.rel1.empty()) {
        base.rel_text1 = seg::load_relation_vectors(a.rel1, kg1);
        base.rel_text2 = seg::load_relation_vectors(a.rel2, kg2);
        digests["rel_vec1"] = seg::file_digest(a.rel1);
        digests["rel_vec2"] = seg::file_digest(a.rel2);
    }

    const fs::path out = a.out;
    fs::create_directories(out);
    const bool all_folds = a.flags.given("folds") && !a.flags.given("fold");
    if (!all_folds) {
        const FoldResult r = run_fold(kg1, kg2, seeds, cfg, cfg.fold, out, base, digests, a.quiet);
        std::cout << r.report.dump(2) << '\n';
        return kOk;
    }

    std::vector<json> reports(cfg.folds);
    auto fold_dir = [&](std::size_t f) { return out / ("fold" + std::to_string(f)); };
    if (a.parallel_folds) {
        std::vector<std::future<FoldResult>> jobs;
        for (std::size_t f = 0; f < cfg.folds; ++f)
            jobs.push_back(std::async(std::launch::async, run_fold, std::cref(kg1), std::cref(kg2), std::cref(seeds), cfg, f,
                                      fold_dir(f), std::cref(base), std::cref(digests), true));
        for (std::size_t f = 0; f < cfg.folds; ++f) reports[f] = jobs[f].get().report;
    } else {
        for (std::size_t f = 0; f < cfg.folds; ++f)
            reports[f] = run_fold(kg1, kg2, seeds, cfg, f, fold_dir(f), base, digests, a.quiet).report;
    }
    const json summary = seg::summarize_folds(reports);
    write_json_file(summary, out / "summary.json");
    std::cout << summary.dump(2) << '\n';
    return kOk;
}

struct EvalArgs {
    std::string ckpt, run, out;
    std::size_t folds = 0;
    std::vector<std::size_t> ks;
};

json eval_one(const fs::path& file, const std::vector<std::size_t>& ks) {
    const seg::Checkpoint ck = seg::load_checkpoint(file);
    return seg::metrics_json(seg::evaluate_checkpoint(ck, ck.split, ks), seg::config_digest(ck.config));
}

int cmd_eval(EvalArgs& a) {
    std::vector<std::size_t> ks = a.ks.empty() ? std::vector<std::size_t>{1, 5} : a.ks;
    for (std::size_t k : ks)
        if (k == 0) throw seg::ConfigError("--k must be >= 1");
    if (a.ckpt.empty() == a.run.empty()) throw seg::ConfigError("give exactly one of --ckpt or --run");
    json report;
    if (!a.ckpt.empty()) {
        report = eval_one(a.ckpt, ks);
    } else if (a.folds == 0) {
        report = eval_one(fs::path(a.run) / "checkpoint.json", ks);
    } else {
        std::vector<json> reports;
        for (std::size_t f = 0; f < a.folds; ++f) {
            json r = eval_one(fs::path(a.run) / ("fold" + std::to_string(f)) / "checkpoint.json", ks);
            r["fold"] = f;
            reports.push_back(std::move(r));
        }
        report = seg::summarize_folds(reports);
    }
    if (!a.out.empty())
        write_json_file(report, a.out);
    else
        std::cout << report.dump(2) << '\n';
    return kOk;
}

struct GenArgs {
    seg::SyntheticSpec spec;
    std::string out;
};

int cmd_gen(GenArgs& a) {
    if (a.spec.n_entities < 4) throw seg::ConfigError("--entities must be >= 4");
    if (a.spec.n_relations < 1) throw seg::ConfigError("--relations must be >= 1");
    if (!(a.spec.avg_degree > 0.0)) throw seg::ConfigError("--avg-degree must be > 0");
    if (!(a.spec.edge_perturbation >= 0.0 && a.spec.edge_perturbation <= 0.5))
        throw seg::ConfigError("--perturb must be in [0, 0.5]");
    const seg::SyntheticPair pair = seg::generate_synthetic_pair(a.spec);
    seg::write_synthetic(a.spec, pair, a.out);
    std::cout << seg::synthetic_manifest(a.spec, pair).dump(2) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seg: relation-aware graph-attention entity alignment"};
    app.set_version_flag("--version", std::string(seg::kToolVersion));
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train an alignment model and write checkpoint, manifest and trace");
    train->add_option("--kg1", ta.kg1, "KG1 directory (ent_ids, triples, optional rel_ids)")->required();
    train->add_option("--kg2", ta.kg2, "KG2 directory")->required();
    train->add_option("--seeds", ta.seeds, "gold alignment file '<kg1 id>\\t<kg2 id>'")->required();
    train->add_option("--config", ta.config, "flat JSON object of config fields");
    train->add_option("--preset", ta.preset, "base preset: default or desk")->capture_default_str();
    train->add_option("--out", ta.out, "output directory")->required();
    train->add_option("--ablate", ta.ablate, "disable a component: bwm (weighted loss) or softlabels");
    train->add_option("--init-emb1", ta.init1, "KG1 initial entity vectors '<id>\\t<f,f,...>'");
    train->add_option("--init-emb2", ta.init2, "KG2 initial entity vectors");
    train->add_option("--rel-vec1", ta.rel1, "KG1 relation description vectors");
    train->add_option("--rel-vec2", ta.rel2, "KG2 relation description vectors");
    train->add_flag("--parallel-folds", ta.parallel_folds, "train folds concurrently when --folds is given");
    train->add_flag("--quiet", ta.quiet, "no progress output");
    ta.flags.attach(train);
    train->footer("With --folds N and no --fold, all N folds run and write <out>/fold<k>/.\n"
                  "Precedence: built-in default < --preset < --config < individual flags.");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "report test metrics of a checkpoint or a run");
    eval->add_option("--ckpt", ea.ckpt, "checkpoint file");
    eval->add_option("--run", ea.run, "run directory written by train");
    eval->add_option("--folds", ea.folds, "average <run>/fold0..fold<N-1> (mean and stddev)");
    eval->add_option("--k", ea.ks, "hit@k cutoff, repeatable (default 1 and 5)");
    eval->add_option("--out", ea.out, "write the report here instead of stdout");

    GenArgs ga;
    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic aligned KG pair with known truth");
    gen->add_option("--entities", ga.spec.n_entities, "entities per graph")->capture_default_str();
    gen->add_option("--relations", ga.spec.n_relations, "relation types")->capture_default_str();
    gen->add_option("--avg-degree", ga.spec.avg_degree, "average entity degree")->capture_default_str();
    gen->add_option("--perturb", ga.spec.edge_perturbation, "fraction of KG2 triples dropped or rewired")->capture_default_str();
    gen->add_flag("--rename", ga.spec.rename, "rename KG2 relations");
    gen->add_option("--seed", ga.spec.rng_seed, "generator seed")->capture_default_str();
    gen->add_option("--out", ga.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (train->parsed()) return cmd_train(ta);
        if (eval->parsed()) return cmd_eval(ea);
        if (gen->parsed()) return cmd_gen(ga);
    } catch (const seg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const seg::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kDivergence;
    } catch (const seg::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const seg::DimensionError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
