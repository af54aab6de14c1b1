#include "titan/app.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "titan/alignment.hpp"
#include "titan/bounds.hpp"
#include "titan/io.hpp"
#include "titan/rng.hpp"

#ifndef TITAN_VERSION
#define TITAN_VERSION "0.0.0"
#endif
#ifndef TITAN_BUILD_ID
#define TITAN_BUILD_ID "unknown"
#endif

namespace titan {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

const std::vector<std::string> kSplits = {"source_train", "source_val", "target_train", "target_val"};

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void say(const LogFn& log, const std::string& line) {
    if (log) log(line);
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Owns one output directory: records every file written and finishes with the
// manifest.
class RunDir {
public:
    RunDir(const RunConfig& cfg, std::string command) : cfg_(cfg), command_(std::move(command)), root_(cfg.out_dir) {
        const fs::path manifest = root_ / "manifest.json";
        if (fs::exists(manifest)) {
            const json old = parse_json_text(read_text(manifest), manifest.string());
            if (old.value("command", std::string()) != command_) {
                throw InputError(root_.string() + " already holds the output of '" + old.value("command", std::string("?")) +
                                 "'; choose another out_dir");
            }
        }
    }

    fs::path path(const std::string& name) const { return root_ / name; }

    void text(const std::string& name, const std::string& body) {
        fs::create_directories(root_);
        write_text(path(name), body);
        files_.push_back(name);
    }
    void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
    void checkpoint(const std::string& name, const Checkpoint& c) {
        fs::create_directories(root_);
        save_checkpoint(path(name), c);
        files_.push_back(name);
    }
    void dataset(const std::string& name, const Dataset& d) {
        fs::create_directories(root_);
        save_dataset(path(name), d);
        files_.push_back(name);
    }

    void add_dataset(const std::string& split, const Dataset& d) {
        json j;
        const std::string& p = split_path(split);
        j["origin"] = p.empty() ? "generated" : "file";
        if (!p.empty()) j["path"] = p;
        j["n"] = d.size();
        j["seed"] = d.seed;
        j["spec"] = to_json(d.spec);
        j["fnv1a"] = hex64(dataset_hash(d));
        datasets_[split] = std::move(j);
    }
    void add_input(const std::string& name, const std::string& file) {
        inputs_[name] = {{"path", file}, {"fnv1a", hex64(file_hash(file))}};
    }
    void time(const std::string& stage, double secs) { timings_[stage] = secs; }

    void finish(const std::string& status = "ok") {
        json m;
        m["tool"] = "titan";
        m["version"] = TITAN_VERSION;
        m["build"] = TITAN_BUILD_ID;
        m["command"] = command_;
        m["status"] = status;
        m["config"] = config_to_json(cfg_);
        json seeds;
        seeds["root"] = cfg_.seed;
        seeds["init"] = cfg_.init_seed();
        seeds["pretrain"] = cfg_.pretrain_seed();
        seeds["adapt"] = cfg_.adapt_seed();
        for (const std::string& s : kSplits) seeds["data"][s] = cfg_.data_seed(s);
        m["seeds"] = seeds;
        m["inputs"] = inputs_.empty() ? json::object() : inputs_;
        m["datasets"] = datasets_.empty() ? json::object() : datasets_;
        timings_["total"] = seconds_since(start_);
        m["timings_s"] = timings_;
        json outputs = json::array();
        for (const std::string& f : files_) {
            outputs.push_back({{"file", f}, {"bytes", fs::file_size(path(f))}, {"fnv1a", hex64(file_hash(path(f)))}});
        }
        m["outputs"] = outputs;
        fs::create_directories(root_);
        write_text(path("manifest.json"), m.dump(2) + "\n");
    }

private:
    const std::string& split_path(const std::string& split) const {
        if (split == "source_train") return cfg_.source_train_path;
        if (split == "source_val") return cfg_.source_val_path;
        if (split == "target_train") return cfg_.target_train_path;
        return cfg_.target_val_path;
    }

    const RunConfig& cfg_;
    std::string command_;
    fs::path root_;
    Clock::time_point start_ = Clock::now();
    std::vector<std::string> files_;
    json inputs_, datasets_, timings_ = json::object();
};

json checkpoint_meta(const RunConfig& cfg, const std::string& kind) {
    return {{"kind", kind}, {"detector", to_json(cfg.detector)}, {"domain_query", cfg.adapt.use_domain_query}};
}

Checkpoint load_input_checkpoint(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("config key 'checkpoint' is required by this command");
    Checkpoint c = load_checkpoint(cfg.checkpoint);
    if (c.meta.contains("detector") && detector_config_from_json(c.meta.at("detector")) != cfg.detector) {
        throw InputError(cfg.checkpoint + ": detector shape in checkpoint differs from the config");
    }
    return c;
}

ParamSet detector_group(const RunConfig& cfg, const Checkpoint& c, const std::string& group) {
    const ParamSet& p = c.group(group);
    if (!p.congruent(init_detector_params(cfg.detector, 0))) {
        throw InputError(cfg.checkpoint + ": group '" + group + "' does not match the configured detector");
    }
    return p;
}

EvalOptions eval_options(const RunConfig& cfg) {
    EvalOptions o;
    o.fpi_points = cfg.fpi_points;
    return o;
}

std::uint64_t partition_seed(const RunConfig& cfg) { return derive_seed(cfg.adapt_seed(), "partition"); }

json severity_summary(const Dataset& d, const DomainPartition& split) {
    auto mean = [&](const std::vector<std::size_t>& ids) {
        double s = 0.0;
        for (std::size_t i : ids) s += d.samples[i].severity;
        return ids.empty() ? 0.0 : s / static_cast<double>(ids.size());
    };
    return {{"source_similar", mean(split.source_similar)}, {"source_dissimilar", mean(split.source_dissimilar)}};
}

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"generate", "pretrain", "adapt", "partition", "eval", "bound"};
    return names;
}

Dataset obtain_dataset(const RunConfig& cfg, const std::string& split) {
    const bool source = split.starts_with("source");
    std::string path;
    int n = 0;
    if (split == "source_train") {
        path = cfg.source_train_path;
        n = cfg.source_train_size;
    } else if (split == "source_val") {
        path = cfg.source_val_path;
        n = cfg.source_val_size;
    } else if (split == "target_train") {
        path = cfg.target_train_path;
        n = cfg.target_train_size;
    } else if (split == "target_val") {
        path = cfg.target_val_path;
        n = cfg.target_val_size;
    } else {
        throw ConfigError("unknown dataset split '" + split + "'");
    }
    if (!path.empty()) {
        Dataset d = load_dataset(path);
        if (d.spec.image_size != cfg.detector.image_size || d.spec.num_classes != cfg.detector.num_classes) {
            throw InputError(path + ": image size or class count differs from the config");
        }
        return d;
    }
    return generate_domain(source ? cfg.source_shift : cfg.target_shift, static_cast<std::size_t>(n),
                           cfg.data_seed(split));
}

json cmd_generate(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "generate");
    json summary = json::object();
    for (const std::string& split : kSplits) {
        const auto t0 = Clock::now();
        Dataset d = obtain_dataset(cfg, split);
        dir.dataset(split + ".ds", d);
        dir.add_dataset(split, d);
        dir.time(split, seconds_since(t0));
        summary[split] = {{"file", dir.path(split + ".ds").string()}, {"n", d.size()}, {"fnv1a", hex64(dataset_hash(d))}};
        say(log, "generated " + split + " (" + std::to_string(d.size()) + " images)");
    }
    dir.finish();
    return summary;
}

json cmd_pretrain(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "pretrain");
    auto t0 = Clock::now();
    const Dataset train = obtain_dataset(cfg, "source_train");
    const Dataset val = obtain_dataset(cfg, "source_val");
    const Dataset target_val = obtain_dataset(cfg, "target_val");
    dir.add_dataset("source_train", train);
    dir.add_dataset("source_val", val);
    dir.add_dataset("target_val", target_val);
    dir.time("data", seconds_since(t0));

    PretrainConfig pc = cfg.pretrain;
    pc.seed = cfg.pretrain_seed();
    t0 = Clock::now();
    double epoch_loss = 0.0;
    int epoch_steps = 0, current = 1;
    auto on_step = [&](const PretrainLog& l) {
        if (l.epoch != current) {
            say(log, "pretrain epoch " + std::to_string(current) + "/" + std::to_string(pc.epochs) + " loss " +
                         fixed(epoch_loss / std::max(1, epoch_steps)));
            current = l.epoch;
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
        epoch_loss += l.loss;
        ++epoch_steps;
    };
    PretrainResult res = pretrain(cfg.detector, init_detector_params(cfg.detector, cfg.init_seed()), train, pc, on_step);
    if (epoch_steps > 0) {
        say(log, "pretrain epoch " + std::to_string(current) + "/" + std::to_string(pc.epochs) + " loss " +
                     fixed(epoch_loss / epoch_steps));
    }
    dir.time("pretrain", seconds_since(t0));

    Checkpoint ckpt;
    ckpt.meta = checkpoint_meta(cfg, "source");
    ckpt.set("model", res.params);
    dir.checkpoint("source.ckpt", ckpt);
    dir.text("pretrain_metrics.csv", pretrain_csv(res.history));

    t0 = Clock::now();
    const EvalReport src = evaluate_model(cfg.detector, res.params, val, pc.domain_query, eval_options(cfg));
    const EvalReport tgt = evaluate_model(cfg.detector, res.params, target_val, pc.domain_query, eval_options(cfg));
    dir.time("eval", seconds_since(t0));
    dir.json_file("eval_source_val.json", eval_report_json(src));
    dir.json_file("eval_target_val.json", eval_report_json(tgt));
    say(log, "source val mAP " + fixed(src.mean_ap) + ", source-only target val mAP " + fixed(tgt.mean_ap));
    dir.finish();
    return {{"checkpoint", dir.path("source.ckpt").string()},
            {"source_val_map", src.mean_ap},
            {"target_val_map", tgt.mean_ap}};
}

json cmd_adapt(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "adapt");
    auto t0 = Clock::now();
    const Checkpoint input = load_input_checkpoint(cfg);
    const ParamSet source = detector_group(cfg, input, "model");
    dir.add_input("checkpoint", cfg.checkpoint);
    const Dataset train = obtain_dataset(cfg, "target_train");
    const Dataset val = obtain_dataset(cfg, "target_val");
    dir.add_dataset("target_train", train);
    dir.add_dataset("target_val", val);
    dir.time("load", seconds_since(t0));

    AdaptConfig ac = cfg.adapt;
    ac.seed = cfg.adapt_seed();
    StepReport last;
    AdaptCallbacks cb;
    cb.on_step = [&](const StepReport& r) { last = r; };
    cb.on_epoch = [&](const EpochEval& e) {
        say(log, "adapt epoch " + std::to_string(e.epoch) + "/" + std::to_string(ac.epochs) + " step " +
                     std::to_string(e.step) + " target mAP " + fixed(e.report.mean_ap) +
                     (e.epoch > 0 ? " L_stu " + fixed(last.l_stu) + " L_enc " + fixed(last.l_enc) + " L_dec " +
                                        fixed(last.l_dec)
                                  : std::string()));
    };

    t0 = Clock::now();
    AdaptResult res;
    try {
        res = run_adaptation(cfg.detector, source, train, val, ac, cb);
    } catch (const NumericError& e) {
        json dump = {{"error", e.what()}, {"step", last.step}, {"epoch", last.epoch}, {"last_l_stu", last.l_stu},
                     {"last_l_enc", last.l_enc}, {"last_l_dec", last.l_dec}, {"last_grad_norm", last.grad_norm}};
        dir.json_file("failure.json", dump);
        dir.time("adapt", seconds_since(t0));
        dir.finish("numeric_failure");
        throw;
    }
    dir.time("adapt", seconds_since(t0));

    Checkpoint out;
    out.meta = checkpoint_meta(cfg, "adapted");
    out.meta["eval_model"] = ac.eval_model;
    out.meta["step"] = res.state.step;
    out.set("model", res.adapted);
    out.set("teacher", res.state.teacher);
    out.set("student", res.state.student);
    out.set("disc", res.state.discs);
    out.set("disc_init", res.state.disc_init);
    dir.checkpoint("adapted.ckpt", out);
    dir.text("metrics.csv", metrics_csv(res.history, res.evals, cfg.detector.enc_layers, cfg.detector.dec_layers,
                                        cfg.fpi_points));
    if (ac.use_partition) dir.json_file("partition.json", partition_json(res.variances, res.split));
    const EvalReport& final_report = res.evals.back().report;
    dir.json_file("eval_final.json", eval_report_json(final_report));
    dir.text("froc_final.csv", froc_csv(final_report.froc_curve));
    dir.finish();

    json summary = {{"checkpoint", dir.path("adapted.ckpt").string()},
                    {"steps", res.state.step},
                    {"source_only_map", res.evals.front().report.mean_ap},
                    {"adapted_map", final_report.mean_ap}};
    if (ac.use_partition) summary["mean_severity"] = severity_summary(train, res.split);
    return summary;
}

json cmd_partition(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "partition");
    const Checkpoint input = load_input_checkpoint(cfg);
    const ParamSet source = detector_group(cfg, input, "model");
    dir.add_input("checkpoint", cfg.checkpoint);
    const Dataset train = obtain_dataset(cfg, "target_train");
    dir.add_dataset("target_train", train);
    const auto t0 = Clock::now();
    const PartitionResult pr = partition_target(cfg.detector, source, train, cfg.adapt.mc_passes, cfg.adapt.mc_dropout,
                                                cfg.adapt.sigma, partition_seed(cfg), cfg.adapt.use_domain_query);
    dir.time("partition", seconds_since(t0));
    dir.json_file("partition.json", partition_json(pr.variances, pr.split));
    dir.finish();
    say(log, "similar " + std::to_string(pr.split.source_similar.size()) + ", dissimilar " +
                 std::to_string(pr.split.source_dissimilar.size()));
    return {{"source_similar", pr.split.source_similar.size()},
            {"source_dissimilar", pr.split.source_dissimilar.size()},
            {"mean_severity", severity_summary(train, pr.split)}};
}

json cmd_eval(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "eval");
    const Checkpoint input = load_input_checkpoint(cfg);
    const ParamSet model = detector_group(cfg, input, cfg.eval_group);
    dir.add_input("checkpoint", cfg.checkpoint);
    const Dataset data = obtain_dataset(cfg, cfg.eval_split);
    dir.add_dataset(cfg.eval_split, data);
    const bool dq = input.meta.value("domain_query", cfg.adapt.use_domain_query);
    const auto t0 = Clock::now();
    const EvalReport r = evaluate_model(cfg.detector, model, data, dq, eval_options(cfg));
    dir.time("eval", seconds_since(t0));
    dir.json_file("eval.json", eval_report_json(r));
    dir.text("froc.csv", froc_csv(r.froc_curve));
    dir.finish();
    say(log, cfg.eval_split + " mAP " + fixed(r.mean_ap));
    return eval_report_json(r);
}

json cmd_bound(const RunConfig& cfg, const LogFn& log) {
    RunDir dir(cfg, "bound");
    const Checkpoint input = load_input_checkpoint(cfg);
    if (!input.has("disc") || !input.has("disc_init")) {
        throw InputError(cfg.checkpoint + ": no discriminators in checkpoint (expected the output of adapt)");
    }
    dir.add_input("checkpoint", cfg.checkpoint);
    const ParamSet& discs = input.group("disc");
    const ParamSet& init = input.group("disc_init");
    const auto t0 = Clock::now();
    json list = json::array();
    std::uint64_t index = 0;
    const std::pair<Stream, int> groups[] = {{Stream::EncoderQuery, cfg.detector.enc_layers},
                                             {Stream::EncoderToken, cfg.detector.enc_layers},
                                             {Stream::DecoderQuery, cfg.detector.dec_layers},
                                             {Stream::DecoderToken, cfg.detector.dec_layers}};
    for (const auto& [stream, layers] : groups) {
        for (int l = 1; l <= layers; ++l) {
            const std::string prefix = discriminator_prefix(stream, l);
            PowerIterationOptions opts;
            opts.seed = derive_seed(cfg.seed, "power-iteration", index++);
            const std::vector<Tensor> w = discriminator_weights(discs, prefix);
            const std::vector<Tensor> m = discriminator_weights(init, prefix);
            const DiscriminatorSpec spec = spec_from_weights(w, m, cfg.data_norm, opts);
            list.push_back({{"name", prefix},
                            {"spec", discriminator_spec_json(spec)},
                            {"bound", covering_bound(spec, cfg.epsilon, BoundForm::Product)},
                            {"bound_lipschitz", covering_bound(spec, cfg.epsilon, BoundForm::LipschitzProduct)},
                            {"epsilon_allocation", epsilon_allocation(spec, cfg.epsilon)},
                            {"epsilon_chain", epsilon_chain(spec, cfg.epsilon)}});
        }
    }
    dir.time("bound", seconds_since(t0));
    const json report = {{"epsilon", cfg.epsilon}, {"data_norm", cfg.data_norm}, {"discriminators", list}};
    dir.json_file("bound.json", report);
    dir.finish();
    say(log, "bounds for " + std::to_string(list.size()) + " discriminators");
    return report;
}

json run_command(const std::string& command, const RunConfig& cfg, const LogFn& log) {
    if (command == "generate") return cmd_generate(cfg, log);
    if (command == "pretrain") return cmd_pretrain(cfg, log);
    if (command == "adapt") return cmd_adapt(cfg, log);
    if (command == "partition") return cmd_partition(cfg, log);
    if (command == "eval") return cmd_eval(cfg, log);
    if (command == "bound") return cmd_bound(cfg, log);
    throw ConfigError("unknown command '" + command + "'");
}

json dry_run_report(const std::string& command, const RunConfig& cfg) {
    return {{"command", command}, {"dry_run", true}, {"config", config_to_json(cfg)}};
}

int guarded_exit(const std::function<void()>& body, std::ostream& err) {
    try {
        body();
        return kExitOk;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const nlohmann::ordered_json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace titan
