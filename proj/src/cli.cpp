#include "faithlab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>

#include "faithlab/error.hpp"
#include "faithlab/faithtest.hpp"
#include "faithlab/format.hpp"
#include "faithlab/rng.hpp"

namespace faithlab::cli {

namespace fs = std::filesystem;

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"gen-data", "train", "poison-train", "explain",
                                                   "test",     "attack", "report"};
    return names;
}

// ------------------------------------------------------------- builders

Datasets load_data(const RunConfig& cfg) {
    const fs::path dir = cfg.path("data", "dir");
    if (dir.empty()) return generate_data(cfg);
    Datasets d;
    d.train = load_dataset(dir / "train.ftd");
    d.test = load_dataset(dir / "test.ftd");
    if (fs::exists(dir / "masks.json")) {
        SpuriousData s;
        s.train = d.train;
        for (const auto& m : json::parse(read_text(dir / "masks.json"))) s.masks.push_back(tensor_from_json(m));
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("probe_", 0) == 0 && entry.path().extension() == ".ftd") {
                s.probes.emplace(name.substr(6, name.size() - 10), load_dataset(entry.path()));
            }
        }
        d.spurious = std::move(s);
    }
    return d;
}

Datasets generate_data(const RunConfig& cfg) {
    Datasets d;
    const std::string kind = cfg.str("data", "kind");
    const std::uint64_t seed = cfg.seed();
    if (kind == "synthetic") {
        const auto classes = cfg.count("data", "classes");
        const auto h = cfg.count("data", "height"), w = cfg.count("data", "width"), c = cfg.count("data", "channels");
        d.train = gen_synth_images(classes, cfg.count("data", "per_class"), h, w, c, substream_seed(seed, "data.train"));
        d.test = gen_synth_images(classes, cfg.count("data", "test_per_class"), h, w, c, substream_seed(seed, "data.test"));
    } else if (kind == "tabular") {
        const auto f = cfg.count("data", "features");
        d.train = gen_tabular_binary(f, cfg.count("data", "per_class"), substream_seed(seed, "data.train"));
        d.test = gen_tabular_binary(f, cfg.count("data", "test_per_class"), substream_seed(seed, "data.test"));
    } else if (kind == "idx") {
        if (cfg.str("data", "idx_images").empty() || cfg.str("data", "idx_test_images").empty()) {
            throw config_error("idx data needs idx_images/idx_labels and idx_test_images/idx_test_labels");
        }
        d.train = load_idx(cfg.path("data", "idx_images"), cfg.path("data", "idx_labels"));
        d.test = load_idx(cfg.path("data", "idx_test_images"), cfg.path("data", "idx_test_labels"));
        d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
    } else if (kind == "spurious") {
        const auto per = cfg.count("data", "spurious_per_combo");
        const auto size = cfg.count("data", "height");
        d.spurious = gen_spurious_dataset(substream_seed(seed, "data.train"), per, size);
        d.train = d.spurious->train;
        d.test = gen_spurious_dataset(substream_seed(seed, "data.test"), std::max<std::size_t>(per / 4, 1), size).train;
    } else {
        throw config_error("unknown data kind '" + kind + "'");
    }
    return d;
}

NetworkSpec build_network(const RunConfig& cfg, const Shape& input_shape, std::size_t num_classes) {
    const std::string arch = cfg.str("model", "arch");
    const auto hidden = cfg.count("model", "hidden");
    const double beta = cfg.num("model", "softplus_beta");
    if (hidden == 0) throw config_error("model.hidden must be positive");
    if (beta < 0.0) throw config_error("model.softplus_beta must be non-negative");
    auto act = [&] { return beta > 0.0 ? LayerSpec::softplus(beta) : LayerSpec::relu(); };

    NetworkSpec spec;
    spec.input_shape = input_shape;
    spec.num_classes = num_classes;
    if (arch == "desk_cnn") {
        if (input_shape.size() != 3) throw config_error("desk_cnn needs {C,H,W} inputs");
        const auto ch = cfg.count("model", "conv_channels");
        if (ch == 0) throw config_error("model.conv_channels must be positive");
        spec.layers = {LayerSpec::conv2d(input_shape[0], ch, 3, 1, 1), act(), LayerSpec::maxpool(2, 2),
                       LayerSpec::flatten(),
                       LayerSpec::dense(ch * (input_shape[1] / 2) * (input_shape[2] / 2), hidden), act(),
                       LayerSpec::dense(hidden, num_classes)};
    } else if (arch == "wide_cnn") {
        if (input_shape.size() != 3) throw config_error("wide_cnn needs {C,H,W} inputs");
        const auto ch = cfg.count("model", "conv_channels");
        if (ch == 0) throw config_error("model.conv_channels must be positive");
        spec.layers = {LayerSpec::conv2d(input_shape[0], ch, 3, 1, 1), act(), LayerSpec::flatten(),
                       LayerSpec::dense(ch * input_shape[1] * input_shape[2], hidden), act(),
                       LayerSpec::dense(hidden, num_classes)};
    } else if (arch == "mlp") {
        spec.layers = {LayerSpec::flatten(), LayerSpec::dense(shape_size(input_shape), hidden), act(),
                       LayerSpec::dense(hidden, num_classes)};
    } else {
        throw config_error("unknown model arch '" + arch + "'");
    }
    spec.validate();
    return spec;
}

TriggerSpec build_trigger(const RunConfig& cfg, const Dataset& train) {
    const std::string kind = cfg.str("trigger", "kind");
    const auto size = cfg.count("trigger", "size");
    const auto target = cfg.count("trigger", "target_label");
    if (target >= train.num_classes) throw config_error("trigger.target_label out of range");
    if (kind == "tabular") return tabular_trigger(train, size, target);

    const auto layout = spatial_layout(train.input_shape);
    if (size == 0 || size > layout.height || size > layout.width) throw config_error("trigger does not fit the input");
    auto place = [&](const char* key, std::size_t extent) {
        const long v = cfg.integer("trigger", key);
        if (v < 0) return extent - size;
        return static_cast<std::size_t>(v);
    };
    const std::size_t top = place("top", layout.height), left = place("left", layout.width);
    TriggerSpec t;
    if (kind == "square") {
        t = square_trigger(top, left, size, target, cfg.num("trigger", "value"));
    } else if (kind == "checkerboard") {
        t = checkerboard_trigger(top, left, size, target);
    } else {
        throw config_error("unknown trigger kind '" + kind + "'");
    }
    t.validate(layout);
    return t;
}

OptimConfig optim_config(const RunConfig& cfg) {
    OptimConfig o;
    const std::string alg = cfg.str("optim", "algorithm");
    if (alg == "sgd") {
        o.algorithm = Algorithm::sgd;
    } else if (alg == "adam") {
        o.algorithm = Algorithm::adam;
    } else {
        throw config_error("unknown optimizer '" + alg + "'");
    }
    o.lr = cfg.num("optim", "lr");
    o.momentum = cfg.num("optim", "momentum");
    o.beta1 = cfg.num("optim", "beta1");
    o.beta2 = cfg.num("optim", "beta2");
    o.eps = cfg.num("optim", "eps");
    o.batch_size = cfg.count("optim", "batch_size");
    o.epochs = cfg.count("optim", "epochs");
    o.seed = cfg.seed();
    o.validate();
    return o;
}

RecordInterval record_interval(const RunConfig& cfg) {
    RecordInterval r;
    r.every = cfg.count("record", "every");
    r.unit = interval_unit_from_string(cfg.str("record", "unit"));
    r.count = cfg.count("record", "count");
    if (r.every == 0) throw config_error("record.every must be positive");
    return r;
}

ExplainerConfig explainer_config(const RunConfig& cfg) {
    ExplainerConfig e;
    e.ig_steps = cfg.count("explain", "ig_steps");
    e.ig_baseline = cfg.num("explain", "ig_baseline");
    e.sg_sigma = cfg.num("explain", "sg_sigma");
    e.sg_samples = cfg.count("explain", "sg_samples");
    e.occlusion_window = cfg.count("explain", "occlusion_window");
    e.occlusion_stride = cfg.count("explain", "occlusion_stride");
    e.occlusion_baseline = cfg.num("explain", "occlusion_baseline");
    e.lime_segments = cfg.count("explain", "lime_segments");
    e.lime_samples = cfg.count("explain", "lime_samples");
    e.lime_kernel_width = cfg.num("explain", "lime_kernel_width");
    e.lime_ridge_lambda = cfg.num("explain", "lime_ridge_lambda");
    e.lime_baseline = cfg.num("explain", "lime_baseline");
    e.shap_samples = cfg.count("explain", "shap_samples");
    e.shap_segments = cfg.count("explain", "shap_segments");
    e.shap_baseline = cfg.num("explain", "shap_baseline");
    e.shap_exact = cfg.flag("explain", "shap_exact");
    e.wrt = wrt_from_string(cfg.str("explain", "wrt"));
    e.seed = substream_seed(cfg.seed(), "explainer");
    e.validate();
    return e;
}

AttackConfig attack_config(const RunConfig& cfg, const Shape& input_shape) {
    AttackConfig a;
    a.gamma1 = cfg.num("attack", "gamma1");
    a.gamma2 = cfg.num("attack", "gamma2");
    a.lr = cfg.num("attack", "lr");
    a.iterations = cfg.count("attack", "iterations");
    a.beta = cfg.num("attack", "beta");
    a.grad_mode = grad_mode_from_string(cfg.str("attack", "grad_mode"));
    a.fd_h = cfg.num("attack", "fd_h");
    a.ig_steps = cfg.count("attack", "ig_steps");
    a.ig_baseline = cfg.num("explain", "ig_baseline");
    a.wrt = wrt_from_string(cfg.str("attack", "wrt"));
    a.target_map = corner_square_target(input_shape, cfg.count("attack", "target_size"));
    a.validate(input_shape);
    return a;
}

std::vector<Method> methods(const RunConfig& cfg) {
    std::vector<Method> out;
    for (const auto& name : cfg.strs("explain", "methods")) {
        const Method m = method_from_string(name);
        if (m == Method::random) continue;  // always added separately
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    return out;
}

std::vector<fs::path> checkpoint_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "run directory '" + dir.string() + "' does not exist");
    static const std::regex pattern(R"(ckpt_(\d+)_(\d+)\.bin)");
    std::vector<std::pair<std::size_t, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoul(m[1].str()), entry.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<fs::path> out;
    for (auto& [i, p] : found) out.push_back(std::move(p));
    if (out.empty()) throw data_error("no checkpoints in '" + dir.string() + "'");
    return out;
}

TrainRecord load_record(const fs::path& dir) {
    TrainRecord rec;
    for (const auto& p : checkpoint_files(dir)) {
        rec.checkpoints.push_back(load_checkpoint(p));
        rec.losses.push_back(rec.checkpoints.back().train_loss);
        rec.clean_acc.push_back(not_measured);
        rec.backdoor_acc.push_back(not_measured);
    }
    rec.final_model = rec.checkpoints.back();
    return rec;
}

// -------------------------------------------------------------- helpers

namespace {

struct Context {
    RunConfig cfg;
    fs::path out;
    std::ostream* log;
};

void prepare_out(const fs::path& out) {
    if (fs::exists(out) && !fs::is_empty(out)) {
        throw config_error("output directory '" + out.string() + "' already exists; runs are single-shot");
    }
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create '" + out.string() + "': " + ec.message());
}

void write_checkpoints(const TrainRecord& rec, const fs::path& out) {
    for (std::size_t i = 0; i < rec.checkpoints.size(); ++i) {
        const auto& c = rec.checkpoints[i];
        save_checkpoint(c, out / ("ckpt_" + std::to_string(i) + "_" + std::to_string(c.epoch) + ".bin"));
    }
    write_text(out / "losses.csv", loss_csv(rec));
}

fs::path model_path(const Context& ctx, const char* section) {
    fs::path p = ctx.cfg.path(section, "model");
    if (!p.empty()) return p;
    const fs::path run = ctx.cfg.path("test", "run_dir");
    if (run.empty()) throw config_error(std::string(section) + ".model or test.run_dir must name a model");
    return checkpoint_files(run).back();
}

Checkpoint load_model_for(const Context& ctx, const char* section, const Dataset& data) {
    Checkpoint m = load_checkpoint(model_path(ctx, section));
    if (m.spec.input_shape != data.input_shape) {
        throw data_error("model input " + shape_string(m.spec.input_shape) + " does not match data " +
                         shape_string(data.input_shape));
    }
    return m;
}

/// First `n` test samples, optionally skipping a label.
std::vector<std::size_t> pick_inputs(const Dataset& data, std::size_t n, std::optional<std::size_t> skip_label) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.size() && out.size() < n; ++i) {
        if (!skip_label || data.labels[i] != *skip_label) out.push_back(i);
    }
    if (out.empty()) throw data_error("no test inputs available");
    return out;
}

std::vector<std::string> provider_names(const std::vector<Method>& ms) {
    std::vector<std::string> out;
    for (Method m : ms) out.push_back(method_name(m));
    out.push_back("random");
    return out;
}

double final_backdoor_accuracy(const Checkpoint& model, const Dataset& test, const TriggerSpec& trig) {
    return backdoor_accuracy(model, test, trig);
}

// ------------------------------------------------------------- commands

void cmd_gen_data(Context& ctx) {
    const Datasets d = generate_data(ctx.cfg);
    save_dataset(d.train, ctx.out / "train.ftd");
    save_dataset(d.test, ctx.out / "test.ftd");
    json manifest{{"kind", ctx.cfg.str("data", "kind")},
                  {"seed", ctx.cfg.seed()},
                  {"input_shape", d.train.input_shape},
                  {"num_classes", d.train.num_classes},
                  {"train_count", d.train.size()},
                  {"test_count", d.test.size()},
                  {"files", json::array({"train.ftd", "test.ftd"})}};
    if (d.spurious) {
        for (const auto& [name, probe] : d.spurious->probes) {
            save_dataset(probe, ctx.out / ("probe_" + name + ".ftd"));
            manifest["files"].push_back("probe_" + name + ".ftd");
        }
        json masks = json::array();
        for (const auto& m : d.spurious->masks) masks.push_back(tensor_to_json(m));
        write_text(ctx.out / "masks.json", dump_json(masks));
        manifest["files"].push_back("masks.json");
    }
    write_text(ctx.out / "manifest.json", dump_json(manifest));
    *ctx.log << "wrote " << d.train.size() << " train / " << d.test.size() << " test samples to " << ctx.out << '\n';
}

void write_summary(const TrainRecord& rec, const fs::path& out, json extra = json::object()) {
    json s{{"checkpoints", rec.checkpoints.size()},
           {"final_train_loss", rec.final_model.train_loss},
           {"final_train_accuracy", rec.final_train_accuracy}};
    if (!std::isnan(rec.final_clean_acc)) s["final_clean_acc"] = rec.final_clean_acc;
    if (!std::isnan(rec.final_backdoor_acc)) s["final_backdoor_acc"] = rec.final_backdoor_acc;
    s.update(extra);
    write_text(out / "summary.json", dump_json(s));
}

void cmd_train(Context& ctx) {
    const Datasets d = load_data(ctx.cfg);
    const auto spec = build_network(ctx.cfg, d.train.input_shape, d.train.num_classes);
    EvalSets eval{&d.test, nullptr};
    const auto rec = train(spec, d.train, optim_config(ctx.cfg), record_interval(ctx.cfg), eval);
    write_checkpoints(rec, ctx.out);
    write_summary(rec, ctx.out);
    *ctx.log << "trained " << rec.n() << " recorded checkpoints; clean accuracy " << rec.final_clean_acc << '\n';
}

void cmd_poison_train(Context& ctx) {
    const Datasets d = load_data(ctx.cfg);
    const auto trig = build_trigger(ctx.cfg, d.train);
    const OptimConfig opt = optim_config(ctx.cfg);

    Checkpoint base;
    const fs::path pre = ctx.cfg.path("poison", "pretrained");
    if (!pre.empty()) {
        base = load_checkpoint(pre);
    } else {
        OptimConfig warm = opt;
        warm.epochs = ctx.cfg.count("poison", "pretrain_epochs");
        const auto spec = build_network(ctx.cfg, d.train.input_shape, d.train.num_classes);
        base = train(spec, d.train, warm, RecordInterval{1, IntervalUnit::epochs, 0}).final_model;
    }
    const Dataset poisoned = poison_dataset(d.train, trig, ctx.cfg.num("poison", "ratio"),
                                            substream_seed(ctx.cfg.seed(), "poison"));
    EvalSets eval{&d.test, &trig};
    const auto rec = incremental_backdoor_train(base, poisoned, opt, record_interval(ctx.cfg), eval);
    write_checkpoints(rec, ctx.out);
    write_text(ctx.out / "trigger.json", dump_json(to_json(trig)));
    write_summary(rec, ctx.out, {{"poisoned_count", poisoned.poisoned.size()}});
    *ctx.log << "backdoor accuracy " << rec.final_backdoor_acc << ", clean accuracy " << rec.final_clean_acc << '\n';
}

void cmd_explain(Context& ctx) {
    const Datasets d = load_data(ctx.cfg);
    const Checkpoint model = load_model_for(ctx, "explain", d.test);
    const ExplainerConfig ecfg = explainer_config(ctx.cfg);
    const double fraction = ctx.cfg.num("explain", "top_fraction");
    const auto ms = methods(ctx.cfg);
    fs::create_directories(ctx.out / "maps");
    fs::create_directories(ctx.out / "sets");
    json index = json::array();
    for (std::size_t i : pick_inputs(d.test, ctx.cfg.count("explain", "inputs"), std::nullopt)) {
        const Tensor& x = d.test.inputs[i];
        const std::size_t target = predict(model, x);
        const std::string stem = "sample" + std::to_string(i);
        for (Method m : ms) {
            ExplainerConfig local = ecfg;
            local.seed = derive_seed(ecfg.seed, i);
            const auto map = explain(model, x, target, m, local);
            write_text(ctx.out / "maps" / (stem + "_" + map.method + ".json"), dump_json(to_json(map)));
            write_text(ctx.out / "sets" / (stem + "_" + map.method + ".json"),
                       dump_json(json(top_k(map, fraction).indices)));
        }
        const auto rnd = random_explainer(x, fraction, derive_seed(ecfg.seed, i));
        write_text(ctx.out / "sets" / (stem + "_random.json"), dump_json(json(rnd.indices)));
        index.push_back({{"sample", i}, {"label", d.test.labels[i]}, {"target", target}});
    }
    write_text(ctx.out / "index.json", dump_json(index));
    *ctx.log << "explained " << index.size() << " inputs with " << ms.size() << " methods\n";
}

void write_report(const Context& ctx, FaithReport& r, json& all) {
    r.seed = ctx.cfg.seed();
    const std::string stem = r.test + "_" + r.method;
    write_text(ctx.out / ("report_" + stem + ".json"), dump_json(to_json(r)));
    if (!r.series.empty()) write_text(ctx.out / ("trend_" + stem + ".csv"), trend_csv(r));
    all.push_back(to_json(r));
    *ctx.log << r.test << ' ' << r.method << ": mean PCC "
             << (r.mean_pcc ? fmt_double(*r.mean_pcc) : std::string("undefined")) << " (" << r.strength() << ")\n";
}

void cmd_test_traditional(Context& ctx, const Datasets& d) {
    const fs::path run = ctx.cfg.path("test", "run_dir");
    const Checkpoint model = ctx.cfg.str("explain", "model").empty() && !run.empty()
                                 ? load_checkpoint(checkpoint_files(run).back())
                                 : load_model_for(ctx, "explain", d.test);
    const ExplainerConfig ecfg = explainer_config(ctx.cfg);
    const auto ms = methods(ctx.cfg);
    const auto inputs = pick_inputs(d.test, ctx.cfg.count("test", "inputs"), std::nullopt);
    const double removal = ctx.cfg.num("test", "removal_value");

    // One explanation per (input, method); sets for every fraction come from it.
    std::vector<std::vector<ExplanationMap>> maps(inputs.size());
    std::vector<std::size_t> targets(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& x = d.test.inputs[inputs[k]];
        targets[k] = predict(model, x);
        ExplainerConfig local = ecfg;
        local.seed = derive_seed(ecfg.seed, inputs[k]);
        for (Method m : ms) maps[k].push_back(explain(model, x, targets[k], m, local));
    }

    json rows = json::array();
    std::ostringstream csv;
    csv << "method,fraction,reduction,synthesis,augmentation\n";
    const auto names = provider_names(ms);
    for (double f : ctx.cfg.nums("test", "traditional_fractions")) {
        for (std::size_t mi = 0; mi < names.size(); ++mi) {
            double red = 0.0, syn = 0.0, aug = 0.0;
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                const std::size_t i = inputs[k];
                const Tensor& x = d.test.inputs[i];
                const auto set = mi < ms.size() ? top_k(maps[k][mi], f)
                                                : random_explainer(x, f, derive_seed(ecfg.seed, i));
                const std::size_t donor = pick_donor(d.test, d.test.labels[i], derive_seed(ecfg.seed, i));
                red += reduction_test(model, x, set, targets[k], removal);
                syn += synthesis_test(model, x, set, targets[k]);
                aug += augmentation_test(model, x, d.test.labels[i], d.test.inputs[donor], d.test.labels[donor], set,
                                         targets[k]);
            }
            const double n = static_cast<double>(inputs.size());
            rows.push_back({{"method", names[mi]},
                            {"fraction", f},
                            {"reduction", red / n},
                            {"synthesis", syn / n},
                            {"augmentation", aug / n}});
            csv << names[mi] << ',' << fmt_double(f) << ',' << fmt_double(red / n) << ',' << fmt_double(syn / n) << ','
                << fmt_double(aug / n) << '\n';
        }
    }
    write_text(ctx.out / "traditional.json",
               dump_json({{"test", "traditional"}, {"rows", rows}, {"seed", ctx.cfg.seed()},
                          {"inputs", inputs.size()}, {"dataset", ctx.cfg.str("test", "dataset")}}));
    write_text(ctx.out / "traditional.csv", csv.str());
    *ctx.log << "traditional tests over " << inputs.size() << " inputs written\n";
}

// Ground-truth check on the spurious-background data, with EMT PCCs for the same model when a run is given.
void cmd_test_debug(Context& ctx, const Datasets& d) {
    if (!d.spurious) throw config_error("test.kind \"debug\" needs data.kind \"spurious\"");
    const fs::path run = ctx.cfg.path("test", "run_dir");
    std::optional<TrainRecord> rec;
    if (!run.empty()) rec = load_record(run);
    const Checkpoint model = ctx.cfg.str("explain", "model").empty() && rec ? rec->checkpoints.back()
                                                                             : load_model_for(ctx, "explain", d.test);
    const ExplainerConfig ecfg = explainer_config(ctx.cfg);
    const double fraction = ctx.cfg.num("explain", "top_fraction");
    const auto ms = methods(ctx.cfg);
    const std::size_t n = ctx.cfg.count("test", "inputs");

    json out = to_json(debug_experiment(model, *d.spurious, ms, ecfg, fraction, n, ctx.cfg.count("test", "random_draws")));
    out["top_fraction"] = fraction;
    out["inputs"] = std::min(n, d.spurious->train.size());
    if (rec) {
        std::vector<Tensor> inputs;
        std::vector<std::size_t> labels;
        for (std::size_t i : pick_inputs(d.test, n, std::nullopt)) {
            inputs.push_back(d.test.inputs[i]);
            labels.push_back(d.test.labels[i]);
        }
        for (auto& row : out["ranking"]) {
            const Method m = method_from_string(row["method"]);
            const auto r = emt(rec->checkpoints, rec->losses, inputs, labels, method_provider(m, ecfg, fraction),
                               row["method"]);
            row["emt_pcc"] = r.mean_pcc ? json(*r.mean_pcc) : json(nullptr);
        }
    }
    write_text(ctx.out / "debug.json", dump_json(out));
    *ctx.log << "debug ranking:";
    for (const auto& row : out["ranking"]) *ctx.log << ' ' << row["method"].get<std::string>();
    *ctx.log << '\n';
}

void cmd_test(Context& ctx) {
    const std::string kind = ctx.cfg.str("test", "kind");
    const Datasets d = load_data(ctx.cfg);
    if (kind == "traditional") return cmd_test_traditional(ctx, d);
    if (kind == "debug") return cmd_test_debug(ctx, d);
    if (kind != "embt" && kind != "ptt" && kind != "emt") throw config_error("unknown test kind '" + kind + "'");

    const fs::path run = ctx.cfg.path("test", "run_dir");
    if (run.empty()) throw config_error("test.run_dir is required for trend tests");
    TrainRecord rec = load_record(run);
    if (ctx.cfg.flag("record", "filter")) rec = filter_checkpoints(rec);

    const ExplainerConfig ecfg = explainer_config(ctx.cfg);
    const double fraction = ctx.cfg.num("explain", "top_fraction");
    const auto ms = methods(ctx.cfg);
    const auto names = provider_names(ms);
    const json echo{{"top_fraction", fraction},
                    {"checkpoints", rec.checkpoints.size()},
                    {"filtered", ctx.cfg.flag("record", "filter")},
                    {"dataset", ctx.cfg.str("test", "dataset")}};
    json all = json::array();

    std::optional<TriggerSpec> trig;
    if (kind != "emt") {
        trig = trigger_from_json(json::parse(read_text(run / "trigger.json")));
        const double acc = final_backdoor_accuracy(rec.checkpoints.back(), d.test, *trig);
        if (acc < backdoor_gate) {
            for (const auto& name : names) {
                auto r = *gate_check(kind, name, acc);
                r.config.update(echo);
                write_report(ctx, r, all);
            }
            write_text(ctx.out / "reports.json", dump_json(all));
            std::ostringstream msg;
            msg << "backdoor accuracy " << std::setprecision(4) << acc << " is below the gate " << backdoor_gate
                << "; trend tests not scored";
            throw Error(ErrorKind::gate, msg.str());
        }
    }

    const auto idx = pick_inputs(d.test, ctx.cfg.count("test", "inputs"),
                                 trig ? std::optional<std::size_t>(trig->target_label) : std::nullopt);
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    for (std::size_t i : idx) {
        inputs.push_back(d.test.inputs[i]);
        labels.push_back(d.test.labels[i]);
    }

    for (std::size_t mi = 0; mi < names.size(); ++mi) {
        const Method m = mi < ms.size() ? ms[mi] : Method::random;
        const auto provider = method_provider(m, ecfg, fraction);
        FaithReport r;
        if (kind == "embt") {
            r = embt(rec.checkpoints, *trig, inputs, provider, names[mi]);
        } else if (kind == "ptt") {
            r = ptt(rec.checkpoints.back(), *trig, ctx.cfg.nums("test", "fractions"), inputs, provider, names[mi]);
        } else {
            r = emt(rec.checkpoints, rec.losses, inputs, labels, provider, names[mi]);
        }
        r.config = echo;
        write_report(ctx, r, all);
    }
    write_text(ctx.out / "reports.json", dump_json(all));
}

void cmd_attack(Context& ctx) {
    const Datasets d = load_data(ctx.cfg);
    const Checkpoint model = load_model_for(ctx, "attack", d.test);
    const AttackConfig acfg = attack_config(ctx.cfg, d.test.input_shape);
    ExplainerConfig ecfg = explainer_config(ctx.cfg);
    std::vector<Method> victims;
    for (const auto& v : ctx.cfg.strs("attack", "victims")) victims.push_back(method_from_string(v));
    // the IG sample is only optimized when some victim reads it
    bool need_ig = false;
    for (Method v : victims) need_ig = need_ig || attack_source_for(v) == AttackSource::ig;

    json summary = json::array();
    for (std::size_t i : pick_inputs(d.test, ctx.cfg.count("attack", "inputs"), std::nullopt)) {
        const Tensor& x = d.test.inputs[i];
        const std::size_t target = predict(model, x);
        const std::string stem = std::to_string(i);
        AttackConfig ig_cfg = acfg;
        ig_cfg.grad_mode = GradMode::finite_difference;
        const auto sal = manipulate(model, x, target, AttackSource::saliency, acfg);
        std::optional<AttackResult> ig;
        if (need_ig) ig = manipulate(model, x, target, AttackSource::ig, ig_cfg);
        std::vector<std::pair<std::string, const AttackResult*>> runs{{"saliency", &sal}};
        if (ig) runs.emplace_back("ig", &*ig);
        for (const auto& [name, res] : runs) {
            write_text(ctx.out / ("trace_" + stem + "_" + name + ".csv"), trace_csv(res->trace));
            write_text(ctx.out / ("xadv_" + stem + "_" + name + ".json"), dump_json(tensor_to_json(res->x_adv)));
        }
        ecfg.seed = derive_seed(substream_seed(ctx.cfg.seed(), "explainer"), i);
        json rows = json::array();
        for (Method v : victims) {
            const auto r = indirect_attack(sal.smooth_model, x, sal.x_adv, ig ? ig->x_adv : x, target, v, ecfg,
                                           acfg.target_map);
            rows.push_back({{"victim", r.victim},
                            {"source", to_string(r.source)},
                            {"expl_mse_before", r.expl_mse_before},
                            {"expl_mse_after", r.expl_mse_after},
                            {"input_mse", r.input_mse}});
        }
        write_text(ctx.out / ("indirect_" + stem + ".json"), dump_json(rows));
        json entry{{"input", i}, {"target", target}};
        for (const auto& [name, res] : runs) {
            entry[name] = {{"initial_expl_mse", res->trace.expl_mse.front()},
                           {"final_expl_mse", res->trace.expl_mse.back()},
                           {"final_output_drift", res->trace.output_drift.back()},
                           {"aborted", res->aborted}};
        }
        summary.push_back(entry);
        *ctx.log << "input " << i;
        for (const auto& [name, res] : runs) {
            *ctx.log << (name == "saliency" ? ": " : ", ") << name << " MSE " << res->trace.expl_mse.front() << " -> "
                     << res->trace.expl_mse.back();
        }
        *ctx.log << '\n';
    }
    write_text(ctx.out / "attack.json", dump_json(summary));
}

/// Mean over inputs of each trend column, keyed by step position.
struct FigureColumn {
    std::vector<double> steps, model, expl;
};

FigureColumn read_trend(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    std::map<std::size_t, std::vector<double>> sums;  // position -> step, model sum, expl sum, count
    std::map<std::size_t, std::size_t> pos_of_input;
    std::size_t last_input = SIZE_MAX, pos = 0;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string a, b, c, e;
        std::getline(row, a, ',');
        std::getline(row, b, ',');
        std::getline(row, c, ',');
        std::getline(row, e, ',');
        const std::size_t input = std::stoul(a);
        pos = input == last_input ? pos + 1 : 0;
        last_input = input;
        auto& s = sums[pos];
        if (s.empty()) s = {std::stod(b), 0.0, 0.0, 0.0};
        s[1] += std::stod(c);
        s[2] += std::stod(e);
        s[3] += 1.0;
    }
    FigureColumn col;
    for (const auto& [p, s] : sums) {
        col.steps.push_back(s[0]);
        col.model.push_back(s[1] / s[3]);
        col.expl.push_back(s[2] / s[3]);
    }
    return col;
}

void cmd_report(Context& ctx) {
    std::vector<fs::path> dirs;
    for (const auto& s : ctx.cfg.strs("report", "dirs")) dirs.push_back(ctx.cfg.resolve_path(s));
    json table = json::array();
    std::ostringstream csv;
    csv << "dataset,test,method,mean_pcc,strength,undefined_count,status\n";
    // (dataset, test) -> method -> trend file
    std::map<std::pair<std::string, std::string>, std::map<std::string, fs::path>> figures;
    std::vector<json> rows;
    for (const auto& dir : dirs) {
        if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "report directory '" + dir.string() + "' does not exist");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const auto name = e.path().filename().string();
            if (name.rfind("report_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const FaithReport r = report_from_json(json::parse(read_text(f)));
            const std::string dataset = r.config.value("dataset", dir.filename().string());
            rows.push_back({{"dataset", dataset},
                            {"test", r.test},
                            {"method", r.method},
                            {"mean_pcc", r.mean_pcc ? json(*r.mean_pcc) : json(nullptr)},
                            {"strength", r.strength()},
                            {"undefined_count", r.undefined_count},
                            {"status", r.status}});
            const fs::path trend = dir / ("trend_" + r.test + "_" + r.method + ".csv");
            if (fs::exists(trend)) figures[{dataset, r.test}][r.method] = trend;
        }
    }
    const auto& order = RunConfig::defaults().at("explain").at("methods");
    auto rank = [&](const std::string& m) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (order[i] == m) return i;
        }
        return m == "random" ? order.size() : order.size() + 1;
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const json& a, const json& b) {
        const auto ka = std::make_tuple(a["dataset"].get<std::string>(), a["test"].get<std::string>(),
                                        rank(a["method"].get<std::string>()), a["method"].get<std::string>());
        const auto kb = std::make_tuple(b["dataset"].get<std::string>(), b["test"].get<std::string>(),
                                        rank(b["method"].get<std::string>()), b["method"].get<std::string>());
        return ka < kb;
    });
    for (const auto& r : rows) {
        table.push_back(r);
        csv << r["dataset"].get<std::string>() << ',' << r["test"].get<std::string>() << ','
            << r["method"].get<std::string>() << ','
            << (r["mean_pcc"].is_null() ? std::string() : fmt_double(r["mean_pcc"].get<double>())) << ','
            << r["strength"].get<std::string>() << ',' << r["undefined_count"].get<std::size_t>() << ','
            << r["status"].get<std::string>() << '\n';
    }
    write_text(ctx.out / "summary.json", dump_json({{"rows", table}}));
    write_text(ctx.out / "summary.csv", csv.str());

    for (const auto& [key, by_method] : figures) {
        std::vector<std::pair<std::string, fs::path>> cols(by_method.begin(), by_method.end());
        std::stable_sort(cols.begin(), cols.end(), [&](const auto& a, const auto& b) { return rank(a.first) < rank(b.first); });
        std::vector<FigureColumn> data;
        for (const auto& [m, p] : cols) data.push_back(read_trend(p));
        std::ostringstream fig;
        fig << "step,model_signal";
        for (const auto& [m, p] : cols) fig << ',' << m;
        fig << '\n';
        for (std::size_t k = 0; k < data.front().steps.size(); ++k) {
            fig << fmt_double(data.front().steps[k]) << ',' << fmt_double(data.front().model[k]);
            for (const auto& c : data) fig << ',' << (k < c.expl.size() ? fmt_double(c.expl[k]) : std::string());
            fig << '\n';
        }
        write_text(ctx.out / ("figure_" + key.first + "_" + key.second + ".csv"), fig.str());
    }
    *ctx.log << "summarized " << table.size() << " reports from " << dirs.size() << " directories\n";
}

}  // namespace

void execute(const CommandOptions& opts, std::ostream& log) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), opts.command) == names.end()) {
        throw config_error("unknown command '" + opts.command + "'");
    }
    if (!fs::exists(opts.config)) throw config_error("config file '" + opts.config.string() + "' not found");
    json raw = parse_toml(read_text(opts.config));
    if (opts.seed) raw["seed"] = *opts.seed;
    Context ctx{RunConfig::resolve(raw, opts.config.parent_path()), {}, &log};
    ctx.out = opts.out ? *opts.out : ctx.cfg.path("", "out");
    prepare_out(ctx.out);
    write_text(ctx.out / "config.resolved.toml", ctx.cfg.echo());

    if (opts.command == "gen-data") return cmd_gen_data(ctx);
    if (opts.command == "train") return cmd_train(ctx);
    if (opts.command == "poison-train") return cmd_poison_train(ctx);
    if (opts.command == "explain") return cmd_explain(ctx);
    if (opts.command == "test") return cmd_test(ctx);
    if (opts.command == "attack") return cmd_attack(ctx);
    return cmd_report(ctx);
}

int run(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
    try {
        execute(opts, log);
        return 0;
    } catch (const Error& e) {
        err << "faithlab " << opts.command << ": " << e.what() << '\n';
        return e.exit_code();
    } catch (const json::exception& e) {
        err << "faithlab " << opts.command << ": malformed JSON: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::data);
    } catch (const std::exception& e) {
        err << "faithlab " << opts.command << ": " << e.what() << '\n';
        return 1;
    }
}

}  // namespace faithlab::cli
