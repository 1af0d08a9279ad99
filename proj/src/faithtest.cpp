#include "faithlab/faithtest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "faithlab/error.hpp"
#include "faithlab/format.hpp"
#include "faithlab/parallel.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/train.hpp"

namespace faithlab {

std::optional<double> pcc(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw data_error("pcc: sequences differ in length (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    }
    if (a.size() < 2) throw data_error("pcc: need at least two points");
    double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        ma += da / n;
        mb += db / n;
        saa += da * (a[i] - ma);
        sbb += db * (b[i] - mb);
        sab += da * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string strength_label(double r) {
    if (std::isnan(r)) throw data_error("strength_label: undefined correlation");
    if (r > 0.9) return "very large";
    if (r > 0.7) return "large";
    if (r > 0.5) return "moderate";
    if (r > 0.3) return "small";
    return "negligible";
}

std::string strength_label(const std::optional<double>& r) { return r ? strength_label(*r) : "undefined"; }

// ------------------------------------------------------ traditional tests

namespace {

void check_set(const ImportantFeatureSet& set, const Tensor& x) {
    const auto layout = spatial_layout(x.shape());
    for (std::size_t px : set.indices) {
        if (px >= layout.pixels()) throw data_error("feature index " + std::to_string(px) + " outside the input");
    }
}

/// dst with the pixels of `set` (all channels) taken from src, or from `value` when src is null.
Tensor overwrite(Tensor dst, const Tensor* src, double value, const ImportantFeatureSet& set) {
    const auto layout = spatial_layout(dst.shape());
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t px : set.indices) {
            const std::size_t i = ch * layout.pixels() + px;
            dst[i] = src ? (*src)[i] : value;
        }
    }
    return dst;
}

}  // namespace

double reduction_test(const Checkpoint& model, const Tensor& x, const ImportantFeatureSet& set, std::size_t target,
                      double removal_value) {
    check_set(set, x);
    if (set.indices.empty()) return 0.0;
    return target_probability(model, overwrite(x, nullptr, removal_value, set), target) -
           target_probability(model, x, target);
}

double synthesis_test(const Checkpoint& model, const Tensor& x, const ImportantFeatureSet& set, std::size_t target) {
    check_set(set, x);
    if (set.indices.empty()) return 0.0;
    const Tensor blank(x.shape());
    return target_probability(model, overwrite(blank, &x, 0.0, set), target) -
           target_probability(model, blank, target);
}

double augmentation_test(const Checkpoint& model, const Tensor& x, std::size_t x_label, const Tensor& donor,
                         std::size_t donor_label, const ImportantFeatureSet& set, std::size_t target) {
    if (x_label == donor_label) throw data_error("augmentation donor must have a different label");
    if (donor.shape() != x.shape()) throw data_error("augmentation donor shape differs from the input");
    check_set(set, x);
    if (set.indices.empty()) return 0.0;
    return target_probability(model, overwrite(donor, &x, 0.0, set), target) -
           target_probability(model, donor, target);
}

std::size_t pick_donor(const Dataset& pool, std::size_t label, std::uint64_t seed) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool.labels[i] != label) candidates.push_back(i);
    }
    if (candidates.empty()) throw data_error("no augmentation donor with a label other than " + std::to_string(label));
    auto rng = make_rng(seed, "donor");
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
}

double trigger_coverage(const ImportantFeatureSet& set, const TriggerSpec& trig) {
    if (trig.coords.empty()) throw data_error("trigger footprint is empty");
    const auto footprint = trig.pixel_indices(set.width);
    std::size_t hit = 0;
    for (std::size_t px : footprint) hit += set.contains(px) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(footprint.size());
}

// ---------------------------------------------------------- trend tests

SetProvider method_provider(Method method, const ExplainerConfig& cfg, double fraction) {
    (void)top_k_count(1, fraction);
    if (method == Method::random) {
        return [cfg, fraction](const Checkpoint&, const Tensor& x, std::size_t, std::size_t input_id,
                               std::size_t step) {
            return random_explainer(x, fraction, derive_seed(derive_seed(cfg.seed, input_id), step));
        };
    }
    cfg.validate();
    return [method, cfg, fraction](const Checkpoint& model, const Tensor& x, std::size_t target,
                                   std::size_t input_id, std::size_t) {
        ExplainerConfig local = cfg;
        local.seed = derive_seed(cfg.seed, input_id);
        return top_k(explain(model, x, target, method, local), fraction);
    };
}

void aggregate(FaithReport& report) {
    report.per_input.clear();
    report.undefined_count = 0;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : report.series) {
        report.per_input.push_back(s.pcc);
        if (s.pcc) {
            sum += *s.pcc;
            ++n;
        } else {
            ++report.undefined_count;
        }
    }
    report.mean_pcc = n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
}

std::optional<FaithReport> gate_check(const std::string& test, const std::string& method, double backdoor_acc) {
    if (backdoor_acc >= backdoor_gate) return std::nullopt;
    FaithReport r;
    r.test = test;
    r.method = method;
    r.status = "gate_failed";
    r.config = {{"backdoor_accuracy", backdoor_acc}, {"gate", backdoor_gate}};
    return r;
}

namespace {

/// Runs `cell(input, step)` for every (input, step) pair in parallel.
template <class Cell>
std::vector<std::vector<std::pair<double, double>>> grid(std::size_t inputs, std::size_t steps, Cell&& cell) {
    std::vector<std::vector<std::pair<double, double>>> out(inputs, std::vector<std::pair<double, double>>(steps));
    parallel_for(inputs * steps, [&](std::size_t k) { out[k / steps][k % steps] = cell(k / steps, k % steps); });
    return out;
}

void fill_series(FaithReport& report, const std::vector<std::vector<std::pair<double, double>>>& cells,
                 const std::vector<double>& steps) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        TrendSeries s;
        s.input_id = i;
        s.steps = steps;
        for (const auto& [m, e] : cells[i]) {
            s.model_signal.push_back(m);
            s.explainer_signal.push_back(e);
        }
        s.pcc = pcc(s.model_signal, s.explainer_signal);
        report.series.push_back(std::move(s));
    }
    aggregate(report);
}

}  // namespace

FaithReport embt(const std::vector<Checkpoint>& checkpoints, const TriggerSpec& trig, const std::vector<Tensor>& inputs,
                 const SetProvider& provider, const std::string& method) {
    if (checkpoints.size() < 2) throw data_error("embt needs at least two checkpoints");
    if (inputs.empty()) throw data_error("embt needs at least one input");
    std::vector<Tensor> stamped;
    for (const auto& x : inputs) stamped.push_back(apply_trigger(x, trig));
    const auto cells = grid(inputs.size(), checkpoints.size(), [&](std::size_t i, std::size_t c) {
        const auto& model = checkpoints[c];
        const double p = target_probability(model, stamped[i], trig.target_label);
        const double s = trigger_coverage(provider(model, stamped[i], trig.target_label, i, c), trig);
        return std::make_pair(p, s);
    });
    std::vector<double> steps;
    for (const auto& c : checkpoints) steps.push_back(static_cast<double>(c.step));
    FaithReport report;
    report.test = "embt";
    report.method = method;
    fill_series(report, cells, steps);
    return report;
}

FaithReport ptt(const Checkpoint& model, const TriggerSpec& trig, const std::vector<double>& fractions,
                const std::vector<Tensor>& inputs, const SetProvider& provider, const std::string& method) {
    if (fractions.size() < 2) throw data_error("ptt needs at least two trigger fractions");
    if (inputs.empty()) throw data_error("ptt needs at least one input");
    const auto cells = grid(inputs.size(), fractions.size(), [&](std::size_t i, std::size_t f) {
        const Tensor x = partial_trigger(inputs[i], trig, fractions[f]);
        const double p = target_probability(model, x, trig.target_label);
        const double s = trigger_coverage(provider(model, x, trig.target_label, i, f), trig);
        return std::make_pair(p, s);
    });
    FaithReport report;
    report.test = "ptt";
    report.method = method;
    fill_series(report, cells, fractions);

    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : report.series) {
        if (const auto r = pcc(fractions, s.model_signal)) {
            sum += *r;
            ++n;
        }
    }
    if (n) report.model_side_pcc = sum / static_cast<double>(n);
    return report;
}

double feature_change(const ImportantFeatureSet& prev, const ImportantFeatureSet& cur) {
    if (prev.k != cur.k || cur.k == 0) throw data_error("feature sets must have the same positive size");
    std::size_t common = 0;
    for (std::size_t px : cur.indices) common += prev.contains(px) ? 1 : 0;
    return 1.0 - static_cast<double>(common) / static_cast<double>(cur.k);
}

FaithReport emt(const std::vector<Checkpoint>& checkpoints, const std::vector<double>& losses,
                const std::vector<Tensor>& inputs, const std::vector<std::size_t>& labels,
                const SetProvider& provider, const std::string& method) {
    if (checkpoints.size() < 3) throw data_error("emt needs at least three checkpoints");
    if (losses.size() != checkpoints.size()) throw data_error("emt: one loss per checkpoint required");
    if (inputs.empty() || labels.size() != inputs.size()) throw data_error("emt needs labelled inputs");

    std::vector<std::vector<ImportantFeatureSet>> sets(inputs.size(), std::vector<ImportantFeatureSet>(checkpoints.size()));
    parallel_for(inputs.size() * checkpoints.size(), [&](std::size_t k) {
        const std::size_t i = k / checkpoints.size();
        const std::size_t c = k % checkpoints.size();
        sets[i][c] = provider(checkpoints[c], inputs[i], labels[i], i, c);
    });

    std::vector<std::vector<std::pair<double, double>>> cells(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 1; c < checkpoints.size(); ++c) {
            cells[i].emplace_back(std::abs(losses[c] - losses[c - 1]), feature_change(sets[i][c - 1], sets[i][c]));
        }
    }
    std::vector<double> steps;
    for (std::size_t c = 1; c < checkpoints.size(); ++c) steps.push_back(static_cast<double>(checkpoints[c].step));
    FaithReport report;
    report.test = "emt";
    report.method = method;
    fill_series(report, cells, steps);
    return report;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

json to_json(const FaithReport& report) {
    json per = json::array();
    for (const auto& v : report.per_input) per.push_back(optional_json(v));
    json j{{"test", report.test},
           {"method", report.method},
           {"status", report.status},
           {"mean_pcc", optional_json(report.mean_pcc)},
           {"per_input", per},
           {"undefined_count", report.undefined_count},
           {"strength", report.strength()},
           {"config", report.config},
           {"seed", report.seed}};
    if (report.model_side_pcc) j["model_side_pcc"] = *report.model_side_pcc;
    return j;
}

FaithReport report_from_json(const json& j) {
    FaithReport r;
    r.test = j.at("test").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.status = j.value("status", std::string("ok"));
    r.mean_pcc = optional_from(j.at("mean_pcc"));
    for (const auto& v : j.at("per_input")) r.per_input.push_back(optional_from(v));
    r.undefined_count = j.at("undefined_count").get<std::size_t>();
    if (j.contains("model_side_pcc")) r.model_side_pcc = j["model_side_pcc"].get<double>();
    r.config = j.value("config", json::object());
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

std::string trend_csv(const FaithReport& report) {
    std::ostringstream out;
    out << "input_id,step,model_signal,explainer_signal\n";
    for (const auto& s : report.series) {
        for (std::size_t k = 0; k < s.steps.size(); ++k) {
            out << s.input_id << ',' << fmt_double(s.steps[k]) << ',' << fmt_double(s.model_signal[k]) << ','
                << fmt_double(s.explainer_signal[k]) << '\n';
        }
    }
    return out.str();
}

// ------------------------------------------------------------------ SSIM

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw data_error("ssim: shapes differ (" + shape_string(a.shape()) + " vs " + shape_string(b.shape()) + ")");
    }
    const auto layout = spatial_layout(a.shape());
    const auto [amin, amax] = std::minmax_element(a.values().begin(), a.values().end());
    const auto [bmin, bmax] = std::minmax_element(b.values().begin(), b.values().end());
    double range = std::max(*amax, *bmax) - std::min(*amin, *bmin);
    if (!(range > 0.0)) range = 1.0;
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    const std::size_t wh = std::min<std::size_t>(8, layout.height);
    const std::size_t ww = std::min<std::size_t>(8, layout.width);
    const double n = static_cast<double>(wh * ww);

    double total = 0.0;
    std::size_t windows = 0;
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        const std::size_t base = ch * layout.pixels();
        for (std::size_t r0 = 0; r0 + wh <= layout.height; ++r0) {
            for (std::size_t c0 = 0; c0 + ww <= layout.width; ++c0) {
                double sa = 0.0, sb = 0.0;
                for (std::size_t r = r0; r < r0 + wh; ++r) {
                    for (std::size_t c = c0; c < c0 + ww; ++c) {
                        sa += a[base + r * layout.width + c];
                        sb += b[base + r * layout.width + c];
                    }
                }
                const double ma = sa / n, mb = sb / n;
                double vaa = 0.0, vbb = 0.0, vab = 0.0;
                for (std::size_t r = r0; r < r0 + wh; ++r) {
                    for (std::size_t c = c0; c < c0 + ww; ++c) {
                        const double da = a[base + r * layout.width + c] - ma;
                        const double db = b[base + r * layout.width + c] - mb;
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                vaa /= n;
                vbb /= n;
                vab /= n;
                total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
                ++windows;
            }
        }
    }
    return total / static_cast<double>(windows);
}

Tensor set_mask(const ImportantFeatureSet& set) {
    Tensor m({1, set.height, set.width});
    for (std::size_t px : set.indices) m[px] = 1.0;
    return m;
}

DebugReport debug_experiment(const Checkpoint& model, const SpuriousData& data, const std::vector<Method>& methods,
                             const ExplainerConfig& cfg, double fraction, std::size_t max_inputs,
                             std::size_t random_draws) {
    if (data.masks.empty()) throw data_error("debug experiment needs ground-truth masks");
    if (random_draws == 0) throw config_error("random_draws must be positive");
    DebugReport report;
    for (const auto& [name, probe] : data.probes) report.probe_accuracy.emplace_back(name, accuracy(model, probe));

    const std::size_t n = std::min(max_inputs, data.train.size());
    if (n == 0) throw data_error("debug experiment needs at least one input");
    auto mask_of = [&](std::size_t i) -> const Tensor& {
        const auto label = data.train.labels[i];
        if (label >= data.masks.size()) throw data_error("no mask for label " + std::to_string(label));
        return data.masks[label];
    };

    for (Method m : methods) {
        if (m == Method::random) continue;
        const auto provider = method_provider(m, cfg, fraction);
        std::vector<double> scores(n);
        parallel_for(n, [&](std::size_t i) {
            const auto set = provider(model, data.train.inputs[i], data.train.labels[i], i, 0);
            scores[i] = ssim(set_mask(set), mask_of(i).reshaped({1, set.height, set.width}));
        });
        double sum = 0.0;
        for (double s : scores) sum += s;
        report.rows.push_back({method_name(m), sum / static_cast<double>(n)});
    }

    std::vector<double> rnd(n * random_draws);
    parallel_for(rnd.size(), [&](std::size_t k) {
        const std::size_t i = k / random_draws;
        const auto set = random_explainer(data.train.inputs[i], fraction, derive_seed(derive_seed(cfg.seed, i), k));
        rnd[k] = ssim(set_mask(set), mask_of(i).reshaped({1, set.height, set.width}));
    });
    double sum = 0.0;
    for (double s : rnd) sum += s;
    report.random_expected_ssim = sum / static_cast<double>(rnd.size());
    report.rows.push_back({"random", report.random_expected_ssim});
    std::stable_sort(report.rows.begin(), report.rows.end(),
                     [](const DebugRow& a, const DebugRow& b) { return a.mean_ssim > b.mean_ssim; });
    return report;
}

json to_json(const DebugReport& report) {
    json acc = json::object();
    for (const auto& [name, a] : report.probe_accuracy) acc[name] = a;
    json rows = json::array();
    for (const auto& r : report.rows) rows.push_back({{"method", r.method}, {"mean_ssim", r.mean_ssim}});
    return {{"probe_accuracy", acc}, {"ranking", rows}, {"random_expected_ssim", report.random_expected_ssim}};
}

}  // namespace faithlab
