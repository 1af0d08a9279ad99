#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faithlab/data.hpp"
#include "faithlab/explain.hpp"
#include "faithlab/io.hpp"
#include "faithlab/nn.hpp"

namespace faithlab {

/// Pearson correlation; nullopt when either sequence has zero variance.
/// Throws a data error for unequal lengths or fewer than two points.
std::optional<double> pcc(std::span<const double> a, std::span<const double> b);

/// negligible / small / moderate / large / very large, by strict ">" on
/// 0.3, 0.5, 0.7 and 0.9.
std::string strength_label(double r);
std::string strength_label(const std::optional<double>& r);

// ------------------------------------------------------ traditional tests

/// F_target(x with the set removed) - F_target(x).
double reduction_test(const Checkpoint& model, const Tensor& x, const ImportantFeatureSet& set, std::size_t target,
                      double removal_value = 0.0);
/// F_target(zeros with the set copied from x) - F_target(zeros).
double synthesis_test(const Checkpoint& model, const Tensor& x, const ImportantFeatureSet& set, std::size_t target);
/// F_target(donor with the set copied from x) - F_target(donor). Labels must differ.
double augmentation_test(const Checkpoint& model, const Tensor& x, std::size_t x_label, const Tensor& donor,
                         std::size_t donor_label, const ImportantFeatureSet& set, std::size_t target);
/// Seeded pick of a sample whose label differs from `label`.
std::size_t pick_donor(const Dataset& pool, std::size_t label, std::uint64_t seed);

/// |set ∩ footprint| / |footprint|.
double trigger_coverage(const ImportantFeatureSet& set, const TriggerSpec& trig);

// ---------------------------------------------------------- trend tests

/// Supplies the important-feature set for (model, input); `input_id` and
/// `step` identify the cell so seeded explainers can derive their streams.
using SetProvider = std::function<ImportantFeatureSet(const Checkpoint& model, const Tensor& x, std::size_t target,
                                                      std::size_t input_id, std::size_t step)>;

/// Top-k of `method` (or the random baseline) at `fraction`.
/// Seeded explainers reuse one stream per input across steps; the random
/// baseline draws a fresh set for every (input, step).
SetProvider method_provider(Method method, const ExplainerConfig& cfg, double fraction);

struct TrendSeries {
    std::size_t input_id = 0;
    std::vector<double> steps;
    std::vector<double> model_signal;
    std::vector<double> explainer_signal;
    std::optional<double> pcc;
};

struct FaithReport {
    std::string test;
    std::string method;
    std::string status = "ok";  ///< "ok" or "gate_failed"
    std::vector<std::optional<double>> per_input;
    std::optional<double> mean_pcc;
    std::size_t undefined_count = 0;
    /// PTT only: mean PCC(fractions, P_target) over inputs.
    std::optional<double> model_side_pcc;
    json config = json::object();
    std::uint64_t seed = 0;
    std::vector<TrendSeries> series;

    std::string strength() const { return strength_label(mean_pcc); }
};

/// Fills per_input, mean_pcc and undefined_count from the series.
void aggregate(FaithReport& report);

inline constexpr double backdoor_gate = 0.95;
/// Report stub with status "gate_failed" when backdoor accuracy is below the gate.
std::optional<FaithReport> gate_check(const std::string& test, const std::string& method, double backdoor_acc);

/// Per checkpoint: P_target on x + trigger against trigger coverage.
FaithReport embt(const std::vector<Checkpoint>& checkpoints, const TriggerSpec& trig, const std::vector<Tensor>& inputs,
                 const SetProvider& provider, const std::string& method);

/// Per stamped fraction: P_target against coverage of the full footprint.
FaithReport ptt(const Checkpoint& model, const TriggerSpec& trig, const std::vector<double>& fractions,
                const std::vector<Tensor>& inputs, const SetProvider& provider, const std::string& method);

/// ΔF_i = 1 - |F_i ∩ F_{i-1}| / k for consecutive checkpoint sets.
double feature_change(const ImportantFeatureSet& prev, const ImportantFeatureSet& cur);

/// PCC between |l_i - l_{i-1}| and ΔF_i over consecutive checkpoints.
FaithReport emt(const std::vector<Checkpoint>& checkpoints, const std::vector<double>& losses,
                const std::vector<Tensor>& inputs, const std::vector<std::size_t>& labels,
                const SetProvider& provider, const std::string& method);

json to_json(const FaithReport& report);
FaithReport report_from_json(const json& j);
/// input_id,step,model_signal,explainer_signal
std::string trend_csv(const FaithReport& report);

// ------------------------------------------------------------------ SSIM

/// Single-scale SSIM with an 8x8 uniform window (clamped to the image),
/// averaged over window positions and channels. Constants use the joint
/// dynamic range of a and b (1 when both are constant).
double ssim(const Tensor& a, const Tensor& b);

/// Binary {1,H,W} map of the set.
Tensor set_mask(const ImportantFeatureSet& set);

struct DebugRow {
    std::string method;
    double mean_ssim = 0.0;
};

struct DebugReport {
    std::vector<std::pair<std::string, double>> probe_accuracy;
    std::vector<DebugRow> rows;  ///< sorted by mean_ssim, descending; includes "random"
    double random_expected_ssim = 0.0;
};

/// Mean SSIM between top-k maps of `inputs` and the background mask of their label.
DebugReport debug_experiment(const Checkpoint& model, const SpuriousData& data, const std::vector<Method>& methods,
                             const ExplainerConfig& cfg, double fraction, std::size_t max_inputs,
                             std::size_t random_draws);

json to_json(const DebugReport& report);

}  // namespace faithlab
