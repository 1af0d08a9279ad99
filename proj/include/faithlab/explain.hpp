#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "faithlab/io.hpp"
#include "faithlab/nn.hpp"

namespace faithlab {

enum class Method {
    saliency,
    integrated_gradients,
    smoothgrad,
    smoothgrad_sq,
    vargrad,
    sg_sq_ig,
    deeplift,
    occlusion,
    lime,
    kernel_shap,
    random,  ///< baseline; produces feature sets, not maps
};

std::string method_name(Method m);
Method method_from_string(const std::string& name);
/// The ten attribution methods (excludes the random baseline).
const std::vector<Method>& attribution_methods();

/// Per-feature importance scores with the same shape as the explained input.
struct ExplanationMap {
    Tensor scores;
    std::string method;
    std::size_t target = 0;
    Wrt wrt = Wrt::probability;
    std::string note;  ///< solver diagnostics (e.g. regularization fallback)
};

json to_json(const ExplanationMap& map);
ExplanationMap explanation_from_json(const json& j);

/// Top-k pixel indices (flattened row * width + col), sorted ascending.
struct ImportantFeatureSet {
    std::vector<std::size_t> indices;
    std::size_t k = 0;
    double fraction = 0.0;
    std::size_t height = 0;
    std::size_t width = 0;

    bool contains(std::size_t pixel) const;
};

/// k = max(1, floor(fraction * pixels)); throws for fraction outside (0, 1].
std::size_t top_k_count(std::size_t pixels, double fraction);

struct ExplainerConfig {
    std::size_t ig_steps = 64;
    double ig_baseline = 0.0;
    double sg_sigma = 0.1;
    std::size_t sg_samples = 25;
    std::size_t occlusion_window = 3;
    std::size_t occlusion_stride = 1;
    double occlusion_baseline = 0.0;
    std::size_t lime_segments = 70;
    std::size_t lime_samples = 500;
    double lime_kernel_width = 0.25;
    double lime_ridge_lambda = 0.01;
    double lime_baseline = 0.0;
    std::size_t shap_samples = 2000;
    std::size_t shap_segments = 64;
    double shap_baseline = 0.0;
    bool shap_exact = false;
    Wrt wrt = Wrt::probability;
    std::uint64_t seed = 0;

    void validate() const;
};

ExplanationMap saliency(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt = Wrt::probability);

/// Midpoint Riemann sum of the gradient along baseline -> x, times (x - baseline).
ExplanationMap integrated_gradients(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                    std::size_t steps, std::size_t target, Wrt wrt = Wrt::probability);

ExplanationMap smoothgrad(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n, std::size_t target,
                          std::uint64_t seed, Wrt wrt = Wrt::probability);
ExplanationMap smoothgrad_sq(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n,
                             std::size_t target, std::uint64_t seed, Wrt wrt = Wrt::probability);
/// Population variance (divisor n) of the noisy gradients.
ExplanationMap vargrad(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n, std::size_t target,
                       std::uint64_t seed, Wrt wrt = Wrt::probability);
/// Mean of squared IG maps over n noisy copies of x (baseline held fixed).
ExplanationMap sg_sq_ig(const Checkpoint& model, const Tensor& x, const Tensor& baseline, std::size_t steps,
                        double sigma, std::size_t n, std::size_t target, std::uint64_t seed,
                        Wrt wrt = Wrt::probability);

ExplanationMap deeplift_rescale(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                std::size_t target, Wrt wrt = Wrt::probability);

ExplanationMap occlusion(const Checkpoint& model, const Tensor& x, std::size_t window, std::size_t stride,
                         double baseline_value, std::size_t target, Wrt wrt = Wrt::probability);

/// Grid segmentation of the spatial plane into roughly `segments` cells.
/// Returns one segment id per pixel; ids are dense in [0, count).
struct Segmentation {
    std::vector<std::size_t> pixel_segment;
    std::size_t count = 0;
};
Segmentation grid_segments(const SpatialLayout& layout, std::size_t segments);

ExplanationMap lime(const Checkpoint& model, const Tensor& x, const ExplainerConfig& cfg, std::size_t target,
                    std::uint64_t seed);

/// Kernel SHAP over pixel groups. `exact` enumerates all 2^M coalitions (M <= 20).
ExplanationMap kernel_shap(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                           const Segmentation& groups, std::size_t n_samples, std::size_t target,
                           std::uint64_t seed, bool exact, Wrt wrt = Wrt::probability);

/// Per-group Shapley values from the same solver (exposed for oracle tests).
std::vector<double> kernel_shap_values(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                       const Segmentation& groups, std::size_t n_samples, std::size_t target,
                                       std::uint64_t seed, bool exact, Wrt wrt, std::string* note = nullptr);

ImportantFeatureSet random_explainer(const Tensor& x, double fraction, std::uint64_t seed);

/// Pixel importance is the channel sum of |score| (or of the signed score);
/// ties go to the lower flat index.
ImportantFeatureSet top_k(const ExplanationMap& map, double fraction, bool signed_scores = false);

/// Runs one of the ten attribution methods with the given configuration.
ExplanationMap explain(const Checkpoint& model, const Tensor& x, std::size_t target, Method method,
                       const ExplainerConfig& cfg);

}  // namespace faithlab
