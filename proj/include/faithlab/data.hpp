#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "faithlab/io.hpp"
#include "faithlab/tensor.hpp"

namespace faithlab {

enum class Provenance { synthetic, tabular, idx, poisoned, spurious };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& name);

struct Dataset {
    Shape input_shape;
    std::size_t num_classes = 0;
    Provenance provenance = Provenance::synthetic;
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    /// Indices (into inputs) of appended poisoned copies.
    std::vector<std::size_t> poisoned;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }
    void add(Tensor x, std::size_t label);
    /// Throws if any sample has the wrong shape or an out-of-range label.
    void check() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// A backdoor trigger: pixel footprint, per-pixel pattern value (applied to
/// every channel) and the label the backdoor steers to.
struct TriggerSpec {
    std::string name;
    std::size_t target_label = 0;
    std::vector<std::pair<std::size_t, std::size_t>> coords;  ///< (row, col)
    std::vector<double> pattern;                               ///< one value per coord

    /// Footprint non-empty, unique, in bounds and at most 10% of the pixels.
    void validate(const SpatialLayout& layout) const;
    /// Flat pixel indices (row * width + col) in row-major order.
    std::vector<std::size_t> pixel_indices(std::size_t width) const;

    friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

inline constexpr double max_trigger_fraction = 0.10;

TriggerSpec square_trigger(std::size_t top, std::size_t left, std::size_t size, std::size_t target_label,
                           double value = 1.0);
/// Alternating 1/0 pattern over a square, starting with 1 at (top, left).
TriggerSpec checkerboard_trigger(std::size_t top, std::size_t left, std::size_t size, std::size_t target_label);

json to_json(const TriggerSpec& trig);
TriggerSpec trigger_from_json(const json& j);

Dataset gen_synth_images(std::size_t num_classes, std::size_t per_class, std::size_t height, std::size_t width,
                         std::size_t channels, std::uint64_t seed);

Dataset gen_tabular_binary(std::size_t num_features, std::size_t per_class, std::uint64_t seed);

/// Picks `count` features whose joint all-ones combination never occurs in
/// `clean`, preferring the rarest features.
TriggerSpec tabular_trigger(const Dataset& clean, std::size_t count, std::size_t target_label);

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
/// 8-bit IDX writer (values are rounded from [0,1] to 0..255).
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

Tensor apply_trigger(const Tensor& x, const TriggerSpec& trig);
/// Stamps the first ceil(fraction * |footprint|) trigger pixels in row-major order.
Tensor partial_trigger(const Tensor& x, const TriggerSpec& trig, double fraction);
std::size_t partial_count(std::size_t footprint, double fraction);

/// Appends round(ratio * N) triggered, relabelled copies of seeded picks.
Dataset poison_dataset(const Dataset& clean, const TriggerSpec& trig, double ratio, std::uint64_t seed);

/// Triggered copies of the samples whose label differs from the target.
Dataset triggered_copies(const Dataset& clean, const TriggerSpec& trig);

struct SpuriousData {
    Dataset train;                          ///< (objA, bgA) -> 0, (objB, bgB) -> 1
    std::map<std::string, Dataset> probes;  ///< the other six combinations
    std::vector<Tensor> masks;              ///< per class: 1 on the background region
    std::size_t object_top = 0, object_left = 0, object_size = 0;
};

SpuriousData gen_spurious_dataset(std::uint64_t seed, std::size_t per_combo = 200, std::size_t size = 16);

inline constexpr std::string_view dataset_magic = "FTDSET01";
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace faithlab
