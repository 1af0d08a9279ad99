#include "faithlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "faithlab/error.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

namespace fs = std::filesystem;

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::tabular: return "tabular";
    case Provenance::idx: return "idx";
    case Provenance::poisoned: return "poisoned";
    case Provenance::spurious: return "spurious";
    }
    return "unknown";
}

Provenance provenance_from_string(const std::string& name) {
    for (auto p : {Provenance::synthetic, Provenance::tabular, Provenance::idx, Provenance::poisoned,
                   Provenance::spurious}) {
        if (to_string(p) == name) return p;
    }
    throw data_error("unknown dataset provenance '" + name + "'");
}

void Dataset::add(Tensor x, std::size_t label) {
    inputs.push_back(std::move(x));
    labels.push_back(label);
}

void Dataset::check() const {
    if (inputs.size() != labels.size()) throw data_error("dataset has mismatched inputs and labels");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].shape() != input_shape) {
            throw data_error("sample " + std::to_string(i) + " has shape " + shape_string(inputs[i].shape()) +
                             ", dataset declares " + shape_string(input_shape));
        }
        if (labels[i] >= num_classes) {
            throw data_error("sample " + std::to_string(i) + " label " + std::to_string(labels[i]) +
                             " >= num_classes " + std::to_string(num_classes));
        }
    }
}

// ---------------------------------------------------------------- triggers

void TriggerSpec::validate(const SpatialLayout& layout) const {
    if (coords.empty()) throw data_error("trigger '" + name + "' has an empty footprint");
    if (pattern.size() != coords.size()) throw data_error("trigger '" + name + "' pattern/footprint size mismatch");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [r, c] : coords) {
        if (r >= layout.height || c >= layout.width) {
            throw data_error("trigger '" + name + "' pixel (" + std::to_string(r) + "," + std::to_string(c) +
                             ") outside " + std::to_string(layout.height) + "x" + std::to_string(layout.width));
        }
        if (!seen.insert({r, c}).second) throw data_error("trigger '" + name + "' repeats a pixel");
    }
    if (static_cast<double>(coords.size()) > max_trigger_fraction * static_cast<double>(layout.pixels())) {
        throw data_error("trigger '" + name + "' covers more than 10% of the input pixels");
    }
}

std::vector<std::size_t> TriggerSpec::pixel_indices(std::size_t width) const {
    std::vector<std::size_t> out;
    out.reserve(coords.size());
    for (const auto& [r, c] : coords) out.push_back(r * width + c);
    std::sort(out.begin(), out.end());
    return out;
}

TriggerSpec square_trigger(std::size_t top, std::size_t left, std::size_t size, std::size_t target_label,
                           double value) {
    TriggerSpec t;
    t.name = "square" + std::to_string(size);
    t.target_label = target_label;
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            t.coords.emplace_back(top + r, left + c);
            t.pattern.push_back(value);
        }
    }
    return t;
}

TriggerSpec checkerboard_trigger(std::size_t top, std::size_t left, std::size_t size, std::size_t target_label) {
    TriggerSpec t;
    t.name = "checker" + std::to_string(size);
    t.target_label = target_label;
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            t.coords.emplace_back(top + r, left + c);
            t.pattern.push_back((r + c) % 2 == 0 ? 1.0 : 0.0);
        }
    }
    return t;
}

json to_json(const TriggerSpec& trig) {
    json coords = json::array();
    for (const auto& [r, c] : trig.coords) coords.push_back({r, c});
    return {{"name", trig.name}, {"target_label", trig.target_label}, {"pattern", trig.pattern}, {"coords", coords}};
}

TriggerSpec trigger_from_json(const json& j) {
    TriggerSpec t;
    try {
        t.name = j.at("name").get<std::string>();
        t.target_label = j.at("target_label").get<std::size_t>();
        t.pattern = j.at("pattern").get<std::vector<double>>();
        for (const auto& rc : j.at("coords")) {
            if (!rc.is_array() || rc.size() != 2) throw data_error("trigger coords must be [row, col] pairs");
            t.coords.emplace_back(rc[0].get<std::size_t>(), rc[1].get<std::size_t>());
        }
    } catch (const json::exception& e) {
        throw data_error(std::string("malformed trigger JSON: ") + e.what());
    }
    return t;
}

Tensor apply_trigger(const Tensor& x, const TriggerSpec& trig) {
    return partial_trigger(x, trig, 1.0);
}

std::size_t partial_count(std::size_t footprint, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw data_error("trigger fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    // Tolerate products like 0.7 * 10 = 7.000000000000001.
    const double want = std::ceil(fraction * static_cast<double>(footprint) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, footprint);
}

Tensor partial_trigger(const Tensor& x, const TriggerSpec& trig, double fraction) {
    const auto layout = spatial_layout(x.shape());
    trig.validate(layout);
    const std::size_t n = partial_count(trig.coords.size(), fraction);

    std::vector<std::size_t> order(trig.coords.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return trig.coords[a] < trig.coords[b]; });

    Tensor out = x;
    for (std::size_t k = 0; k < n; ++k) {
        const auto [r, c] = trig.coords[order[k]];
        for (std::size_t ch = 0; ch < layout.channels; ++ch) {
            out[(ch * layout.height + r) * layout.width + c] = trig.pattern[order[k]];
        }
    }
    return out;
}

Dataset poison_dataset(const Dataset& clean, const TriggerSpec& trig, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0) || !(ratio < 1.0)) {
        throw data_error("poison ratio must lie in (0, 1), got " + std::to_string(ratio));
    }
    if (clean.empty()) throw data_error("cannot poison an empty dataset");
    if (trig.target_label >= clean.num_classes) throw data_error("trigger target label out of range");
    trig.validate(spatial_layout(clean.input_shape));

    const std::size_t count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(clean.size())));
    std::vector<std::size_t> all(clean.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> picks;
    auto rng = make_rng(seed, "poison");
    std::sample(all.begin(), all.end(), std::back_inserter(picks), count, rng);

    Dataset out = clean;
    out.provenance = Provenance::poisoned;
    for (std::size_t i : picks) {
        out.poisoned.push_back(out.size());
        out.add(apply_trigger(clean.inputs[i], trig), trig.target_label);
    }
    return out;
}

Dataset triggered_copies(const Dataset& clean, const TriggerSpec& trig) {
    Dataset out;
    out.input_shape = clean.input_shape;
    out.num_classes = clean.num_classes;
    out.provenance = Provenance::poisoned;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean.labels[i] == trig.target_label) continue;
        out.add(apply_trigger(clean.inputs[i], trig), trig.target_label);
    }
    return out;
}

// -------------------------------------------------------------- generators

Dataset gen_synth_images(std::size_t num_classes, std::size_t per_class, std::size_t height, std::size_t width,
                         std::size_t channels, std::uint64_t seed) {
    if (num_classes == 0 || height == 0 || width == 0 || channels == 0) {
        throw data_error("synthetic image sizes must be positive");
    }
    Dataset d;
    d.input_shape = {channels, height, width};
    d.num_classes = num_classes;
    d.provenance = Provenance::synthetic;

    auto rng = make_rng(seed, "data.synth");
    std::normal_distribution<double> noise(0.0, 0.1);
    std::uniform_real_distribution<double> phase_jitter(-0.5, 0.5);
    const double span = static_cast<double>(std::max(height, width));
    const double pi = std::numbers::pi;

    // Class k: spatial frequency 1 + k, orientation k*pi/K, mean brightness
    // spread over [0.3, 0.6]. Samples interleave classes.
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t k = 0; k < num_classes; ++k) {
            const double freq = 1.0 + static_cast<double>(k);
            const double theta = pi * static_cast<double>(k) / static_cast<double>(num_classes);
            const double offset =
                num_classes > 1 ? 0.3 + 0.3 * static_cast<double>(k) / static_cast<double>(num_classes - 1) : 0.45;
            const double phase = phase_jitter(rng);
            Tensor x(d.input_shape);
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t r = 0; r < height; ++r) {
                    for (std::size_t col = 0; col < width; ++col) {
                        const double u = (static_cast<double>(r) * std::cos(theta) +
                                          static_cast<double>(col) * std::sin(theta)) / span;
                        const double v = offset + 0.2 * std::sin(2.0 * pi * freq * u + phase) + noise(rng);
                        x[(c * height + r) * width + col] = std::clamp(v, 0.0, 1.0);
                    }
                }
            }
            d.add(std::move(x), k);
        }
    }
    return d;
}

Dataset gen_tabular_binary(std::size_t num_features, std::size_t per_class, std::uint64_t seed) {
    if (num_features < 8) throw data_error("tabular data needs at least 8 features");
    Dataset d;
    d.input_shape = {num_features};
    d.num_classes = 2;
    d.provenance = Provenance::tabular;

    auto rng = make_rng(seed, "data.tabular");
    std::uniform_real_distribution<double> base(0.1, 0.5);
    // Half the features are informative (class 1 raises their frequency);
    // the last eighth are rare in both classes so trigger combinations exist.
    std::vector<double> p0(num_features), p1(num_features);
    const std::size_t rare_from = num_features - std::max<std::size_t>(num_features / 8, 4);
    for (std::size_t j = 0; j < num_features; ++j) {
        p0[j] = base(rng);
        p1[j] = j < num_features / 2 ? std::min(0.9, p0[j] + 0.35) : p0[j];
        if (j >= rare_from) p0[j] = p1[j] = 0.03;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t k = 0; k < 2; ++k) {
            const auto& p = k == 0 ? p0 : p1;
            Tensor x({num_features});
            for (std::size_t j = 0; j < num_features; ++j) x[j] = u(rng) < p[j] ? 1.0 : 0.0;
            d.add(std::move(x), k);
        }
    }
    return d;
}

TriggerSpec tabular_trigger(const Dataset& clean, std::size_t count, std::size_t target_label) {
    if (clean.input_shape.size() != 1) throw data_error("tabular trigger needs flat feature vectors");
    const std::size_t F = clean.input_shape[0];
    if (count == 0 || count > F) throw data_error("invalid tabular trigger size");

    std::vector<double> freq(F, 0.0);
    for (const auto& x : clean.inputs) {
        for (std::size_t j = 0; j < F; ++j) freq[j] += x[j];
    }
    std::vector<std::size_t> order(F);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return freq[a] < freq[b]; });

    auto present = [&](const std::vector<std::size_t>& feats) {
        return std::any_of(clean.inputs.begin(), clean.inputs.end(), [&](const Tensor& x) {
            return std::all_of(feats.begin(), feats.end(), [&](std::size_t j) { return x[j] == 1.0; });
        });
    };
    // Slide a window over the rarity ordering until the combination is unseen.
    for (std::size_t start = 0; start + count <= F; ++start) {
        std::vector<std::size_t> feats(order.begin() + start, order.begin() + start + count);
        std::sort(feats.begin(), feats.end());
        if (present(feats)) continue;
        TriggerSpec t;
        t.name = "tabular" + std::to_string(count);
        t.target_label = target_label;
        for (std::size_t j : feats) {
            t.coords.emplace_back(0, j);
            t.pattern.push_back(1.0);
        }
        return t;
    }
    throw data_error("every candidate trigger combination already occurs in the clean data");
}

SpuriousData gen_spurious_dataset(std::uint64_t seed, std::size_t per_combo, std::size_t size) {
    if (size < 12) throw data_error("spurious dataset images must be at least 12x12");
    SpuriousData out;
    out.object_size = size * 3 / 8;
    out.object_top = (size - out.object_size) / 2;
    out.object_left = out.object_top;
    const std::size_t top = out.object_top, s = out.object_size;
    auto in_box = [&](std::size_t r, std::size_t c) { return r >= top && r < top + s && c >= top && c < top + s; };

    // Objects live inside the centre box; backgrounds fill everything else.
    auto object_pixel = [&](int obj, std::size_t r, std::size_t c) -> std::optional<double> {
        const std::size_t lr = r - top, lc = c - top, mid = s / 2;
        if (obj == 0 && (lr == mid || lc == mid)) return 0.75;                      // plus sign
        if (obj == 1 && (lr == 0 || lc == 0 || lr == s - 1 || lc == s - 1)) return 0.75;  // ring
        return std::nullopt;
    };
    auto background_pixel = [&](int bg, std::size_t r, std::size_t c) {
        if (bg == 0) return (r / 2) % 2 == 0 ? 0.9 : 0.1;  // horizontal stripes
        if (bg == 1) return (c / 2) % 2 == 0 ? 0.9 : 0.1;  // vertical stripes
        return 0.5;                                        // neutral
    };

    auto rng = make_rng(seed, "data.spurious");
    std::normal_distribution<double> noise(0.0, 0.05);
    auto make = [&](int obj, int bg, std::size_t label) {
        Dataset d;
        d.input_shape = {1, size, size};
        d.num_classes = 2;
        d.provenance = Provenance::spurious;
        for (std::size_t i = 0; i < per_combo; ++i) {
            Tensor x(d.input_shape);
            for (std::size_t r = 0; r < size; ++r) {
                for (std::size_t c = 0; c < size; ++c) {
                    double v = 0.5;
                    if (in_box(r, c)) {
                        if (obj >= 0) v = object_pixel(obj, r, c).value_or(0.5);
                    } else {
                        v = background_pixel(bg, r, c);
                    }
                    x[r * size + c] = std::clamp(v + noise(rng), 0.0, 1.0);
                }
            }
            d.add(std::move(x), label);
        }
        return d;
    };

    auto merge = [](Dataset a, const Dataset& b) {
        // interleave so mini-batches see both classes
        Dataset m = a;
        m.inputs.clear();
        m.labels.clear();
        for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
            if (i < a.size()) m.add(a.inputs[i], a.labels[i]);
            if (i < b.size()) m.add(b.inputs[i], b.labels[i]);
        }
        return m;
    };

    out.train = merge(make(0, 0, 0), make(1, 1, 1));
    out.probes["objA_bgB"] = make(0, 1, 0);
    out.probes["objB_bgA"] = make(1, 0, 1);
    out.probes["objA_only"] = make(0, 2, 0);
    out.probes["objB_only"] = make(1, 2, 1);
    out.probes["bgA_only"] = make(-1, 0, 0);
    out.probes["bgB_only"] = make(-1, 1, 1);

    Tensor mask({1, size, size});
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) mask[r * size + c] = in_box(r, c) ? 0.0 : 1.0;
    }
    out.masks = {mask, mask};
    return out;
}

// ---------------------------------------------------------------- IDX I/O

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t pos) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_be32(std::string& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint32_t idx_images_magic = 0x00000803;
constexpr std::uint32_t idx_labels_magic = 0x00000801;

}  // namespace

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
    const std::string img = read_text(images_path);
    const std::string lab = read_text(labels_path);

    if (img.size() < 4) throw format_error(FormatIssue::truncated, images_path.string() + ": truncated IDX header");
    if (read_be32(img, 0) != idx_images_magic) {
        throw format_error(FormatIssue::bad_magic, images_path.string() + ": not an IDX image file (magic)");
    }
    if (img.size() < 16) throw format_error(FormatIssue::truncated, images_path.string() + ": truncated IDX header");
    if (lab.size() < 4) throw format_error(FormatIssue::truncated, labels_path.string() + ": truncated IDX header");
    if (read_be32(lab, 0) != idx_labels_magic) {
        throw format_error(FormatIssue::bad_magic, labels_path.string() + ": not an IDX label file (magic)");
    }
    if (lab.size() < 8) throw format_error(FormatIssue::truncated, labels_path.string() + ": truncated IDX header");

    const std::size_t n = read_be32(img, 4), rows = read_be32(img, 8), cols = read_be32(img, 12);
    const std::size_t nl = read_be32(lab, 4);
    if (n != nl) {
        throw format_error(FormatIssue::count_mismatch,
                           "IDX image count " + std::to_string(n) + " != label count " + std::to_string(nl));
    }
    if (rows == 0 || cols == 0) throw format_error(FormatIssue::bad_header, "IDX images have a zero dimension");
    if (img.size() < 16 + n * rows * cols) {
        throw format_error(FormatIssue::truncated, images_path.string() + ": pixel data truncated");
    }
    if (lab.size() < 8 + n) throw format_error(FormatIssue::truncated, labels_path.string() + ": label data truncated");

    Dataset d;
    d.input_shape = {1, rows, cols};
    d.provenance = Provenance::idx;
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor x(d.input_shape);
        for (std::size_t k = 0; k < rows * cols; ++k) {
            x[k] = static_cast<unsigned char>(img[16 + i * rows * cols + k]) / 255.0;
        }
        const std::size_t label = static_cast<unsigned char>(lab[8 + i]);
        max_label = std::max(max_label, label);
        d.add(std::move(x), label);
    }
    d.num_classes = n ? max_label + 1 : 0;
    return d;
}

void write_idx(const Dataset& data, const fs::path& images_path, const fs::path& labels_path) {
    const auto layout = spatial_layout(data.input_shape);
    if (layout.channels != 1) throw data_error("IDX writer supports single-channel images only");
    std::string img, lab;
    put_be32(img, idx_images_magic);
    put_be32(img, static_cast<std::uint32_t>(data.size()));
    put_be32(img, static_cast<std::uint32_t>(layout.height));
    put_be32(img, static_cast<std::uint32_t>(layout.width));
    put_be32(lab, idx_labels_magic);
    put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.inputs[i].values()) {
            img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
        }
        if (data.labels[i] > 255) throw data_error("IDX labels must fit in one byte");
        lab.push_back(static_cast<char>(data.labels[i]));
    }
    write_text(images_path, img);
    write_text(labels_path, lab);
}

// ------------------------------------------------------------ dataset files

namespace {
std::size_t dataset_payload(const json& header) {
    return header.at("count").get<std::size_t>() * shape_size(header.at("input_shape").get<Shape>());
}
}  // namespace

void save_dataset(const Dataset& data, const fs::path& path) {
    data.check();
    std::vector<double> payload;
    payload.reserve(data.size() * shape_size(data.input_shape));
    for (const auto& x : data.inputs) payload.insert(payload.end(), x.data().begin(), x.data().end());
    const json header{{"input_shape", data.input_shape}, {"num_classes", data.num_classes},
                      {"provenance", to_string(data.provenance)}, {"count", data.size()},
                      {"labels", data.labels}, {"poisoned", data.poisoned}};
    write_container(path, dataset_magic, header, payload);
}

Dataset load_dataset(const fs::path& path) {
    auto c = read_container(path, dataset_magic, &dataset_payload);
    Dataset d;
    try {
        d.input_shape = c.header.at("input_shape").get<Shape>();
        d.num_classes = c.header.at("num_classes").get<std::size_t>();
        d.provenance = provenance_from_string(c.header.at("provenance").get<std::string>());
        d.labels = c.header.at("labels").get<std::vector<std::size_t>>();
        d.poisoned = c.header.at("poisoned").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw format_error(FormatIssue::bad_header, path.string() + ": malformed dataset header: " + e.what());
    }
    const std::size_t n = c.header.at("count").get<std::size_t>(), per = shape_size(d.input_shape);
    if (d.labels.size() != n) throw format_error(FormatIssue::count_mismatch, path.string() + ": label count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        d.inputs.emplace_back(d.input_shape, std::vector<double>(c.payload.begin() + i * per, c.payload.begin() + (i + 1) * per));
    }
    d.check();
    return d;
}

}  // namespace faithlab
