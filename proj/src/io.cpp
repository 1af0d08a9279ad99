#include "faithlab/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "faithlab/error.hpp"

namespace faithlab {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::size_t checkpoint_payload(const json& header) {
    std::size_t n = 0;
    for (const auto& s : header.at("param_tensor_shapes")) n += shape_size(s.get<Shape>());
    return n;
}

}  // namespace

void write_container(const fs::path& path, std::string_view magic, const json& header,
                     std::span<const double> payload) {
    const std::string head = header.dump();
    std::string bytes;
    bytes.reserve(magic.size() + 4 + head.size() + payload.size() * 8);
    bytes.append(magic);
    put_u32(bytes, static_cast<std::uint32_t>(head.size()));
    bytes += head;
    for (double v : payload) put_f64(bytes, v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

Container read_container(const fs::path& path, std::string_view magic, std::size_t (*count_payload)(const json&)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::string name = path.string();

    if (bytes.size() < magic.size() || bytes.compare(0, magic.size(), magic) != 0) {
        // Same family, other revision: distinguish version from garbage.
        if (bytes.size() >= magic.size() && bytes.compare(0, magic.size() - 2, magic.substr(0, magic.size() - 2)) == 0) {
            throw format_error(FormatIssue::bad_version, name + ": unsupported format version");
        }
        throw format_error(FormatIssue::bad_magic, name + ": wrong magic bytes");
    }
    std::size_t pos = magic.size();
    if (bytes.size() < pos + 4) throw format_error(FormatIssue::truncated, name + ": truncated header length");
    const std::size_t head_len = get_le(p + pos, 4);
    pos += 4;
    if (bytes.size() < pos + head_len) throw format_error(FormatIssue::truncated, name + ": truncated header");

    Container c;
    try {
        c.header = json::parse(bytes.substr(pos, head_len));
    } catch (const json::exception& e) {
        throw format_error(FormatIssue::bad_header, name + ": malformed header: " + e.what());
    }
    pos += head_len;

    std::size_t count = 0;
    try {
        count = count_payload(c.header);
    } catch (const json::exception& e) {
        throw format_error(FormatIssue::bad_header, name + ": incomplete header: " + e.what());
    }
    const std::size_t have = (bytes.size() - pos) / 8;
    if (bytes.size() - pos < count * 8) {
        throw format_error(FormatIssue::truncated, name + ": header declares " + std::to_string(count) +
                                                       " values, body holds " + std::to_string(have));
    }
    if (bytes.size() - pos != count * 8) {
        throw format_error(FormatIssue::count_mismatch, name + ": trailing bytes after payload");
    }
    c.payload.resize(count);
    for (std::size_t i = 0; i < count; ++i) c.payload[i] = std::bit_cast<double>(get_le(p + pos + 8 * i, 8));
    return c;
}

json to_json(const LayerSpec& l) {
    json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
    case LayerKind::dense:
        j["in"] = l.in;
        j["out"] = l.out;
        break;
    case LayerKind::conv2d:
        j["in_ch"] = l.in;
        j["out_ch"] = l.out;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        break;
    case LayerKind::maxpool:
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        break;
    case LayerKind::softplus:
        j["beta"] = l.beta;
        break;
    default:
        break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const auto kind = layer_kind_from_string(j.at("kind").get<std::string>());
    switch (kind) {
    case LayerKind::dense:
        return LayerSpec::dense(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
    case LayerKind::conv2d:
        return LayerSpec::conv2d(j.at("in_ch").get<std::size_t>(), j.at("out_ch").get<std::size_t>(),
                                 j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
                                 j.at("padding").get<std::size_t>());
    case LayerKind::maxpool:
        return LayerSpec::maxpool(j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>());
    case LayerKind::flatten:
        return LayerSpec::flatten();
    case LayerKind::relu:
        return LayerSpec::relu();
    case LayerKind::softplus:
        return LayerSpec::softplus(j.at("beta").get<double>());
    }
    throw data_error("unreachable layer kind");
}

json to_json(const NetworkSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) layers.push_back(to_json(l));
    return {{"input_shape", spec.input_shape}, {"num_classes", spec.num_classes}, {"layers", layers}};
}

NetworkSpec network_from_json(const json& j) {
    NetworkSpec spec;
    spec.input_shape = j.at("input_shape").get<Shape>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) spec.layers.push_back(layer_from_json(l));
    spec.validate();
    return spec;
}

json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.data()}}; }

Tensor tensor_from_json(const json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

void save_checkpoint(const Checkpoint& model, const fs::path& path) {
    model.check();
    json shapes = json::array();
    std::vector<double> payload;
    payload.reserve(model.spec.param_count());
    for (const auto& p : model.params) {
        shapes.push_back(p.shape());
        payload.insert(payload.end(), p.data().begin(), p.data().end());
    }
    const json header{{"spec", to_json(model.spec)},
                      {"epoch", model.epoch},
                      {"step", model.step},
                      {"train_loss", model.train_loss},
                      {"rng_seed", model.rng_seed},
                      {"param_tensor_shapes", shapes}};
    write_container(path, checkpoint_magic, header, payload);
}

Checkpoint load_checkpoint(const fs::path& path) {
    auto c = read_container(path, checkpoint_magic, &checkpoint_payload);
    Checkpoint m;
    try {
        m.spec = network_from_json(c.header.at("spec"));
        m.epoch = c.header.at("epoch").get<std::uint64_t>();
        m.step = c.header.value("step", std::uint64_t{0});
        m.train_loss = c.header.at("train_loss").get<double>();
        m.rng_seed = c.header.at("rng_seed").get<std::uint64_t>();
        std::size_t offset = 0;
        for (const auto& s : c.header.at("param_tensor_shapes")) {
            const Shape shape = s.get<Shape>();
            const std::size_t n = shape_size(shape);
            m.params.emplace_back(shape, std::vector<double>(c.payload.begin() + offset, c.payload.begin() + offset + n));
            offset += n;
        }
    } catch (const json::exception& e) {
        throw format_error(FormatIssue::bad_header, path.string() + ": malformed checkpoint header: " + e.what());
    }
    try {
        m.check();
    } catch (const Error& e) {
        throw format_error(FormatIssue::count_mismatch, path.string() + ": " + e.what());
    }
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace faithlab
