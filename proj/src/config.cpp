#include "faithlab/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "faithlab/error.hpp"

namespace faithlab {

namespace {

class Parser {
public:
    explicit Parser(const std::string& text) : text_(text) {}

    json run() {
        json doc = json::object();
        json* section = &doc;
        while (!eof()) {
            skip_blank_and_comments();
            if (eof()) break;
            if (peek() == '[') {
                ++pos_;
                const std::string name = bare_key();
                expect(']');
                if (doc.contains(name)) fail("duplicate section [" + name + "]");
                end_of_line();
                doc[name] = json::object();
                section = &doc[name];
                continue;
            }
            const std::string key = bare_key();
            skip_spaces();
            expect('=');
            skip_spaces();
            json v = value();
            if (section->contains(key)) fail("duplicate key '" + key + "'");
            end_of_line();
            (*section)[key] = std::move(v);
        }
        return doc;
    }

private:
    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;

    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return eof() ? '\0' : text_[pos_]; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw config_error("config line " + std::to_string(line_) + ": " + msg);
    }

    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    void skip_spaces() {
        while (peek() == ' ' || peek() == '\t') ++pos_;
    }

    void skip_comment() {
        if (peek() == '#') {
            while (!eof() && peek() != '\n') ++pos_;
        }
    }

    void skip_blank_and_comments() {
        for (;;) {
            skip_spaces();
            skip_comment();
            if (peek() == '\r') ++pos_;
            if (peek() == '\n') {
                ++pos_;
                ++line_;
                continue;
            }
            return;
        }
    }

    void end_of_line() {
        skip_spaces();
        skip_comment();
        if (peek() == '\r') ++pos_;
        if (eof()) return;
        if (peek() != '\n') fail("unexpected text after value");
        ++pos_;
        ++line_;
    }

    std::string bare_key() {
        skip_spaces();
        std::string k;
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-') k += text_[pos_++];
        if (k.empty()) fail("expected a key");
        skip_spaces();
        return k;
    }

    json value() {
        const char c = peek();
        if (c == '"') return string();
        if (c == '[') return array();
        if (text_.compare(pos_, 4, "true") == 0) {
            pos_ += 4;
            return true;
        }
        if (text_.compare(pos_, 5, "false") == 0) {
            pos_ += 5;
            return false;
        }
        return number();
    }

    json string() {
        ++pos_;
        std::string s;
        for (;;) {
            if (eof() || peek() == '\n') fail("unterminated string");
            char c = text_[pos_++];
            if (c == '"') break;
            if (c == '\\') {
                const char e = text_[pos_++];
                switch (e) {
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                default: fail(std::string("unsupported escape \\") + e);
                }
            }
            s += c;
        }
        return s;
    }

    json array() {
        ++pos_;
        json arr = json::array();
        for (;;) {
            skip_blank_and_comments();
            if (peek() == ']') {
                ++pos_;
                return arr;
            }
            arr.push_back(value());
            skip_blank_and_comments();
            if (peek() == ',') {
                ++pos_;
            } else if (peek() != ']') {
                fail("expected ',' or ']' in array");
            }
        }
    }

    json number() {
        const std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                          peek() == '.' || peek() == '_')) {
            ++pos_;
        }
        std::string tok = text_.substr(start, pos_ - start);
        std::erase(tok, '_');
        if (tok.empty()) fail("expected a value");
        const bool is_float = tok.find_first_of(".eE") != std::string::npos;
        std::size_t used = 0;
        try {
            if (is_float) {
                const double d = std::stod(tok, &used);
                if (used == tok.size() && std::isfinite(d)) return d;
            } else {
                const long long i = std::stoll(tok, &used);
                if (used == tok.size()) return i;
            }
        } catch (const std::exception&) {
        }
        fail("invalid value '" + tok + "'");
    }
};

std::string scalar_toml(const json& v) {
    if (v.is_string()) {
        std::string out = "\"";
        for (char c : v.get<std::string>()) {
            if (c == '"' || c == '\\') out += '\\';
            if (c == '\n') {
                out += "\\n";
                continue;
            }
            out += c;
        }
        return out + "\"";
    }
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        std::string s = buf;
        if (s.find_first_of(".eE") == std::string::npos) s += ".0";
        return s;
    }
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_array()) {
        std::string out = "[";
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + scalar_toml(v[i]);
        return out + "]";
    }
    throw config_error("cannot write nested tables");
}

json method_list() {
    return json::array({"saliency", "ig", "sg", "sg_sq", "vg", "sg_sq_ig", "deeplift", "occlusion", "lime",
                        "kernel_shap"});
}

json build_defaults() {
    json d;
    d["seed"] = 0;
    d["out"] = "out";
    d["data"] = {{"kind", "synthetic"},
                 {"dir", ""},
                 {"classes", 2},
                 {"per_class", 300},
                 {"test_per_class", 100},
                 {"height", 16},
                 {"width", 16},
                 {"channels", 1},
                 {"features", 32},
                 {"idx_images", ""},
                 {"idx_labels", ""},
                 {"idx_test_images", ""},
                 {"idx_test_labels", ""},
                 {"spurious_per_combo", 200}};
    d["model"] = {{"arch", "desk_cnn"}, {"conv_channels", 4}, {"hidden", 16}, {"softplus_beta", 0.0}};
    d["optim"] = {{"algorithm", "sgd"}, {"lr", 0.02},       {"momentum", 0.9},   {"beta1", 0.9},
                  {"beta2", 0.999},     {"eps", 1e-8},      {"batch_size", 32},  {"epochs", 10}};
    d["record"] = {{"every", 20}, {"unit", "batches"}, {"count", 10}, {"filter", true}};
    d["trigger"] = {{"kind", "square"}, {"size", 3},           {"top", -1},
                    {"left", -1},       {"target_label", 0},   {"value", 1.0}};
    d["poison"] = {{"ratio", 0.05}, {"pretrain_epochs", 5}, {"pretrained", ""}};
    d["explain"] = {{"methods", method_list()},
                    {"model", ""},
                    {"inputs", 4},
                    {"ig_steps", 64},
                    {"ig_baseline", 0.0},
                    {"sg_sigma", 0.1},
                    {"sg_samples", 25},
                    {"occlusion_window", 3},
                    {"occlusion_stride", 1},
                    {"occlusion_baseline", 0.0},
                    {"lime_segments", 70},
                    {"lime_samples", 500},
                    {"lime_kernel_width", 0.25},
                    {"lime_ridge_lambda", 0.01},
                    {"lime_baseline", 0.0},
                    {"shap_samples", 2000},
                    {"shap_segments", 64},
                    {"shap_baseline", 0.0},
                    {"shap_exact", false},
                    {"wrt", "probability"},
                    {"top_fraction", 0.1}};
    d["test"] = {{"kind", "embt"},
                 {"run_dir", ""},
                 {"inputs", 10},
                 {"fractions", json::array({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0})},
                 {"traditional_fractions", json::array({0.02, 0.04, 0.06, 0.08, 0.1})},
                 {"removal_value", 0.0},
                 {"random_draws", 200},
                 {"dataset", "synthetic"}};
    d["attack"] = {{"model", ""},
                   {"gamma1", 100.0},
                   {"gamma2", 1e7},
                   {"lr", 0.01},
                   {"iterations", 100},
                   {"beta", 30.0},
                   {"target_size", 4},
                   {"grad_mode", "finite_difference"},
                   {"fd_h", 1e-3},
                   {"ig_steps", 16},
                   {"inputs", 1},
                   {"victims", method_list()},
                   {"wrt", "probability"}};
    d["report"] = {{"dirs", json::array()}};
    return d;
}

bool compatible(const json& def, const json& v) {
    if (def.is_number_float()) return v.is_number();
    if (def.is_number_integer()) return v.is_number_integer();
    if (def.is_array()) {
        if (!v.is_array()) return false;
        for (const auto& e : v) {
            if (e.is_structured()) return false;
            if (!def.empty() && !compatible(def[0], e)) return false;
        }
        return true;
    }
    return def.type() == v.type();
}

std::string type_name(const json& def) {
    if (def.is_number_float()) return "a number";
    if (def.is_number_integer()) return "an integer";
    if (def.is_boolean()) return "a boolean";
    if (def.is_string()) return "a string";
    return "an array";
}

}  // namespace

json parse_toml(const std::string& text) { return Parser(text).run(); }

std::string to_toml(const json& doc) {
    std::ostringstream out;
    for (const auto& [k, v] : doc.items()) {
        if (!v.is_object()) out << k << " = " << scalar_toml(v) << '\n';
    }
    for (const auto& [k, v] : doc.items()) {
        if (!v.is_object()) continue;
        out << "\n[" << k << "]\n";
        for (const auto& [kk, vv] : v.items()) out << kk << " = " << scalar_toml(vv) << '\n';
    }
    return out.str();
}

const json& RunConfig::defaults() {
    static const json d = build_defaults();
    return d;
}

RunConfig RunConfig::resolve(const json& raw, std::filesystem::path base_dir) {
    RunConfig cfg;
    cfg.doc_ = defaults();
    cfg.base_dir_ = std::move(base_dir);
    for (const auto& [k, v] : raw.items()) {
        if (!cfg.doc_.contains(k)) throw config_error("unknown config key '" + k + "'");
        json& def = cfg.doc_[k];
        if (def.is_object() != v.is_object()) throw config_error("'" + k + "' must be " + (def.is_object() ? "a section" : "a value"));
        if (!v.is_object()) {
            if (!compatible(def, v)) throw config_error("'" + k + "' must be " + type_name(def));
            def = v;
            continue;
        }
        for (const auto& [kk, vv] : v.items()) {
            if (!def.contains(kk)) throw config_error("unknown config key '" + k + "." + kk + "'");
            if (!compatible(def[kk], vv)) throw config_error("'" + k + "." + kk + "' must be " + type_name(def[kk]));
            def[kk] = def[kk].is_number_float() ? json(vv.get<double>()) : vv;
        }
    }
    if (!cfg.doc_["seed"].is_number_unsigned() && cfg.doc_["seed"].get<long long>() < 0) {
        throw config_error("seed must be non-negative");
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    return resolve(parse_toml(read_text(path)), path.parent_path());
}

namespace {

const json& lookup(const json& doc, const std::string& section, const std::string& key) {
    const json& s = section.empty() ? doc : doc.at(section);
    if (!s.contains(key)) throw config_error("missing config key '" + section + "." + key + "'");
    return s.at(key);
}

}  // namespace

std::uint64_t RunConfig::seed() const { return doc_.at("seed").get<std::uint64_t>(); }

std::string RunConfig::str(const std::string& section, const std::string& key) const {
    return lookup(doc_, section, key).get<std::string>();
}

double RunConfig::num(const std::string& section, const std::string& key) const {
    return lookup(doc_, section, key).get<double>();
}

long RunConfig::integer(const std::string& section, const std::string& key) const {
    return lookup(doc_, section, key).get<long>();
}

std::size_t RunConfig::count(const std::string& section, const std::string& key) const {
    const long v = integer(section, key);
    if (v < 0) throw config_error("'" + section + "." + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

bool RunConfig::flag(const std::string& section, const std::string& key) const {
    return lookup(doc_, section, key).get<bool>();
}

std::vector<double> RunConfig::nums(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& v : lookup(doc_, section, key)) {
        if (!v.is_number()) throw config_error("'" + section + "." + key + "' must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<std::string> RunConfig::strs(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& v : lookup(doc_, section, key)) {
        if (!v.is_string()) throw config_error("'" + section + "." + key + "' must hold strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::filesystem::path RunConfig::path(const std::string& section, const std::string& key) const {
    return resolve_path(str(section, key));
}

std::filesystem::path RunConfig::resolve_path(const std::filesystem::path& p) const {
    if (p.empty() || p.is_absolute() || base_dir_.empty()) return p;
    return base_dir_ / p;
}

std::string RunConfig::echo() const {
    json copy = doc_;
    copy.erase("out");
    return to_toml(copy);
}

}  // namespace faithlab
