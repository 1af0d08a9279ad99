#include <sstream>

#include "doctest.h"
#include "faithlab/cli.hpp"
#include "faithlab/config.hpp"
#include "faithlab/error.hpp"
#include "fixtures.hpp"

using namespace faithlab;
namespace fs = std::filesystem;

namespace {

std::string config_error_line(const std::string& text) {
    try {
        parse_toml(text);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        return e.what();
    }
    return "";
}

const char* tiny_config = R"(seed = 3
out = "unused"

[data]
per_class = 12
test_per_class = 4
height = 8
width = 8

[optim]
epochs = 1
batch_size = 8

[record]
every = 1
unit = "epochs"
count = 2

[explain]
methods = ["saliency", "ig"]
inputs = 2
ig_steps = 4
)";

}  // namespace

TEST_CASE("toml subset parsing") {
    const json doc = parse_toml(
        "# leading comment\n"
        "seed = 7\n"
        "name = \"a \\\"b\\\"\"  # trailing\n"
        "\n"
        "[optim]\n"
        "lr = 1e-3\n"
        "big = 1_000\n"
        "neg = -2.5\n"
        "on = true\n"
        "list = [1, 2,\n"
        "        3]  # multi-line\n"
        "names = [\"x\", \"y\",]\n");
    CHECK(doc["seed"] == 7);
    CHECK(doc["name"] == "a \"b\"");
    CHECK(doc["optim"]["lr"].get<double>() == 1e-3);
    CHECK(doc["optim"]["big"] == 1000);
    CHECK(doc["optim"]["neg"].get<double>() == -2.5);
    CHECK(doc["optim"]["on"] == true);
    CHECK(doc["optim"]["list"] == json::array({1, 2, 3}));
    CHECK(doc["optim"]["names"] == json::array({"x", "y"}));
}

TEST_CASE("toml errors carry line numbers") {
    CHECK(config_error_line("a = 1\nb = \n").find("line 2") != std::string::npos);
    CHECK(config_error_line("a = 1\na = 2\n").find("line 2") != std::string::npos);
    CHECK(config_error_line("\n\n[s]\n[s]\n").find("line 4") != std::string::npos);
    CHECK(config_error_line("x = \"open\n").find("line 1") != std::string::npos);
    CHECK(config_error_line("x = 1 2\n").find("line 1") != std::string::npos);
    CHECK(config_error_line("x = [1, 2\n").find("line") != std::string::npos);
    CHECK(config_error_line("x = nan\n").find("line 1") != std::string::npos);
}

TEST_CASE("toml round trip of the defaults") {
    const json& d = RunConfig::defaults();
    CHECK(parse_toml(to_toml(d)) == d);
}

TEST_CASE("run config validation") {
    CHECK_NOTHROW(RunConfig::resolve(json::object()));
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("bogus = 1\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("[optim]\nlearning_rate = 0.1\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("[nope]\na = 1\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("[optim]\nepochs = 1.5\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("[optim]\nalgorithm = 3\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("optim = 1\n")), Error);
    CHECK_THROWS_AS(RunConfig::resolve(parse_toml("seed = -1\n")), Error);

    // integers are accepted where floats are expected and stored as floats
    auto cfg = RunConfig::resolve(parse_toml("[optim]\nlr = 1\n"));
    CHECK(cfg.doc()["optim"]["lr"].is_number_float());
    CHECK(cfg.num("optim", "lr") == 1.0);

    CHECK_THROWS_AS(cli::optim_config(RunConfig::resolve(parse_toml("[optim]\nalgorithm = \"rmsprop\"\n"))), Error);
    CHECK_THROWS_AS(cli::record_interval(RunConfig::resolve(parse_toml("[record]\nevery = 0\n"))), Error);
    CHECK_THROWS_AS(cli::methods(RunConfig::resolve(parse_toml("[explain]\nmethods = [\"gradcam\"]\n"))), Error);
}

TEST_CASE("echo omits the output location and round-trips") {
    auto cfg = RunConfig::resolve(parse_toml("out = \"somewhere\"\n[optim]\nlr = 0.5\n"));
    const std::string echo = cfg.echo();
    CHECK(echo.find("somewhere") == std::string::npos);
    auto again = RunConfig::resolve(parse_toml(echo));
    CHECK(again.num("optim", "lr") == 0.5);
    json a = cfg.doc(), b = again.doc();
    a.erase("out");
    b.erase("out");
    CHECK(a == b);
}

TEST_CASE("relative paths resolve against the config directory") {
    auto cfg = RunConfig::resolve(parse_toml("[data]\ndir = \"data\"\n[test]\nrun_dir = \"/abs/run\"\n"), "/cfg/home");
    CHECK(cfg.path("data", "dir") == fs::path("/cfg/home/data"));
    CHECK(cfg.path("test", "run_dir") == fs::path("/abs/run"));
    CHECK(cfg.path("explain", "model").empty());
}

TEST_CASE("command names") {
    CHECK(cli::command_names() ==
          std::vector<std::string>{"gen-data", "train", "poison-train", "explain", "test", "attack", "report"});
}

TEST_CASE("small command chain") {
    const fs::path root = fixtures::scratch_dir("cli");
    write_text(root / "run.toml", tiny_config);
    std::ostringstream log, err;
    auto opts = [&](const std::string& cmd, const std::string& out) {
        cli::CommandOptions o;
        o.command = cmd;
        o.config = root / "run.toml";
        o.out = root / out;
        return o;
    };

    REQUIRE(cli::run(opts("gen-data", "data"), log, err) == 0);
    CHECK(fs::exists(root / "data" / "train.ftd"));
    CHECK(fs::exists(root / "data" / "manifest.json"));
    CHECK(fs::exists(root / "data" / "config.resolved.toml"));

    REQUIRE(cli::run(opts("train", "clean"), log, err) == 0);
    const auto ckpts = cli::checkpoint_files(root / "clean");
    CHECK(ckpts.size() == 2);
    CHECK(fs::exists(root / "clean" / "losses.csv"));
    CHECK(cli::load_record(root / "clean").checkpoints.size() == 2);

    // explain needs a model; point it at the training run through an override file
    write_text(root / "explain.toml", std::string(tiny_config) + "\n[test]\nrun_dir = \"clean\"\n");
    auto ex = opts("explain", "maps");
    ex.config = root / "explain.toml";
    REQUIRE(cli::run(ex, log, err) == 0);
    CHECK(fs::exists(root / "maps" / "index.json"));
    CHECK(fs::exists(root / "maps" / "maps" / "sample0_saliency.json"));
    CHECK(fs::exists(root / "maps" / "sets" / "sample1_random.json"));

    // no victim reads the IG sample, so only the saliency sample is optimized
    write_text(root / "attack.toml", std::string(tiny_config) +
                                         "\n[test]\nrun_dir = \"clean\"\n[attack]\niterations = 2\n"
                                         "grad_mode = \"analytic\"\nvictims = [\"saliency\", \"occlusion\"]\n");
    auto at = opts("attack", "attack");
    at.config = root / "attack.toml";
    REQUIRE(cli::run(at, log, err) == 0);
    CHECK(fs::exists(root / "attack" / "trace_0_saliency.csv"));
    CHECK_FALSE(fs::exists(root / "attack" / "trace_0_ig.csv"));
    const json summary = json::parse(read_text(root / "attack" / "attack.json"));
    CHECK(summary[0].contains("saliency"));
    CHECK_FALSE(summary[0].contains("ig"));

    // single-shot outputs and config failures map to the config exit code
    CHECK(cli::run(opts("train", "clean"), log, err) == static_cast<int>(ErrorKind::config));
    CHECK(err.str().find("already exists") != std::string::npos);
    auto missing = opts("train", "x1");
    missing.config = root / "absent.toml";
    CHECK(cli::run(missing, log, err) == static_cast<int>(ErrorKind::config));
    write_text(root / "bad.toml", "[optim]\nturbo = true\n");
    auto bad = opts("train", "x2");
    bad.config = root / "bad.toml";
    CHECK(cli::run(bad, log, err) == static_cast<int>(ErrorKind::config));
    auto unknown = opts("fly", "x3");
    CHECK(cli::run(unknown, log, err) == static_cast<int>(ErrorKind::config));
}

TEST_CASE("debug test on the spurious data") {
    const fs::path root = fixtures::scratch_dir("cli_debug");
    const std::string base = R"(seed = 4

[data]
kind = "spurious"
spurious_per_combo = 6
dir = "data"

[optim]
epochs = 3
batch_size = 8

[record]
every = 1
unit = "epochs"
count = 3
filter = false

[explain]
methods = ["saliency", "ig"]
ig_steps = 4

[test]
kind = "debug"
run_dir = "run"
inputs = 3
random_draws = 5
)";
    write_text(root / "run.toml", base);
    std::ostringstream log, err;
    auto opts = [&](const std::string& cmd, const std::string& out) {
        cli::CommandOptions o;
        o.command = cmd;
        o.config = root / "run.toml";
        o.out = root / out;
        return o;
    };
    REQUIRE(cli::run(opts("gen-data", "data"), log, err) == 0);
    CHECK(fs::exists(root / "data" / "masks.json"));
    REQUIRE(cli::run(opts("train", "run"), log, err) == 0);
    REQUIRE(cli::run(opts("test", "debug"), log, err) == 0);

    const json out = json::parse(read_text(root / "debug" / "debug.json"));
    CHECK(out["ranking"].size() == 3);
    CHECK(out["probe_accuracy"].size() == 6);
    for (const auto& row : out["ranking"]) CHECK(row.contains("emt_pcc"));
    for (std::size_t i = 1; i < out["ranking"].size(); ++i) {
        CHECK(out["ranking"][i - 1]["mean_ssim"].get<double>() >= out["ranking"][i]["mean_ssim"].get<double>());
    }

    // the synthetic data has no masks
    write_text(root / "plain.toml", "[test]\nkind = \"debug\"\n[data]\nper_class = 4\ntest_per_class = 2\n");
    auto plain = opts("test", "plain_out");
    plain.config = root / "plain.toml";
    CHECK(cli::run(plain, log, err) == static_cast<int>(ErrorKind::config));
}
