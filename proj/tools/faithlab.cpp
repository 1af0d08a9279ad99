#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "faithlab/cli.hpp"
#include "faithlab/error.hpp"

int main(int argc, char** argv) {
    CLI::App app{"faithlab: faithfulness tests for local explanation methods"};
    app.require_subcommand(1, 1);

    const std::map<std::string, std::string> about = {
        {"gen-data", "generate or import a dataset"},
        {"train", "train a clean model, recording checkpoints"},
        {"poison-train", "train a backdoored model from a clean pretrain"},
        {"explain", "write explanation maps and top-k sets"},
        {"test", "run a traditional, embt, ptt, emt or debug test"},
        {"attack", "run the explanation manipulation attack"},
        {"report", "merge test reports into a summary and figure data"}};

    faithlab::cli::CommandOptions opts;
    std::uint64_t seed = 0;
    std::string out;
    for (const auto& name : faithlab::cli::command_names()) {
        auto* sub = app.add_subcommand(name, about.at(name));
        sub->add_option("--config", opts.config, "run configuration (TOML)")->required();
        sub->add_option("--seed", seed, "override the global seed");
        sub->add_option("--out", out, "output directory (overrides the config)");
        sub->callback([&opts, &seed, &out, sub, name] {
            opts.command = name;
            if (sub->count("--seed")) opts.seed = seed;
            if (sub->count("--out")) opts.out = out;
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(faithlab::ErrorKind::config);
    }
    return faithlab::cli::run(opts, std::cout, std::cerr);
}
