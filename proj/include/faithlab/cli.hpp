#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "faithlab/attack.hpp"
#include "faithlab/config.hpp"
#include "faithlab/data.hpp"
#include "faithlab/explain.hpp"
#include "faithlab/train.hpp"

namespace faithlab::cli {

const std::vector<std::string>& command_names();

struct CommandOptions {
    std::string command;
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
};

/// Runs one command; throws faithlab::Error on failure.
void execute(const CommandOptions& opts, std::ostream& log);

/// Runs one command and maps failures to exit codes, reporting them on `err`.
int run(const CommandOptions& opts, std::ostream& log, std::ostream& err);

// Builders shared by the commands (and usable from tests).

struct Datasets {
    Dataset train;
    Dataset test;
    std::optional<SpuriousData> spurious;
};

/// Loads data.dir when set, otherwise generates from the [data] section.
Datasets load_data(const RunConfig& cfg);
/// Builds the datasets from the [data] section, ignoring data.dir.
Datasets generate_data(const RunConfig& cfg);
NetworkSpec build_network(const RunConfig& cfg, const Shape& input_shape, std::size_t num_classes);
TriggerSpec build_trigger(const RunConfig& cfg, const Dataset& train);
OptimConfig optim_config(const RunConfig& cfg);
RecordInterval record_interval(const RunConfig& cfg);
ExplainerConfig explainer_config(const RunConfig& cfg);
AttackConfig attack_config(const RunConfig& cfg, const Shape& input_shape);
std::vector<Method> methods(const RunConfig& cfg);

/// ckpt_{index}_{epoch}.bin files of a run directory, in index order.
std::vector<std::filesystem::path> checkpoint_files(const std::filesystem::path& dir);
/// Checkpoints of a run directory as a training record (loss from each file).
TrainRecord load_record(const std::filesystem::path& dir);

}  // namespace faithlab::cli
