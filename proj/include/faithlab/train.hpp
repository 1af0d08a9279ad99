#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "faithlab/data.hpp"
#include "faithlab/nn.hpp"

namespace faithlab {

enum class Algorithm { sgd, adam };

struct OptimConfig {
    Algorithm algorithm = Algorithm::sgd;
    double lr = 0.05;
    double momentum = 0.9;  ///< sgd
    double beta1 = 0.9;     ///< adam
    double beta2 = 0.999;   ///< adam
    double eps = 1e-8;      ///< adam
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class IntervalUnit { epochs, batches };

std::string to_string(IntervalUnit unit);
IntervalUnit interval_unit_from_string(const std::string& name);

/// Record a checkpoint every `every` units, at most `count` times after M0.
struct RecordInterval {
    std::size_t every = 1;
    IntervalUnit unit = IntervalUnit::epochs;
    std::size_t count = 5;
};

/// Optional held-out evaluation attached to every recorded checkpoint.
struct EvalSets {
    const Dataset* clean_test = nullptr;
    const TriggerSpec* trigger = nullptr;
};

inline constexpr double not_measured = std::numeric_limits<double>::quiet_NaN();

struct TrainRecord {
    std::vector<Checkpoint> checkpoints;  ///< M0 .. Mn
    std::vector<double> losses;           ///< training loss of each checkpoint
    std::vector<double> clean_acc;        ///< NaN when no test set was given
    std::vector<double> backdoor_acc;     ///< NaN when no trigger was given
    RecordInterval interval;
    Checkpoint final_model;
    double final_train_accuracy = 0.0;
    double final_clean_acc = not_measured;
    double final_backdoor_acc = not_measured;

    std::size_t n() const noexcept { return checkpoints.empty() ? 0 : checkpoints.size() - 1; }
};

double dataset_loss(const Checkpoint& model, const Dataset& data);
double accuracy(const Checkpoint& model, const Dataset& data);
/// Fraction of triggered non-target test samples classified as the target.
double backdoor_accuracy(const Checkpoint& model, const Dataset& clean_test, const TriggerSpec& trig);

/// Mean cross-entropy over `batch` and its parameter gradient.
double batch_gradient(const Checkpoint& model, const Dataset& data, std::span<const std::size_t> batch,
                      std::vector<Tensor>& grads);

TrainRecord train(const NetworkSpec& spec, const Dataset& data, const OptimConfig& opt,
                  const RecordInterval& interval, const EvalSets& eval = {});

/// Fine-tunes a clean model on poisoned data; M0 is the pretrained model.
TrainRecord incremental_backdoor_train(const Checkpoint& pretrained, const Dataset& poisoned, const OptimConfig& opt,
                                       const RecordInterval& interval, const EvalSets& eval);

/// Keeps M0 and every later checkpoint whose loss is strictly below the last kept one.
TrainRecord filter_checkpoints(const TrainRecord& record);

/// checkpoint_index,epoch,train_loss,clean_acc,backdoor_acc
std::string loss_csv(const TrainRecord& record);

}  // namespace faithlab
