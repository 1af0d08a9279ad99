#include "faithlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "faithlab/error.hpp"
#include "faithlab/format.hpp"
#include "faithlab/parallel.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

void OptimConfig::validate() const {
    if (!(lr > 0.0)) throw config_error("learning rate must be positive");
    if (batch_size == 0) throw config_error("batch size must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("momentum must lie in [0, 1)");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw config_error("adam betas must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw config_error("adam eps must be positive");
}

std::string to_string(IntervalUnit unit) { return unit == IntervalUnit::epochs ? "epochs" : "batches"; }

IntervalUnit interval_unit_from_string(const std::string& name) {
    if (name == "epochs") return IntervalUnit::epochs;
    if (name == "batches") return IntervalUnit::batches;
    throw config_error("record unit must be 'epochs' or 'batches', got '" + name + "'");
}

double dataset_loss(const Checkpoint& model, const Dataset& data) {
    if (data.empty()) return 0.0;
    std::vector<double> per(data.size());
    parallel_for(data.size(), [&](std::size_t i) { per[i] = cross_entropy(model, data.inputs[i], data.labels[i]); });
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(data.size());
}

double accuracy(const Checkpoint& model, const Dataset& data) {
    if (data.empty()) return 0.0;
    std::vector<char> hit(data.size());
    parallel_for(data.size(), [&](std::size_t i) { hit[i] = predict(model, data.inputs[i]) == data.labels[i]; });
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(data.size());
}

double backdoor_accuracy(const Checkpoint& model, const Dataset& clean_test, const TriggerSpec& trig) {
    return accuracy(model, triggered_copies(clean_test, trig));
}

double batch_gradient(const Checkpoint& model, const Dataset& data, std::span<const std::size_t> batch,
                      std::vector<Tensor>& grads) {
    grads.clear();
    for (const auto& p : model.params) grads.push_back(Tensor::zeros_like(p));
    std::vector<std::vector<Tensor>> per(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t b) {
        per[b] = grads;
        losses[b] = cross_entropy_backward(model, data.inputs[batch[b]], data.labels[batch[b]], per[b]);
    });
    const double scale = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        loss += losses[b];
        for (std::size_t t = 0; t < grads.size(); ++t) {
            auto& g = grads[t].data();
            const auto& s = per[b][t].data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
        }
    }
    for (auto& g : grads) {
        for (auto& v : g.values()) v *= scale;
    }
    return loss * scale;
}

namespace {

class Optimizer {
public:
    Optimizer(const OptimConfig& cfg, const std::vector<Tensor>& params) : cfg_(cfg) {
        for (const auto& p : params) {
            m_.push_back(Tensor::zeros_like(p));
            v_.push_back(Tensor::zeros_like(p));
        }
    }

    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
        ++t_;
        if (cfg_.algorithm == Algorithm::sgd) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                auto& p = params[k].data();
                auto& m = m_[k].data();
                const auto& g = grads[k].data();
                for (std::size_t i = 0; i < p.size(); ++i) {
                    m[i] = cfg_.momentum * m[i] + g[i];
                    p[i] -= cfg_.lr * m[i];
                }
            }
            return;
        }
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k].data();
            auto& m = m_[k].data();
            auto& v = v_[k].data();
            const auto& g = grads[k].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            }
        }
    }

private:
    OptimConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

void record(TrainRecord& rec, const Checkpoint& model, const Dataset& data, const EvalSets& eval) {
    Checkpoint snap = model;
    snap.train_loss = dataset_loss(model, data);
    rec.losses.push_back(snap.train_loss);
    rec.clean_acc.push_back(eval.clean_test ? accuracy(model, *eval.clean_test) : not_measured);
    rec.backdoor_acc.push_back(eval.clean_test && eval.trigger ? backdoor_accuracy(model, *eval.clean_test, *eval.trigger)
                                                               : not_measured);
    rec.checkpoints.push_back(std::move(snap));
}

TrainRecord run_training(Checkpoint model, const Dataset& data, const OptimConfig& opt,
                         const RecordInterval& interval, const EvalSets& eval) {
    opt.validate();
    if (data.empty()) throw data_error("training dataset is empty");
    data.check();
    if (data.input_shape != model.spec.input_shape || data.num_classes > model.spec.num_classes) {
        throw data_error("dataset " + shape_string(data.input_shape) + " does not fit model input " +
                         shape_string(model.spec.input_shape));
    }
    if (interval.every == 0) throw config_error("record interval must be positive");

    TrainRecord rec;
    rec.interval = interval;
    model.epoch = 0;
    model.step = 0;
    record(rec, model, data, eval);

    auto shuffle_rng = make_rng(opt.seed, "shuffle");
    Optimizer optimizer(opt, model.params);
    std::vector<std::size_t> order(data.size());
    std::vector<Tensor> grads;

    auto due = [&](std::uint64_t units) {
        return rec.checkpoints.size() <= interval.count && units % interval.every == 0;
    };

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t end = std::min(order.size(), start + opt.batch_size);
            const double loss =
                batch_gradient(model, data, std::span<const std::size_t>(order).subspan(start, end - start), grads);
            if (!std::isfinite(loss)) {
                throw Error(ErrorKind::divergence, "training diverged: non-finite loss at epoch " +
                                                       std::to_string(epoch) + ", step " + std::to_string(model.step));
            }
            optimizer.step(model.params, grads);
            ++model.step;
            if (interval.unit == IntervalUnit::batches && due(model.step)) {
                model.epoch = epoch;
                record(rec, model, data, eval);
            }
        }
        model.epoch = epoch + 1;
        for (const auto& p : model.params) {
            if (!p.all_finite()) throw Error(ErrorKind::divergence, "training diverged: non-finite parameters");
        }
        if (interval.unit == IntervalUnit::epochs && due(model.epoch)) record(rec, model, data, eval);
    }

    model.train_loss = dataset_loss(model, data);
    if (!std::isfinite(model.train_loss)) throw Error(ErrorKind::divergence, "training diverged: final loss non-finite");
    rec.final_train_accuracy = accuracy(model, data);
    if (eval.clean_test) rec.final_clean_acc = accuracy(model, *eval.clean_test);
    if (eval.clean_test && eval.trigger) rec.final_backdoor_acc = backdoor_accuracy(model, *eval.clean_test, *eval.trigger);
    rec.final_model = std::move(model);
    return rec;
}

}  // namespace

TrainRecord train(const NetworkSpec& spec, const Dataset& data, const OptimConfig& opt,
                  const RecordInterval& interval, const EvalSets& eval) {
    return run_training(init_model(spec, opt.seed), data, opt, interval, eval);
}

TrainRecord incremental_backdoor_train(const Checkpoint& pretrained, const Dataset& poisoned, const OptimConfig& opt,
                                       const RecordInterval& interval, const EvalSets& eval) {
    pretrained.check();
    return run_training(pretrained, poisoned, opt, interval, eval);
}

TrainRecord filter_checkpoints(const TrainRecord& record) {
    if (record.checkpoints.empty()) throw data_error("cannot filter an empty training record");
    TrainRecord out = record;
    out.checkpoints.clear();
    out.losses.clear();
    out.clean_acc.clear();
    out.backdoor_acc.clear();
    for (std::size_t i = 0; i < record.checkpoints.size(); ++i) {
        if (i > 0 && !(record.losses[i] < out.losses.back())) continue;
        out.checkpoints.push_back(record.checkpoints[i]);
        out.losses.push_back(record.losses[i]);
        out.clean_acc.push_back(record.clean_acc[i]);
        out.backdoor_acc.push_back(record.backdoor_acc[i]);
    }
    return out;
}

std::string loss_csv(const TrainRecord& record) {
    std::ostringstream out;
    out << "checkpoint_index,epoch,train_loss,clean_acc,backdoor_acc\n";
    for (std::size_t i = 0; i < record.checkpoints.size(); ++i) {
        out << i << ',' << record.checkpoints[i].epoch << ',' << fmt_double(record.losses[i]) << ','
            << fmt_double(record.clean_acc[i]) << ',' << fmt_double(record.backdoor_acc[i]) << '\n';
    }
    return out.str();
}

}  // namespace faithlab
