// Times the OpenMP kernels against the same code forced serial and, where one
// exists, against the straight-loop reference implementation.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "faithlab/attack.hpp"
#include "faithlab/data.hpp"
#include "faithlab/explain.hpp"
#include "faithlab/parallel.hpp"
#include "faithlab/reference.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/train.hpp"

using namespace faithlab;

namespace {

// Best of `repeat` wall-clock runs, in milliseconds.
double time_ms(std::size_t repeat, const std::function<void()>& f) {
    double best = 1e300;
    for (std::size_t r = 0; r < repeat; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

struct Row {
    std::string name;
    std::function<Tensor()> kernel;
    std::function<Tensor()> reference;  // may be empty
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"faithlab kernel benchmark: OpenMP vs serial vs reference"};
    std::size_t repeat = 3, size = 16;
    bool quick = false;
    app.add_option("--repeat", repeat, "timed runs per kernel (best is reported)");
    app.add_option("--size", size, "image side length");
    app.add_flag("--quick", quick, "tiny workloads, for smoke testing");
    CLI11_PARSE(app, argc, argv);
    if (quick) {
        repeat = 1;
        size = 8;
    }

    const auto data = gen_synth_images(2, quick ? 20 : 200, size, size, 1, 1);
    NetworkSpec spec;
    spec.input_shape = {1, size, size};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::conv2d(1, 8, 3, 1, 1), LayerSpec::softplus(10.0), LayerSpec::maxpool(2, 2),
                   LayerSpec::flatten(),           LayerSpec::dense(8 * (size / 2) * (size / 2), 32),
                   LayerSpec::softplus(10.0),      LayerSpec::dense(32, 2)};
    const Checkpoint model = init_model(spec, 7);
    const Tensor& x = data.inputs[0];
    const Tensor base(x.shape(), 0.0);
    const std::size_t steps = quick ? 8 : 64, samples = quick ? 50 : 2000;
    const auto groups = grid_segments(spatial_layout(x.shape()), quick ? 8 : 64);
    AttackConfig acfg;
    acfg.target_map = corner_square_target(x.shape(), 2);
    const auto p0 = probabilities(model, x);
    OptimConfig opt;
    opt.epochs = 1;

    const std::vector<Row> rows = {
        {"integrated_gradients", [&] { return integrated_gradients(model, x, base, steps, 0).scores; },
         [&] { return reference::integrated_gradients(model, x, base, steps, 0, Wrt::probability); }},
        {"occlusion 3x3", [&] { return occlusion(model, x, 3, 1, 0.0, 0).scores; },
         [&] { return reference::occlusion(model, x, 3, 1, 0.0, 0, Wrt::probability); }},
        {"smoothgrad", [&] { return smoothgrad(model, x, 0.1, quick ? 5 : 50, 0, 3).scores; }, {}},
        {"kernel_shap", [&] { return kernel_shap(model, x, base, groups, samples, 0, 3, false).scores; }, {}},
        {"attack fd gradient",
         [&] { return objective_gradient_fd(model, p0, x, 0, AttackSource::saliency, acfg); }, {}},
        {"train 1 epoch", [&] { return train(spec, data, opt, {1, IntervalUnit::epochs, 0}).final_model.params[0]; },
         {}},
    };

    std::printf("threads: %d, image %zux%zu, best of %zu\n", max_threads(), size, size, repeat);
    std::printf("%-22s %12s %12s %12s %9s %10s\n", "kernel", "openmp ms", "serial ms", "reference ms", "speedup",
                "identical");
    bool all_identical = true;
    for (const auto& row : rows) {
        Tensor par, ser;
        const double t_par = time_ms(repeat, [&] { par = row.kernel(); });
        double t_ser = 0.0;
        {
            SerialScope serial;
            t_ser = time_ms(repeat, [&] { ser = row.kernel(); });
        }
        std::string t_ref = "-";
        if (row.reference) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", time_ms(repeat, [&] { row.reference(); }));
            t_ref = buf;
        }
        const bool same = par == ser;
        all_identical = all_identical && same;
        std::printf("%-22s %12.2f %12.2f %12s %8.2fx %10s\n", row.name.c_str(), t_par, t_ser, t_ref.c_str(),
                    t_ser / t_par, same ? "yes" : "NO");
    }
    return all_identical ? 0 : 1;
}
