#pragma once

// Loop-level parallelism for the explainer, training and attack kernels.
// Every parallel loop writes into per-index slots and is reduced in index
// order afterwards, so results never depend on the thread count.

#include <atomic>
#include <cstddef>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace faithlab {

namespace detail {
inline std::atomic<bool>& parallel_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
}  // namespace detail

inline void set_parallel(bool enabled) { detail::parallel_flag() = enabled; }
inline bool parallel_enabled() { return detail::parallel_flag(); }

inline int max_threads() {
#ifdef _OPENMP
    return parallel_enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

/// Scoped switch to serial execution (used by the reference paths and tests).
class SerialScope {
public:
    SerialScope() : previous_(parallel_enabled()) { set_parallel(false); }
    ~SerialScope() { set_parallel(previous_); }
    SerialScope(const SerialScope&) = delete;
    SerialScope& operator=(const SerialScope&) = delete;

private:
    bool previous_;
};

template <class F>
void parallel_for(std::size_t n, F&& body) {
#ifdef _OPENMP
    if (parallel_enabled() && n > 1 && !omp_in_parallel()) {
        std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < static_cast<long>(n); ++i) {
            try {
                body(static_cast<std::size_t>(i));
            } catch (...) {
#pragma omp critical(faithlab_parallel_error)
                if (!error) error = std::current_exception();
            }
        }
        if (error) std::rethrow_exception(error);
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace faithlab
