#include "raise/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "raise/errors.hpp"
#include <string>

namespace ranking::kernels {
namespace {

const Ops* g_selected = nullptr;

// madd tally, live only between counting_begin/counting_end.
bool g_counting = false;
uint64_t g_madds = 0;

void counted_matmul(const double* a, const double* b, double* c,
                    size_t m, size_t k, size_t n) {
    g_madds += static_cast<uint64_t>(m) * k * n;
    scalar_ops().matmul(a, b, c, m, k, n);
}

void counted_axpy(double alpha, const double* x, double* y, size_t len) {
    g_madds += len;
    scalar_ops().axpy(alpha, x, y, len);
}

const Ops& counting_ops() {
    static const Ops table = {
        "counting",
        counted_matmul,
        scalar_ops().relu,
        scalar_ops().relu_backward,
        counted_axpy,
        scalar_ops().add,
        scalar_ops().sub,
        scalar_ops().mul,
        scalar_ops().scale,
        scalar_ops().adam_update,
    };
    return table;
}

const Ops& pick_default() {
    if (const char* env = std::getenv("RAISE_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return scalar_ops();
        if (std::strcmp(env, "avx2") == 0) {
            if (!avx2_available())
                throw ConfigError("RAISE_KERNELS=avx2 but AVX2 is unavailable");
            return avx2_ops();
        }
        throw ConfigError(std::string("unknown RAISE_KERNELS value: ") + env);
    }
    return avx2_available() ? avx2_ops() : scalar_ops();
}

}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
    return avx2_compiled() && __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const Ops& active() {
    if (g_counting) return counting_ops();
    if (!g_selected) g_selected = &pick_default();
    return *g_selected;
}

void select(const char* name) {
    if (std::strcmp(name, "scalar") == 0) {
        g_selected = &scalar_ops();
    } else if (std::strcmp(name, "avx2") == 0) {
        if (!avx2_available())
            throw ConfigError("AVX2 kernels unavailable on this host");
        g_selected = &avx2_ops();
    } else {
        throw ConfigError(std::string("unknown kernel table: ") + name);
    }
}

void counting_begin() {
    g_madds = 0;
    g_counting = true;
}

uint64_t counting_end() {
    g_counting = false;
    return g_madds;
}

uint64_t counting_value() { return g_madds; }

bool counting_enabled() { return g_counting; }

}  // namespace ranking::kernels
