#include "scseg/kernels.hpp"

#include <atomic>

#include "scseg/errors.hpp"

namespace scseg::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double* y, double a, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void vadd_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul_scalar(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

double vsum_scalar(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

double vmax_scalar(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

const Table scalar_table = {
    "scalar",    dot_scalar,  axpy_scalar, scale_scalar,
    vadd_scalar, vsub_scalar, vmul_scalar, vsum_scalar,
    vmax_scalar,
};

std::atomic<const Table*> active_table{nullptr};
std::atomic<Lane> active_lane_id{Lane::scalar};

} // namespace

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
const Table* avx2_table_ptr(); // defined in kernels_avx2.cpp
#endif
#if defined(__aarch64__)
const Table* neon_table_ptr(); // defined in kernels_neon.cpp
#endif

bool available(Lane lane) {
    switch (lane) {
    case Lane::scalar:
        return true;
    case Lane::avx2:
#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
        return false;
#endif
    case Lane::neon:
#if defined(__aarch64__)
        return true; // advanced SIMD is baseline on aarch64
#else
        return false;
#endif
    }
    return false;
}

const Table& table(Lane lane) {
    if (!available(lane))
        throw ConfigError(std::string("kernel lane unavailable on this machine: ") +
                          lane_name(lane));
    switch (lane) {
    case Lane::scalar:
        return scalar_table;
#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
    case Lane::avx2:
        return *avx2_table_ptr();
#endif
#if defined(__aarch64__)
    case Lane::neon:
        return *neon_table_ptr();
#endif
    default:
        throw ConfigError(std::string("kernel lane not compiled in: ") + lane_name(lane));
    }
}

Lane preferred() {
    if (available(Lane::avx2)) return Lane::avx2;
    if (available(Lane::neon)) return Lane::neon;
    return Lane::scalar;
}

void select(Lane lane) {
    const Table& t = table(lane); // validates availability
    active_table.store(&t, std::memory_order_relaxed);
    active_lane_id.store(lane, std::memory_order_relaxed);
}

Lane active_lane() {
    if (active_table.load(std::memory_order_relaxed) == nullptr) select(preferred());
    return active_lane_id.load(std::memory_order_relaxed);
}

const Table& active() {
    const Table* t = active_table.load(std::memory_order_relaxed);
    if (t == nullptr) {
        select(preferred());
        t = active_table.load(std::memory_order_relaxed);
    }
    return *t;
}

std::vector<Lane> available_lanes() {
    std::vector<Lane> lanes{Lane::scalar};
    if (available(Lane::avx2)) lanes.push_back(Lane::avx2);
    if (available(Lane::neon)) lanes.push_back(Lane::neon);
    return lanes;
}

const char* lane_name(Lane lane) {
    switch (lane) {
    case Lane::scalar: return "scalar";
    case Lane::avx2: return "avx2";
    case Lane::neon: return "neon";
    }
    return "?";
}

Lane parse_lane(const std::string& name) {
    if (name == "auto") return preferred();
    if (name == "scalar") return Lane::scalar;
    if (name == "avx2") return Lane::avx2;
    if (name == "neon") return Lane::neon;
    throw ConfigError("unknown kernel lane: " + name);
}

} // namespace scseg::kernels
