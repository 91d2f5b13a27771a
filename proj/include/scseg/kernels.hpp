#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace scseg::kernels {

enum class Lane { scalar, avx2, neon };

/// Flat table of the hot inner-loop primitives. Every higher-level operation
/// (matmul flavors, softmax rows, convolution, resize) is built on these, so
/// swapping the table swaps the vector lane for the whole library.
///
/// Within one lane the accumulation order of each primitive is fixed; results
/// are bit-reproducible run to run. Different lanes may differ by rounding.
struct Table {
    const char* name;
    // sum_i a[i]*b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double* y, double a, const double* x, std::size_t n);
    // x[i] *= a
    void (*scale)(double* x, double a, std::size_t n);
    // out[i] = a[i] + b[i]
    void (*vadd)(double* out, const double* a, const double* b, std::size_t n);
    // out[i] = a[i] - b[i]
    void (*vsub)(double* out, const double* a, const double* b, std::size_t n);
    // out[i] = a[i] * b[i]
    void (*vmul)(double* out, const double* a, const double* b, std::size_t n);
    // sum_i x[i]
    double (*vsum)(const double* x, std::size_t n);
    // max_i x[i], n >= 1
    double (*vmax)(const double* x, std::size_t n);
};

/// True if the lane can run on this machine (scalar always can).
bool available(Lane lane);

/// Table for a specific lane; throws ConfigError if unavailable.
const Table& table(Lane lane);

/// Best lane the current CPU supports.
Lane preferred();

/// Set / query the process-wide active lane. select() throws ConfigError for
/// unavailable lanes. The default active lane is preferred().
void select(Lane lane);
Lane active_lane();
const Table& active();

/// Lanes compiled into this binary that the CPU can run, scalar first.
std::vector<Lane> available_lanes();

const char* lane_name(Lane lane);

/// Parse "scalar" / "avx2" / "neon" / "auto" (auto = preferred()).
Lane parse_lane(const std::string& name);

} // namespace scseg::kernels
