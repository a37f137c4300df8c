#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace typocirc {

/// Error raised by every module for invalid input, I/O failure or numeric
/// breakdown. The message is a single line suitable for a CLI diagnostic.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major float32 tensor. `shape` may be empty for a scalar.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, float fill = 0.0f);
    Tensor(std::vector<std::int64_t> shape, std::vector<float> data);

    static Tensor scalar(float value);

    std::int64_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::int64_t dim(std::size_t i) const;
    bool empty() const { return data.empty(); }

    // 2-D helpers; callers are expected to have checked rank.
    std::int64_t rows() const { return shape.at(0); }
    std::int64_t cols() const { return shape.at(1); }
    float& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    float at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    std::span<float> row(std::int64_t r);
    std::span<const float> row(std::int64_t r) const;
};

std::int64_t shape_numel(std::span<const std::int64_t> shape);
std::string shape_str(std::span<const std::int64_t> shape);

/// Byte-for-byte equality of shape and data.
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Throws Error naming `what` and the first offending flat index.
void check_finite(const Tensor& t, std::string_view what);
void check_finite(std::span<const float> v, std::string_view what);

// ---- kernels -------------------------------------------------------------
// All reductions accumulate in double. Every kernel rejects non-finite output.

/// Double-accumulated inner product of two float arrays.
inline double dot(const float* a, const float* b, std::size_t n) {
    // Four fixed partial sums: same result on every run, better pipelining.
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * b[i];
        s1 += static_cast<double>(a[i + 1]) * b[i + 1];
        s2 += static_cast<double>(a[i + 2]) * b[i + 2];
        s3 += static_cast<double>(a[i + 3]) * b[i + 3];
    }
    for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// a[m,k] x b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[m,k] x w[n,k]^T (+ bias[n]); weights use the [out, in] layout.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Row-wise softmax, stabilised by the row max.
Tensor softmax_rows(const Tensor& m);
void softmax_inplace(std::span<float> row, std::int64_t row_index = 0);

/// Normalises each row to zero mean / unit variance then applies gamma, beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// Exact erf GELU.
float gelu(float x);
Tensor gelu(const Tensor& x);

std::vector<float> l2_normalize(std::span<const float> v);
Tensor l2_normalize_rows(const Tensor& m);

/// Indices of the k largest values, descending; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const float> values, std::size_t k);

/// Eigenvalues of the covariance of mean-centred rows of x[n, d], descending.
/// Values in (-1e-8, 0) are clamped to 0; anything more negative is an error.
std::vector<double> pca_spectrum(const Tensor& x);

/// Eigenvalues of a symmetric n x n matrix (row-major) by cyclic Jacobi,
/// descending.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n,
                                          int max_sweeps = 100);

}  // namespace typocirc
