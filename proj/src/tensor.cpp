#include "typocirc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace typocirc {

std::int64_t shape_numel(std::span<const std::int64_t> shape) {
    std::int64_t n = 1;
    for (auto s : shape) {
        if (s < 0) throw Error("negative dimension in shape " + shape_str(shape));
        n *= s;
    }
    return n;
}

std::string shape_str(std::span<const std::int64_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> s, float fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw Error("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
}

Tensor Tensor::scalar(float value) { return Tensor({}, std::vector<float>{value}); }

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

std::int64_t Tensor::dim(std::size_t i) const {
    if (i >= shape.size()) throw Error("dimension index out of range for shape " + shape_str(shape));
    return shape[i];
}

std::span<float> Tensor::row(std::int64_t r) {
    const auto c = static_cast<std::size_t>(shape.at(1));
    return {data.data() + static_cast<std::size_t>(r) * c, c};
}

std::span<const float> Tensor::row(std::int64_t r) const {
    const auto c = static_cast<std::size_t>(shape.at(1));
    return {data.data() + static_cast<std::size_t>(r) * c, c};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data.size() == b.data.size() &&
           (a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

void check_finite(std::span<const float> v, std::string_view what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw Error("non-finite value in " + std::string(what) + " at flat index " + std::to_string(i));
    }
}

void check_finite(const Tensor& t, std::string_view what) { check_finite(std::span<const float>(t.data), what); }

namespace {

void require_rank2(const Tensor& t, std::string_view what) {
    if (t.rank() != 2) throw Error(std::string(what) + " must be 2-D, got shape " + shape_str(t.shape));
}

}  // namespace


Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul lhs");
    require_rank2(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw Error("matmul shape mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const auto m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            const float* brow = b.row(p).data();
            for (std::int64_t j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += aip * brow[j];
        }
        auto orow = out.row(i);
        for (std::int64_t j = 0; j < n; ++j) orow[static_cast<std::size_t>(j)] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
    }
    check_finite(out, "matmul output");
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w) {
    require_rank2(x, "linear input");
    require_rank2(w, "linear weight");
    if (x.cols() != w.cols())
        throw Error("linear shape mismatch: input " + shape_str(x.shape) + ", weight " + shape_str(w.shape));
    const auto m = x.rows(), n = w.rows();
    const auto k = static_cast<std::size_t>(x.cols());
    Tensor out({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const float* xr = x.row(i).data();
        for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = static_cast<float>(dot(xr, w.row(j).data(), k));
    }
    check_finite(out, "linear output");
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank2(x, "linear input");
    require_rank2(w, "linear weight");
    if (x.cols() != w.cols())
        throw Error("linear shape mismatch: input " + shape_str(x.shape) + ", weight " + shape_str(w.shape));
    if (bias.numel() != w.rows())
        throw Error("linear bias length " + std::to_string(bias.numel()) + " does not match " +
                    std::to_string(w.rows()) + " outputs");
    const auto m = x.rows(), n = w.rows();
    const auto k = static_cast<std::size_t>(x.cols());
    Tensor out({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const float* xr = x.row(i).data();
        for (std::int64_t j = 0; j < n; ++j)
            out.at(i, j) = static_cast<float>(dot(xr, w.row(j).data(), k) + bias.data[static_cast<std::size_t>(j)]);
    }
    check_finite(out, "linear output");
    return out;
}

void softmax_inplace(std::span<float> row, std::int64_t row_index) {
    if (row.empty()) throw Error("softmax of an empty row");
    float mx = row[0];
    for (float v : row) {
        if (!std::isfinite(v)) throw Error("non-finite softmax input in row " + std::to_string(row_index));
        mx = std::max(mx, v);
    }
    double sum = 0.0;
    std::vector<double> e(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        e[j] = std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
        sum += e[j];
    }
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<float>(e[j] / sum);
}

Tensor softmax_rows(const Tensor& m) {
    require_rank2(m, "softmax input");
    if (m.cols() < 1) throw Error("softmax requires at least one column");
    Tensor out = m;
    for (std::int64_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i), i);
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    require_rank2(x, "layer_norm input");
    const auto d = x.cols();
    if (gamma.numel() != d || beta.numel() != d)
        throw Error("layer_norm affine parameters do not match width " + std::to_string(d));
    Tensor out(x.shape);
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        auto xr = x.row(i);
        double mean = 0.0;
        for (float v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (float v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        auto orow = out.row(i);
        for (std::int64_t j = 0; j < d; ++j) {
            const auto u = static_cast<std::size_t>(j);
            orow[u] = static_cast<float>((xr[u] - mean) * inv * gamma.data[u] + beta.data[u]);
        }
    }
    check_finite(out, "layer_norm output");
    return out;
}

float gelu(float x) {
    const double v = x;
    return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data) v = gelu(v);
    check_finite(out, "gelu output");
    return out;
}

std::vector<float> l2_normalize(std::span<const float> v) {
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    if (!(ss > 0.0) || !std::isfinite(ss)) throw Error("cannot L2-normalise a zero or non-finite vector");
    const double inv = 1.0 / std::sqrt(ss);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

Tensor l2_normalize_rows(const Tensor& m) {
    require_rank2(m, "l2_normalize_rows input");
    Tensor out = m;
    for (std::int64_t i = 0; i < m.rows(); ++i) {
        auto n = l2_normalize(m.row(i));
        std::copy(n.begin(), n.end(), out.row(i).begin());
    }
    return out;
}

std::vector<std::size_t> top_k(std::span<const float> values, std::size_t k) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return values[a] > values[b] || (values[a] == values[b] && a < b);
                      });
    idx.resize(k);
    return idx;
}

}  // namespace typocirc
