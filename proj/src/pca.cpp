#include "typocirc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace typocirc {

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n, int max_sweeps) {
    if (a.size() != n * n) throw Error("symmetric_eigenvalues: matrix is not n x n");
    auto A = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };

    double total = 0.0;
    for (double v : a) total += v * v;
    const double tol = 1e-24 * std::max(total, 1e-300);

    bool converged = n <= 1;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        if (off <= tol) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (apq == 0.0) continue;
                const double app = A(p, p), aqq = A(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                A(p, q) = 0.0;
                A(q, p) = 0.0;
            }
        }
    }
    if (!converged) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        if (off > tol) throw Error("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) + " sweeps");
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = A(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<>());
    return eig;
}

std::vector<double> pca_spectrum(const Tensor& x) {
    if (x.rank() != 2) throw Error("pca_spectrum expects a 2-D [n, d] tensor");
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    if (n < 2) throw Error("pca_spectrum needs at least 2 samples, got " + std::to_string(n));

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x.data[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(n);

    std::vector<double> centred(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centred[i * d + j] = x.data[i * d + j] - mean[j];

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = &centred[i * d];
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p; q < d; ++q) cov[p * d + q] += r[p] * r[q];
    }
    for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = p; q < d; ++q) {
            cov[p * d + q] /= static_cast<double>(n - 1);
            cov[q * d + p] = cov[p * d + q];
        }

    auto eig = symmetric_eigenvalues(std::move(cov), d);
    for (auto& e : eig) {
        if (e < 0.0) {
            if (e < -1e-8) throw Error("covariance has a negative eigenvalue " + std::to_string(e));
            e = 0.0;
        }
    }
    return eig;
}

}  // namespace typocirc
