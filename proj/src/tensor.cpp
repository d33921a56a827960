#include "vdm/tensor.hpp"

#include <cmath>

namespace vdm {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul shape mismatch " + a.shape_str() + " * " + b.shape_str());
    out = Tensor(a.rows, b.cols);
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* crow = &out.data[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[p * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt shape mismatch " + a.shape_str() + " * " + b.shape_str() + "^T");
    out = Tensor(a.rows, b.rows);
    const std::size_t m = a.rows, k = a.cols, n = b.rows;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &a.data[i * k];
        double* crow = &out.data[i * n];
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = &b.data[j * k];
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn shape mismatch " + a.shape_str() + "^T * " + b.shape_str());
    out = Tensor(a.cols, b.cols);
    const std::size_t m = a.cols, k = a.rows, n = b.cols;
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = &a.data[p * m];
        const double* brow = &b.data[p * n];
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = &out.data[i * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace vdm
