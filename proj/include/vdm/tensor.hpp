// Dense row-major double tensor (rank 1 or 2) used throughout the library.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdm {

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }
    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.rows = 1;
        t.cols = v.size();
        t.data = std::move(v);
        return t;
    }
    static Tensor column(std::vector<double> v) {
        Tensor t;
        t.rows = v.size();
        t.cols = 1;
        t.data = std::move(v);
        return t;
    }

    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::string shape_str() const {
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }
};

// C = A(m x k) * B(k x n)
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
// C = A(m x k) * B(n x k)^T
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
// C = A(k x m)^T * B(k x n)
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);

bool all_finite(const Tensor& t);

}  // namespace vdm
