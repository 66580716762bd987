#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"

namespace comodal {

// Dense row-major tensor of doubles. Double precision keeps finite-difference
// gradient checks meaningful and CPU training deterministic.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        v_.assign(static_cast<size_t>(compute_numel(dims_)), 0.0);
    }

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
    static Tensor full(std::vector<int> dims, double value) {
        Tensor t(std::move(dims));
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }
    static Tensor scalar(double value) {
        Tensor t(std::vector<int>{});
        t.v_.assign(1, value);
        return t;
    }
    static Tensor from_values(std::vector<int> dims, std::vector<double> values) {
        Tensor t;
        t.dims_ = std::move(dims);
        require(static_cast<int64_t>(values.size()) == compute_numel(t.dims_),
                ErrorCode::shape_mismatch, "from_values: payload does not match dims");
        t.v_ = std::move(values);
        return t;
    }

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(dims_.size()); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    std::string shape_string() const {
        std::string s = "[";
        for (size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

    static int64_t compute_numel(const std::vector<int>& dims) {
        int64_t n = 1;
        for (int d : dims) {
            require(d >= 0, ErrorCode::invalid_argument, "tensor dims must be nonnegative");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> dims_;
    std::vector<double> v_;
};

}  // namespace comodal
