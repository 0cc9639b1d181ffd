#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ncdlab/errors.hpp"
#include "ncdlab/rng.hpp"

namespace ncdlab {

/// Dense row-major n-d array of reals. The default scalar type for training
/// is float; the grad-check harness instantiates the same code with double.
template <typename T = float>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // same size as data when requires_grad

    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T(0)) : dims(std::move(shape)) {
        validate_dims();
        data.assign(static_cast<std::size_t>(numel()), fill);
    }

    Tensor(std::vector<int> shape, std::vector<T> values)
        : dims(std::move(shape)), data(std::move(values)) {
        validate_dims();
        if (static_cast<std::int64_t>(data.size()) != numel())
            throw shape_error("tensor data length does not match dims product");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor identity(int n) {
        Tensor t({n, n});
        for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * n + i] = T(1);
        return t;
    }

    static Tensor uniform(std::vector<int> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor gaussian(std::vector<int> shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : dims) n *= d;
        return n;
    }

    int rank() const { return static_cast<int>(dims.size()); }

    // unchecked: callers validate rank() == 2 before using these
    int rows() const { return dims[0]; }
    int cols() const { return dims[1]; }

    T& at(int i) { return data[static_cast<std::size_t>(i)]; }
    T at(int i) const { return data[static_cast<std::size_t>(i)]; }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * dims[1] + c]; }
    T at(int r, int c) const { return data[static_cast<std::size_t>(r) * dims[1] + c]; }

    bool same_shape(const Tensor& other) const { return dims == other.dims; }

    bool is_scalar() const { return numel() == 1; }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on)
            grad.assign(data.size(), T(0));
        else
            grad.clear();
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), T(0));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.dims = dims;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
        os << ']';
        return os.str();
    }

private:
    void validate_dims() const {
        if (dims.empty()) throw shape_error("tensor rank must be >= 1");
        for (int d : dims)
            if (d <= 0) throw shape_error("tensor dims must be positive");
    }

};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ncdlab
