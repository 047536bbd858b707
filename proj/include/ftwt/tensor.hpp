#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ftwt/errors.hpp"

namespace ftwt {

// Dense row-major tensor, the sole numeric carrier. Shapes are explicit;
// NCHW for feature maps, [out,in,k,k] for conv weights, [N,C] for vectors.
// T is float in production; double exists only for gradient checking.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), T(0));
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ConfigError("tensor dimension must be non-negative");
            n *= d;
        }
        return n;
    }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int> s, T v) {
        TensorT t(std::move(s));
        t.fill(v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW element access.
    T& at(int n, int c, int h, int w) {
        return data[static_cast<size_t>(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at(int n, int c, int h, int w) const {
        return data[static_cast<size_t>(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    // [N,C] element access.
    T& at(int n, int c) { return data[static_cast<size_t>(int64_t(n) * shape[1] + c)]; }
    const T& at(int n, int c) const { return data[static_cast<size_t>(int64_t(n) * shape[1] + c)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void check_finite(const char* what) const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v)))
                throw ConfigError(std::string("non-finite value in ") + what);
        }
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

} // namespace ftwt
