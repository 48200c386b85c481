#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "partpool/errors.hpp"
#include "partpool/rng.hpp"

namespace partpool {

/// Dense rank-4 array in (batch, channel, row, col) order, row-major.
/// Instantiated with float for training and double for gradient checks.
template <class T>
struct Tensor4 {
    using value_type = T;

    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }

    T& at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) {
        return data[((in * c + ic) * h + ih) * w + iw];
    }
    T at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const {
        return data[((in * c + ic) * h + ih) * w + iw];
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void require_finite(const char* where) const {
        if (!finite()) throw NumericError(std::string("non-finite values in ") + where);
    }

    template <class U>
    Tensor4<U> cast() const {
        Tensor4<U> out(n, c, h, w);
        for (std::size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

/// Centered uniform init with variance 2/fan_in, which keeps activation
/// magnitudes stable through stacked ReLU layers.
template <class T>
void init_uniform_fanin(Tensor4<T>& t, std::size_t fan_in, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-s, s));
}

} // namespace partpool
