#pragma once

// Convolution compute kernels. Each kernel exists in two forms: a plain
// serial reference (`*_serial`) and the OpenMP-parallel version used by
// the layers. Both produce bit-identical results: parallelism is over
// independent output elements, each reduced in a fixed serial order.

#include <cstddef>
#include <vector>

#include "partpool/tensor.hpp"

namespace partpool::kernels {

struct ConvDims {
    std::size_t cout, cin, k;
    std::size_t stride, pad;
    std::size_t out_h(std::size_t h) const { return (h + 2 * pad - k) / stride + 1; }
    std::size_t out_w(std::size_t w) const { return (w + 2 * pad - k) / stride + 1; }
};

template <class T>
void conv2d_forward_serial(const Tensor4<T>& in, const Tensor4<T>& weight,
                           const std::vector<T>& bias, const ConvDims& d, Tensor4<T>& out) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.pad);
    for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t co = 0; co < d.cout; ++co)
            for (std::size_t oy = 0; oy < out.h; ++oy)
                for (std::size_t ox = 0; ox < out.w; ++ox) {
                    T acc = bias[co];
                    for (std::size_t ci = 0; ci < d.cin; ++ci)
                        for (std::size_t ky = 0; ky < d.k; ++ky) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * d.stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
                            for (std::size_t kx = 0; kx < d.k; ++kx) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * d.stride + kx) - pad;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
                                acc += weight.at(co, ci, ky, kx) *
                                       in.at(n, ci, static_cast<std::size_t>(iy),
                                             static_cast<std::size_t>(ix));
                            }
                        }
                    out.at(n, co, oy, ox) = acc;
                }
}

template <class T>
void conv2d_forward(const Tensor4<T>& in, const Tensor4<T>& weight,
                    const std::vector<T>& bias, const ConvDims& d, Tensor4<T>& out) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.pad);
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(in.n * d.cout * out.h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const std::size_t n = static_cast<std::size_t>(r) / (d.cout * out.h);
        const std::size_t co = (static_cast<std::size_t>(r) / out.h) % d.cout;
        const std::size_t oy = static_cast<std::size_t>(r) % out.h;
        for (std::size_t ox = 0; ox < out.w; ++ox) {
            T acc = bias[co];
            for (std::size_t ci = 0; ci < d.cin; ++ci)
                for (std::size_t ky = 0; ky < d.k; ++ky) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * d.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
                    const T* wrow = &weight.data[((co * d.cin + ci) * d.k + ky) * d.k];
                    const T* irow = &in.data[((n * in.c + ci) * in.h +
                                              static_cast<std::size_t>(iy)) * in.w];
                    for (std::size_t kx = 0; kx < d.k; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * d.stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
                        acc += wrow[kx] * irow[ix];
                    }
                }
            out.at(n, co, oy, ox) = acc;
        }
    }
}

// Gather form of the input gradient: each grad_in element sums over the
// output positions whose window covers it, so threads never collide.
template <class T>
void conv2d_backward_input(const Tensor4<T>& grad_out, const Tensor4<T>& weight,
                           const ConvDims& d, Tensor4<T>& grad_in) {
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(grad_in.n * d.cin * grad_in.h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const std::size_t n = static_cast<std::size_t>(r) / (d.cin * grad_in.h);
        const std::size_t ci = (static_cast<std::size_t>(r) / grad_in.h) % d.cin;
        const std::size_t iy = static_cast<std::size_t>(r) % grad_in.h;
        for (std::size_t ix = 0; ix < grad_in.w; ++ix) {
            T acc = T(0);
            for (std::size_t co = 0; co < d.cout; ++co)
                for (std::size_t ky = 0; ky < d.k; ++ky) {
                    // iy = oy*stride + ky - pad  =>  oy = (iy + pad - ky)/stride
                    const std::ptrdiff_t num_y =
                        static_cast<std::ptrdiff_t>(iy + d.pad) - static_cast<std::ptrdiff_t>(ky);
                    if (num_y < 0 || num_y % static_cast<std::ptrdiff_t>(d.stride)) continue;
                    const std::size_t oy = static_cast<std::size_t>(num_y) / d.stride;
                    if (oy >= grad_out.h) continue;
                    for (std::size_t kx = 0; kx < d.k; ++kx) {
                        const std::ptrdiff_t num_x =
                            static_cast<std::ptrdiff_t>(ix + d.pad) -
                            static_cast<std::ptrdiff_t>(kx);
                        if (num_x < 0 || num_x % static_cast<std::ptrdiff_t>(d.stride)) continue;
                        const std::size_t ox = static_cast<std::size_t>(num_x) / d.stride;
                        if (ox >= grad_out.w) continue;
                        acc += weight.at(co, ci, ky, kx) * grad_out.at(n, co, oy, ox);
                    }
                }
            grad_in.at(n, ci, iy, ix) += acc;
        }
    }
}

// Gather form of the weight gradient: one thread owns one (co, ci, ky, kx).
// Accumulates into grad_weight / grad_bias (callers zero explicitly).
template <class T>
void conv2d_backward_params(const Tensor4<T>& in, const Tensor4<T>& grad_out,
                            const ConvDims& d, Tensor4<T>& grad_weight,
                            std::vector<T>& grad_bias) {
    const std::ptrdiff_t wsize = static_cast<std::ptrdiff_t>(grad_weight.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t idx = 0; idx < wsize; ++idx) {
        const std::size_t kx = static_cast<std::size_t>(idx) % d.k;
        const std::size_t ky = (static_cast<std::size_t>(idx) / d.k) % d.k;
        const std::size_t ci = (static_cast<std::size_t>(idx) / (d.k * d.k)) % d.cin;
        const std::size_t co = static_cast<std::size_t>(idx) / (d.k * d.k * d.cin);
        T acc = T(0);
        for (std::size_t n = 0; n < in.n; ++n)
            for (std::size_t oy = 0; oy < grad_out.h; ++oy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                    static_cast<std::ptrdiff_t>(d.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
                for (std::size_t ox = 0; ox < grad_out.w; ++ox) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                        static_cast<std::ptrdiff_t>(d.pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
                    acc += in.at(n, ci, static_cast<std::size_t>(iy),
                                 static_cast<std::size_t>(ix)) *
                           grad_out.at(n, co, oy, ox);
                }
            }
        grad_weight.data[static_cast<std::size_t>(idx)] += acc;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(d.cout); ++co) {
        T acc = T(0);
        for (std::size_t n = 0; n < grad_out.n; ++n)
            for (std::size_t oy = 0; oy < grad_out.h; ++oy)
                for (std::size_t ox = 0; ox < grad_out.w; ++ox)
                    acc += grad_out.at(n, static_cast<std::size_t>(co), oy, ox);
        grad_bias[static_cast<std::size_t>(co)] += acc;
    }
}

} // namespace partpool::kernels
