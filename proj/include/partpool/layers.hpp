#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "partpool/errors.hpp"
#include "partpool/kernels.hpp"
#include "partpool/tensor.hpp"

namespace partpool {

/// A named parameter tensor with its accumulated gradient and the
/// parameter-group label used by the staged training schedule.
template <class T>
struct ParamView {
    std::string name;
    std::string group;
    Tensor4<T>* value;
    Tensor4<T>* grad;
};

/// 2D cross-correlation. Weights (Cout, Cin, k, k), bias (Cout,1,1,1).
template <class T>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(std::size_t cout, std::size_t cin, std::size_t k, std::size_t stride,
           std::size_t pad, Rng& rng)
        : dims_{cout, cin, k, stride, pad},
          weight_(cout, cin, k, k), bias_(cout, 1, 1, 1),
          grad_weight_(cout, cin, k, k), grad_bias_(cout, 1, 1, 1) {
        if (k % 2 == 0) throw ConfigError("conv kernel size must be odd");
        if (stride < 1) throw ConfigError("conv stride must be >= 1");
        init_uniform_fanin(weight_, cin * k * k, rng);
        init_uniform_fanin(bias_, cin * k * k, rng);
    }

    Tensor4<T> forward(const Tensor4<T>& in) {
        if (in.c != dims_.cin)
            throw ConfigError("conv2d: input has " + std::to_string(in.c) +
                              " channels, expected " + std::to_string(dims_.cin));
        if (in.h + 2 * dims_.pad < dims_.k || in.w + 2 * dims_.pad < dims_.k)
            throw ConfigError("conv2d: input smaller than kernel");
        cached_in_ = in;
        has_forward_ = true;
        Tensor4<T> out(in.n, dims_.cout, dims_.out_h(in.h), dims_.out_w(in.w));
        kernels::conv2d_forward(in, weight_, bias_.data, dims_, out);
        out.require_finite("conv2d forward");
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("conv2d backward before forward");
        Tensor4<T> grad_in(cached_in_.n, cached_in_.c, cached_in_.h, cached_in_.w);
        kernels::conv2d_backward_input(grad_out, weight_, dims_, grad_in);
        kernels::conv2d_backward_params(cached_in_, grad_out, dims_, grad_weight_,
                                        grad_bias_.data);
        grad_in.require_finite("conv2d backward");
        return grad_in;
    }

    void zero_grad() { grad_weight_.zero(); grad_bias_.zero(); }

    void params(const std::string& prefix, const std::string& group,
                std::vector<ParamView<T>>& out) {
        out.push_back({prefix + ".weight", group, &weight_, &grad_weight_});
        out.push_back({prefix + ".bias", group, &bias_, &grad_bias_});
    }

    Tensor4<T>& weight() { return weight_; }
    Tensor4<T>& bias() { return bias_; }

  private:
    kernels::ConvDims dims_{};
    Tensor4<T> weight_, bias_;
    Tensor4<T> grad_weight_, grad_bias_;
    Tensor4<T> cached_in_;
    bool has_forward_ = false;
};

/// 2x2 max pooling, stride 2. Ties go to the lowest row-major index.
template <class T>
class MaxPool2x2 {
  public:
    Tensor4<T> forward(const Tensor4<T>& in) {
        if (in.h % 2 || in.w % 2)
            throw ConfigError("maxpool2x2: spatial dims must be even, got " + in.shape_str());
        cached_shape_ = {in.n, in.c, in.h, in.w};
        Tensor4<T> out(in.n, in.c, in.h / 2, in.w / 2);
        argmax_.assign(out.size(), 0);
        const std::ptrdiff_t planes = static_cast<std::ptrdiff_t>(in.n * in.c);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t p = 0; p < planes; ++p) {
            const std::size_t n = static_cast<std::size_t>(p) / in.c;
            const std::size_t c = static_cast<std::size_t>(p) % in.c;
            for (std::size_t oy = 0; oy < out.h; ++oy)
                for (std::size_t ox = 0; ox < out.w; ++ox) {
                    T best = in.at(n, c, 2 * oy, 2 * ox);
                    std::size_t best_idx = (2 * oy) * in.w + 2 * ox;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const T v = in.at(n, c, 2 * oy + dy, 2 * ox + dx);
                            if (v > best) {
                                best = v;
                                best_idx = (2 * oy + dy) * in.w + 2 * ox + dx;
                            }
                        }
                    out.at(n, c, oy, ox) = best;
                    argmax_[((n * in.c + c) * out.h + oy) * out.w + ox] = best_idx;
                }
        }
        has_forward_ = true;
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("maxpool backward before forward");
        Tensor4<T> grad_in(cached_shape_[0], cached_shape_[1], cached_shape_[2],
                           cached_shape_[3]);
        for (std::size_t n = 0; n < grad_out.n; ++n)
            for (std::size_t c = 0; c < grad_out.c; ++c)
                for (std::size_t oy = 0; oy < grad_out.h; ++oy)
                    for (std::size_t ox = 0; ox < grad_out.w; ++ox) {
                        const std::size_t idx =
                            argmax_[((n * grad_out.c + c) * grad_out.h + oy) * grad_out.w + ox];
                        grad_in.at(n, c, idx / cached_shape_[3], idx % cached_shape_[3]) +=
                            grad_out.at(n, c, oy, ox);
                    }
        return grad_in;
    }

  private:
    std::array<std::size_t, 4> cached_shape_{};
    std::vector<std::size_t> argmax_;
    bool has_forward_ = false;
};

template <class T>
class ReLU {
  public:
    Tensor4<T> forward(const Tensor4<T>& in) {
        mask_.assign(in.size(), false);
        Tensor4<T> out = in;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in.data[i] > T(0)) {
                mask_[i] = true;
            } else {
                out.data[i] = T(0);
            }
        }
        has_forward_ = true;
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("relu backward before forward");
        Tensor4<T> grad_in = grad_out;
        for (std::size_t i = 0; i < grad_in.size(); ++i)
            if (!mask_[i]) grad_in.data[i] = T(0);
        return grad_in;
    }

  private:
    std::vector<bool> mask_;
    bool has_forward_ = false;
};

template <class T>
T sigmoid_scalar(T z) {
    if (z >= T(0)) {
        const T e = std::exp(-z);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <class T>
class Sigmoid {
  public:
    Tensor4<T> forward(const Tensor4<T>& in) {
        in.require_finite("sigmoid input");
        out_ = in;
        for (T& v : out_.data) v = sigmoid_scalar(v);
        has_forward_ = true;
        return out_;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("sigmoid backward before forward");
        Tensor4<T> grad_in = grad_out;
        for (std::size_t i = 0; i < grad_in.size(); ++i)
            grad_in.data[i] *= out_.data[i] * (T(1) - out_.data[i]);
        return grad_in;
    }

  private:
    Tensor4<T> out_;
    bool has_forward_ = false;
};

/// Fully connected layer over flattened input (N, F, 1, 1) -> (N, O, 1, 1).
template <class T>
class Affine {
  public:
    Affine() = default;
    Affine(std::size_t out_dim, std::size_t in_dim, Rng& rng)
        : weight_(out_dim, in_dim, 1, 1), bias_(out_dim, 1, 1, 1),
          grad_weight_(out_dim, in_dim, 1, 1), grad_bias_(out_dim, 1, 1, 1) {
        init_uniform_fanin(weight_, in_dim, rng);
        init_uniform_fanin(bias_, in_dim, rng);
    }

    Tensor4<T> forward(const Tensor4<T>& in) {
        const std::size_t f = in.c * in.h * in.w;
        if (f != weight_.c)
            throw ConfigError("affine: input dim " + std::to_string(f) + " != " +
                              std::to_string(weight_.c));
        cached_in_ = in;
        has_forward_ = true;
        Tensor4<T> out(in.n, weight_.n, 1, 1);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(in.n); ++n)
            for (std::size_t o = 0; o < weight_.n; ++o) {
                T acc = bias_.data[o];
                const T* wrow = &weight_.data[o * f];
                const T* xrow = &in.data[static_cast<std::size_t>(n) * f];
                for (std::size_t i = 0; i < f; ++i) acc += wrow[i] * xrow[i];
                out.at(static_cast<std::size_t>(n), o, 0, 0) = acc;
            }
        out.require_finite("affine forward");
        return out;
    }

    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (!has_forward_) throw UsageError("affine backward before forward");
        const std::size_t f = weight_.c;
        Tensor4<T> grad_in(cached_in_.n, cached_in_.c, cached_in_.h, cached_in_.w);
        for (std::size_t n = 0; n < cached_in_.n; ++n) {
            const T* xrow = &cached_in_.data[n * f];
            for (std::size_t o = 0; o < weight_.n; ++o) {
                const T g = grad_out.at(n, o, 0, 0);
                grad_bias_.data[o] += g;
                T* gwrow = &grad_weight_.data[o * f];
                const T* wrow = &weight_.data[o * f];
                T* girow = &grad_in.data[n * f];
                for (std::size_t i = 0; i < f; ++i) {
                    gwrow[i] += g * xrow[i];
                    girow[i] += g * wrow[i];
                }
            }
        }
        return grad_in;
    }

    void zero_grad() { grad_weight_.zero(); grad_bias_.zero(); }

    void params(const std::string& prefix, const std::string& group,
                std::vector<ParamView<T>>& out) {
        out.push_back({prefix + ".weight", group, &weight_, &grad_weight_});
        out.push_back({prefix + ".bias", group, &bias_, &grad_bias_});
    }

    Tensor4<T>& weight() { return weight_; }
    Tensor4<T>& bias() { return bias_; }

  private:
    Tensor4<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor4<T> cached_in_;
    bool has_forward_ = false;
};

/// Row-wise softmax with max subtraction, (N, K, 1, 1) logits.
template <class T>
Tensor4<T> softmax_forward(const Tensor4<T>& logits) {
    logits.require_finite("softmax input");
    Tensor4<T> out = logits;
    for (std::size_t n = 0; n < logits.n; ++n) {
        T mx = logits.at(n, 0, 0, 0);
        for (std::size_t k = 1; k < logits.c; ++k) mx = std::max(mx, logits.at(n, k, 0, 0));
        T sum = T(0);
        for (std::size_t k = 0; k < logits.c; ++k) {
            const T e = std::exp(logits.at(n, k, 0, 0) - mx);
            out.at(n, k, 0, 0) = e;
            sum += e;
        }
        for (std::size_t k = 0; k < logits.c; ++k) out.at(n, k, 0, 0) /= sum;
    }
    return out;
}

/// Mean softmax cross-entropy over the batch; grad w.r.t. logits fused.
template <class T>
std::pair<T, Tensor4<T>> softmax_cross_entropy(const Tensor4<T>& logits,
                                               const std::vector<std::size_t>& labels) {
    if (labels.size() != logits.n) throw UsageError("label count != batch size");
    for (std::size_t lbl : labels)
        if (lbl >= logits.c) throw DataError("class label out of range");
    const Tensor4<T> probs = softmax_forward(logits);
    Tensor4<T> grad = probs;
    T loss = T(0);
    for (std::size_t n = 0; n < logits.n; ++n) {
        const T p = std::max(probs.at(n, labels[n], 0, 0), std::numeric_limits<T>::min());
        loss -= std::log(p);
        grad.at(n, labels[n], 0, 0) -= T(1);
    }
    const T inv_n = T(1) / static_cast<T>(logits.n);
    loss *= inv_n;
    for (T& v : grad.data) v *= inv_n;
    return {loss, grad};
}

/// p <- p - lr * g for every parameter whose group is trainable.
template <class T>
void sgd_step(std::vector<ParamView<T>>& params,
              const std::vector<std::string>& trainable_groups, T lr) {
    if (lr < T(0)) throw UsageError("sgd_step: learning rate must be non-negative");
    for (auto& p : params) {
        if (std::find(trainable_groups.begin(), trainable_groups.end(), p.group) ==
            trainable_groups.end())
            continue;
        if (!p.value->same_shape(*p.grad))
            throw UsageError("sgd_step: shape mismatch for " + p.name);
        for (std::size_t i = 0; i < p.value->size(); ++i)
            p.value->data[i] -= lr * p.grad->data[i];
    }
}

} // namespace partpool
