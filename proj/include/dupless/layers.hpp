#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/tensor.hpp"

namespace dupless {

// Single-image layer primitives on [C,H,W] tensors. Each forward has a
// matching backward taking the same inputs plus the upstream gradient, so any
// layer can be checked against finite differences in isolation. Scalar type
// is templated: float for production, double for the check harness.

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

// ------------------------------------------------------------- convolution
//
// 3x3 kernel, stride 1, zero padding 1: spatial size is preserved. Lowered
// to one GEMM per image: weights [O,C,3,3] flatten row-major to O x (9C),
// im2col produces (9C) x (HW).

namespace detail {

template <typename T>
inline void im2col_3x3(const Tensor<T>& input, std::vector<T>& cols) {
    const std::size_t C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const std::size_t Q = H * W;
    cols.assign(C * 9 * Q, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* dst = cols.data() + ((c * 3 + ky) * 3 + kx) * Q;
                const std::size_t x0 = (kx == 0) ? 1 : 0;
                const std::size_t x1 = (kx == 2) ? W - 1 : W;
                for (std::size_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t in_y =
                        static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (in_y < 0 || in_y >= static_cast<std::ptrdiff_t>(H)) continue;
                    const T* src = input.data.data() +
                                   (c * H + static_cast<std::size_t>(in_y)) * W + (x0 + kx - 1);
                    std::memcpy(dst + y * W + x0, src, (x1 - x0) * sizeof(T));
                }
            }
        }
    }
}

/// Transpose of im2col_3x3: scatter-adds column gradients back onto the image.
template <typename T>
inline void col2im_3x3(const std::vector<T>& cols, Tensor<T>& dinput) {
    const std::size_t C = dinput.shape[0], H = dinput.shape[1], W = dinput.shape[2];
    const std::size_t Q = H * W;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* src = cols.data() + ((c * 3 + ky) * 3 + kx) * Q;
                const std::size_t x0 = (kx == 0) ? 1 : 0;
                const std::size_t x1 = (kx == 2) ? W - 1 : W;
                for (std::size_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t in_y =
                        static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (in_y < 0 || in_y >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* dst = dinput.data.data() +
                             (c * H + static_cast<std::size_t>(in_y)) * W + (x0 + kx - 1);
                    const T* s = src + y * W + x0;
                    for (std::size_t x = 0; x < x1 - x0; ++x) dst[x] += s[x];
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
inline Tensor<T> conv3x3_forward(const Tensor<T>& input, const Tensor<T>& weight,
                                 const Tensor<T>& bias, std::vector<T>* cols_out = nullptr) {
    require_rank(input, 3, "conv input");
    require_rank(weight, 4, "conv weight");
    const std::size_t C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const std::size_t O = weight.shape[0];
    require_shape(weight, {O, C, 3, 3}, "conv weight");
    require_shape(bias, {O}, "conv bias");

    std::vector<T> local_cols;
    std::vector<T>& cols = cols_out ? *cols_out : local_cols;
    detail::im2col_3x3(input, cols);

    const std::size_t K = C * 9, Q = H * W;
    Tensor<T> out({O, H, W});
    ConstMapRM<T> Wm(weight.data.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(K));
    ConstMapRM<T> Cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(Q));
    MapRM<T> Om(out.data.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(Q));
    Om.noalias() = Wm * Cm;
    for (std::size_t o = 0; o < O; ++o)
        Om.row(static_cast<Eigen::Index>(o)).array() += bias.data[o];
    return out;
}

/// `cols` must be the im2col buffer produced during the forward pass.
/// Weight and bias gradients are accumulated (+=) so per-example passes can
/// share one gradient buffer.
template <typename T>
inline Tensor<T> conv3x3_backward(const Tensor<T>& dout, const Tensor<T>& weight,
                                  const std::vector<T>& cols, std::vector<std::size_t> input_shape,
                                  Tensor<T>& dweight, Tensor<T>& dbias) {
    const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
    const std::size_t O = weight.shape[0];
    const std::size_t K = C * 9, Q = H * W;
    require_shape(dout, {O, H, W}, "conv dout");

    ConstMapRM<T> Dm(dout.data.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(Q));
    ConstMapRM<T> Cm(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(Q));
    ConstMapRM<T> Wm(weight.data.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(K));

    MapRM<T> dWm(dweight.data.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(K));
    dWm.noalias() += Dm * Cm.transpose();
    for (std::size_t o = 0; o < O; ++o)
        dbias.data[o] += Dm.row(static_cast<Eigen::Index>(o)).sum();

    std::vector<T> dcols(K * Q);
    MapRM<T> dCm(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(Q));
    dCm.noalias() = Wm.transpose() * Dm;

    Tensor<T> dinput(std::move(input_shape));
    detail::col2im_3x3(dcols, dinput);
    return dinput;
}

// -------------------------------------------------------------------- ReLU

template <typename T>
inline Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (T& v : out.data) v = std::max(v, T(0));
    return out;
}

template <typename T>
inline Tensor<T> relu_backward(const Tensor<T>& dout, const Tensor<T>& input) {
    Tensor<T> dinput = dout;
    for (std::size_t i = 0; i < dinput.data.size(); ++i)
        if (input.data[i] <= T(0)) dinput.data[i] = T(0);
    return dinput;
}

// ------------------------------------------------------------- max pooling
//
// 2x2 window, stride 2; H and W must be even. The argmax scan order is
// fixed, so ties resolve identically on every run.

template <typename T>
inline Tensor<T> maxpool2_forward(const Tensor<T>& input, std::vector<std::size_t>& argmax) {
    require_rank(input, 3, "pool input");
    const std::size_t C = input.shape[0], H = input.shape[1], W = input.shape[2];
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeMismatch("pool input sides must be even, got " + shape_string(input.shape));
    Tensor<T> out({C, H / 2, W / 2});
    argmax.resize(out.numel());
    std::size_t oi = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; y += 2) {
            for (std::size_t x = 0; x < W; x += 2) {
                std::size_t best = (c * H + y) * W + x;
                T best_v = input.data[best];
                const std::size_t candidates[3] = {(c * H + y) * W + x + 1,
                                                   (c * H + y + 1) * W + x,
                                                   (c * H + y + 1) * W + x + 1};
                for (std::size_t idx : candidates) {
                    if (input.data[idx] > best_v) {
                        best_v = input.data[idx];
                        best = idx;
                    }
                }
                out.data[oi] = best_v;
                argmax[oi] = best;
                ++oi;
            }
        }
    }
    return out;
}

template <typename T>
inline Tensor<T> maxpool2_backward(const Tensor<T>& dout, const std::vector<std::size_t>& argmax,
                                   const std::vector<std::size_t>& input_shape) {
    Tensor<T> dinput(input_shape);
    for (std::size_t i = 0; i < dout.data.size(); ++i) dinput.data[argmax[i]] += dout.data[i];
    return dinput;
}

// ---------------------------------------------------- global average pool

template <typename T>
inline Tensor<T> gap_forward(const Tensor<T>& input) {
    require_rank(input, 3, "gap input");
    const std::size_t C = input.shape[0], A = input.shape[1] * input.shape[2];
    Tensor<T> out({C});
    for (std::size_t c = 0; c < C; ++c) {
        T s = T(0);
        const T* p = input.data.data() + c * A;
        for (std::size_t i = 0; i < A; ++i) s += p[i];
        out.data[c] = s / static_cast<T>(A);
    }
    return out;
}

template <typename T>
inline Tensor<T> gap_backward(const Tensor<T>& dout, const std::vector<std::size_t>& input_shape) {
    const std::size_t C = input_shape[0], A = input_shape[1] * input_shape[2];
    Tensor<T> dinput(input_shape);
    for (std::size_t c = 0; c < C; ++c) {
        const T g = dout.data[c] / static_cast<T>(A);
        T* p = dinput.data.data() + c * A;
        for (std::size_t i = 0; i < A; ++i) p[i] = g;
    }
    return dinput;
}

// ------------------------------------------------------------------ affine

/// weight is [out,in]; returns weight * x + bias.
template <typename T>
inline Tensor<T> affine_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                const Tensor<T>& bias) {
    require_rank(x, 1, "affine input");
    const std::size_t In = x.shape[0], Out = weight.shape[0];
    require_shape(weight, {Out, In}, "affine weight");
    require_shape(bias, {Out}, "affine bias");
    Tensor<T> out({Out});
    ConstMapRM<T> Wm(weight.data.data(), static_cast<Eigen::Index>(Out),
                     static_cast<Eigen::Index>(In));
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data.data(),
                                                             static_cast<Eigen::Index>(In));
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> ov(out.data.data(),
                                                       static_cast<Eigen::Index>(Out));
    ov.noalias() = Wm * xv;
    for (std::size_t o = 0; o < Out; ++o) out.data[o] += bias.data[o];
    return out;
}

template <typename T>
inline Tensor<T> affine_backward(const Tensor<T>& dout, const Tensor<T>& x,
                                 const Tensor<T>& weight, Tensor<T>& dweight, Tensor<T>& dbias) {
    const std::size_t In = x.shape[0], Out = weight.shape[0];
    for (std::size_t o = 0; o < Out; ++o) {
        dbias.data[o] += dout.data[o];
        T* dw = dweight.data.data() + o * In;
        const T g = dout.data[o];
        for (std::size_t i = 0; i < In; ++i) dw[i] += g * x.data[i];
    }
    Tensor<T> dx({In});
    for (std::size_t o = 0; o < Out; ++o) {
        const T* w = weight.data.data() + o * In;
        const T g = dout.data[o];
        for (std::size_t i = 0; i < In; ++i) dx.data[i] += g * w[i];
    }
    return dx;
}

// --------------------------------------------- softmax and cross-entropy

/// Numerically stable row softmax of a logit vector.
template <typename T>
inline Tensor<T> softmax(const Tensor<T>& logits) {
    Tensor<T> probs = logits;
    T mx = logits.data[0];
    for (T v : logits.data) mx = std::max(mx, v);
    T sum = T(0);
    for (T& v : probs.data) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (T& v : probs.data) v /= sum;
    return probs;
}

/// Returns -log softmax(logits)[label]; dlogits gets softmax - onehot, the
/// gradient of that loss with respect to the logits.
template <typename T>
inline T softmax_cross_entropy(const Tensor<T>& logits, int label, Tensor<T>& dlogits) {
    const int k = static_cast<int>(logits.shape[0]);
    if (label < 0 || label >= k)
        throw LabelOutOfRange("label " + std::to_string(label) + " outside [0," +
                              std::to_string(k) + ")");
    Tensor<T> probs = softmax(logits);
    dlogits = probs;
    dlogits.data[static_cast<std::size_t>(label)] -= T(1);
    const T p = std::max(probs.data[static_cast<std::size_t>(label)],
                         std::numeric_limits<T>::min());
    return -std::log(p);
}

}  // namespace dupless
