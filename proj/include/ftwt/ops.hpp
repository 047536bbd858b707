#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "ftwt/tensor.hpp"

// Forward and backward kernels for the fixed layer set. Everything is
// single-threaded and accumulates in a fixed order, so identical inputs give
// bit-identical outputs. The matrix products go through Eigen; im2col/col2im
// and the rest are hand-rolled.

namespace ftwt {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* src, int C, int H, int W, int k, int stride, int pad, T* col) {
    const int Hout = conv_out_extent(H, k, stride, pad);
    const int Wout = conv_out_extent(W, k, stride, pad);
    const int64_t plane = int64_t(Hout) * Wout;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((int64_t(c) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < Hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < Wout; ++ox) row[oy * Wout + ox] = T(0);
                        continue;
                    }
                    const T* in_row = src + (int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < Wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[oy * Wout + ox] = (ix >= 0 && ix < W) ? in_row[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, int C, int H, int W, int k, int stride, int pad, T* dst) {
    const int Hout = conv_out_extent(H, k, stride, pad);
    const int Wout = conv_out_extent(W, k, stride, pad);
    const int64_t plane = int64_t(Hout) * Wout;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((int64_t(c) * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < Hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* out_row = dst + (int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < Wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) out_row[ix] += row[oy * Wout + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_check(const TensorT<T>& input, const TensorT<T>& weight, int stride, int pad) {
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw ConfigError("conv2d expects NCHW input and [out,in,k,k] weights");
    if (input.dim(1) != weight.dim(1))
        throw ConfigError("conv2d channel mismatch: input C=" + std::to_string(input.dim(1)) +
                          " weight in=" + std::to_string(weight.dim(1)));
    if (weight.dim(2) != weight.dim(3)) throw ConfigError("conv2d kernel must be square");
    if (stride < 1 || pad < 0) throw ConfigError("conv2d requires stride >= 1 and pad >= 0");
    if (conv_out_extent(input.dim(2), weight.dim(2), stride, pad) < 1 ||
        conv_out_extent(input.dim(3), weight.dim(2), stride, pad) < 1)
        throw ConfigError("conv2d kernel larger than padded input");
}

// No bias term; normalization follows every conv in this layer set.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight, int stride, int pad) {
    conv2d_check(input, weight, stride, pad);
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Co = weight.dim(0), k = weight.dim(2);
    const int Hout = conv_out_extent(H, k, stride, pad);
    const int Wout = conv_out_extent(W, k, stride, pad);
    TensorT<T> out({N, Co, Hout, Wout});
    const int64_t ckk = int64_t(C) * k * k;
    const int64_t plane = int64_t(Hout) * Wout;
    std::vector<T> col(static_cast<size_t>(ckk * plane));
    ConstMatMap<T> wm(weight.data.data(), Co, ckk);
    for (int n = 0; n < N; ++n) {
        im2col(input.data.data() + int64_t(n) * C * H * W, C, H, W, k, stride, pad, col.data());
        ConstMatMap<T> cm(col.data(), ckk, plane);
        MatMap<T> om(out.data.data() + int64_t(n) * Co * plane, Co, plane);
        om.noalias() = wm * cm;
    }
    return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weight, int stride, int pad,
                     const TensorT<T>& upstream, TensorT<T>& input_grad, TensorT<T>& weight_grad) {
    conv2d_check(input, weight, stride, pad);
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Co = weight.dim(0), k = weight.dim(2);
    const int Hout = conv_out_extent(H, k, stride, pad);
    const int Wout = conv_out_extent(W, k, stride, pad);
    if (upstream.shape != std::vector<int>{N, Co, Hout, Wout})
        throw ConfigError("conv2d_backward upstream shape mismatch");
    input_grad = TensorT<T>(input.shape);
    weight_grad = TensorT<T>(weight.shape);
    const int64_t ckk = int64_t(C) * k * k;
    const int64_t plane = int64_t(Hout) * Wout;
    std::vector<T> col(static_cast<size_t>(ckk * plane));
    std::vector<T> dcol(static_cast<size_t>(ckk * plane));
    ConstMatMap<T> wm(weight.data.data(), Co, ckk);
    MatMap<T> dwm(weight_grad.data.data(), Co, ckk);
    for (int n = 0; n < N; ++n) {
        im2col(input.data.data() + int64_t(n) * C * H * W, C, H, W, k, stride, pad, col.data());
        ConstMatMap<T> cm(col.data(), ckk, plane);
        ConstMatMap<T> um(upstream.data.data() + int64_t(n) * Co * plane, Co, plane);
        dwm.noalias() += um * cm.transpose();
        MatMap<T> dcm(dcol.data(), ckk, plane);
        dcm.noalias() = wm.transpose() * um;
        col2im_accumulate(dcol.data(), C, H, W, k, stride, pad,
                          input_grad.data.data() + int64_t(n) * C * H * W);
    }
}

// Per-output-channel additive term, used by folded-normalization inference.
template <typename T>
void add_channel_bias(TensorT<T>& x, const TensorT<T>& bias) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = int64_t(x.dim(2)) * x.dim(3);
    if (bias.numel() != C) throw ConfigError("channel bias length mismatch");
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            const T b = bias[c];
            for (int64_t i = 0; i < plane; ++i) p[i] += b;
        }
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BnCache {
    std::vector<T> mean;     // per channel
    std::vector<T> inv_std;  // 1/sqrt(var+eps)
    bool train_stats = false;
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// Train mode normalizes with batch statistics over N,H,W and updates the
// running stats (momentum 0.1 by default, unbiased variance); eval mode uses
// the running stats. Backward is defined for train-mode caches.
template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                             TensorT<T>& running_mean, TensorT<T>& running_var, T eps, T momentum,
                             bool training, BnCache<T>* cache) {
    if (x.ndim() != 4) throw ConfigError("batchnorm expects NCHW input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw ConfigError("batchnorm channel-count mismatch");
    if (!(eps > T(0))) throw ConfigError("batchnorm eps must be positive");
    const int64_t m = int64_t(N) * H * W;
    const int64_t plane = int64_t(H) * W;
    std::vector<T> mean(C), inv_std(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            double sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) sum += p[i];
            }
            const double mu = sum / double(m);
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = double(p[i]) - mu;
                    sq += d * d;
                }
            }
            const double var = sq / double(m);
            mean[c] = T(mu);
            inv_std[c] = T(1.0 / std::sqrt(var + double(eps)));
            const double unbiased = m > 1 ? var * double(m) / double(m - 1) : var;
            running_mean[c] = T((1.0 - double(momentum)) * running_mean[c] + double(momentum) * mu);
            running_var[c] = T((1.0 - double(momentum)) * running_var[c] + double(momentum) * unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = running_mean[c];
            inv_std[c] = T(1.0 / std::sqrt(double(running_var[c]) + double(eps)));
        }
    }
    TensorT<T> y(x.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            T* q = y.data.data() + (int64_t(n) * C + c) * plane;
            const T g = gamma[c], istd = inv_std[c], mu = mean[c], b = beta[c];
            for (int64_t i = 0; i < plane; ++i) q[i] = g * ((p[i] - mu) * istd) + b;
        }
    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->train_stats = training;
    }
    return y;
}

template <typename T>
void batchnorm_backward(const TensorT<T>& x, const TensorT<T>& gamma, const BnCache<T>& cache,
                        const TensorT<T>& upstream, TensorT<T>& dx, TensorT<T>& dgamma,
                        TensorT<T>& dbeta) {
    if (!cache.train_stats) throw ConfigError("batchnorm backward requires a train-mode cache");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t m = int64_t(N) * H * W;
    const int64_t plane = int64_t(H) * W;
    dx = TensorT<T>(x.shape);
    dgamma = TensorT<T>({C});
    dbeta = TensorT<T>({C});
    for (int c = 0; c < C; ++c) {
        const T mu = cache.mean[c];
        const T istd = cache.inv_std[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
            const T* px = x.data.data() + (int64_t(n) * C + c) * plane;
            const T* pu = upstream.data.data() + (int64_t(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double xhat = double(px[i] - mu) * istd;
                sum_dy += pu[i];
                sum_dy_xhat += double(pu[i]) * xhat;
            }
        }
        dbeta[c] = T(sum_dy);
        dgamma[c] = T(sum_dy_xhat);
        const double mean_dy = sum_dy / double(m);
        const double mean_dy_xhat = sum_dy_xhat / double(m);
        const double scale = double(gamma[c]) * istd;
        for (int n = 0; n < N; ++n) {
            const T* px = x.data.data() + (int64_t(n) * C + c) * plane;
            const T* pu = upstream.data.data() + (int64_t(n) * C + c) * plane;
            T* pd = dx.data.data() + (int64_t(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double xhat = double(px[i] - mu) * istd;
                pd[i] = T(scale * (double(pu[i]) - mean_dy - xhat * mean_dy_xhat));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y = x;
    for (T& v : y.data) v = v > T(0) ? v : T(0);
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& out, const TensorT<T>& upstream) {
    TensorT<T> dx = upstream;
    for (size_t i = 0; i < dx.data.size(); ++i)
        if (!(out.data[i] > T(0))) dx.data[i] = T(0);
    return dx;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> y = x;
    for (T& v : y.data) v = sigmoid_scalar(v);
    return y;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& out, const TensorT<T>& upstream) {
    TensorT<T> dx = upstream;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= out.data[i] * (T(1) - out.data[i]);
    return dx;
}

// Row-wise softmax over the channel axis of [N,C], max-subtracted.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    const int N = x.dim(0), C = x.dim(1);
    TensorT<T> y(x.shape);
    for (int n = 0; n < N; ++n) {
        const T* p = x.data.data() + int64_t(n) * C;
        T* q = y.data.data() + int64_t(n) * C;
        T mx = p[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, p[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            q[c] = std::exp(p[c] - mx);
            sum += q[c];
        }
        const T inv = T(1.0 / sum);
        for (int c = 0; c < C; ++c) q[c] *= inv;
    }
    return y;
}

template <typename T>
TensorT<T> softmax_rows_backward(const TensorT<T>& out, const TensorT<T>& upstream) {
    const int N = out.dim(0), C = out.dim(1);
    TensorT<T> dx(out.shape);
    for (int n = 0; n < N; ++n) {
        const T* s = out.data.data() + int64_t(n) * C;
        const T* u = upstream.data.data() + int64_t(n) * C;
        T* d = dx.data.data() + int64_t(n) * C;
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += double(u[c]) * s[c];
        for (int c = 0; c < C; ++c) d[c] = s[c] * T(double(u[c]) - dot);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Argmax ties resolve to the first position in row-major order.
template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& x, int k, int stride, std::vector<int64_t>* argmax) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k > H || k > W) throw ConfigError("maxpool window larger than input");
    const int Hout = (H - k) / stride + 1;
    const int Wout = (W - k) / stride + 1;
    TensorT<T> y({N, C, Hout, Wout});
    if (argmax) argmax->assign(static_cast<size_t>(y.numel()), 0);
    int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* plane = x.data.data() + (int64_t(n) * C + c) * H * W;
            for (int oy = 0; oy < Hout; ++oy)
                for (int ox = 0; ox < Wout; ++ox, ++oi) {
                    T best = plane[(oy * stride) * W + ox * stride];
                    int64_t best_i = (oy * stride) * W + ox * stride;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int64_t idx = (oy * stride + ky) * W + ox * stride + kx;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_i = idx;
                            }
                        }
                    y.data[static_cast<size_t>(oi)] = best;
                    if (argmax)
                        (*argmax)[static_cast<size_t>(oi)] = (int64_t(n) * C + c) * H * W + best_i;
                }
        }
    return y;
}

template <typename T>
TensorT<T> maxpool2d_backward(const std::vector<int>& in_shape, const std::vector<int64_t>& argmax,
                              const TensorT<T>& upstream) {
    TensorT<T> dx(in_shape);
    for (size_t i = 0; i < upstream.data.size(); ++i)
        dx.data[static_cast<size_t>(argmax[i])] += upstream.data[i];
    return dx;
}

// Global max pooling: NCHW -> [N,C]. Ties pick the first row-major position.
template <typename T>
TensorT<T> global_max_pool(const TensorT<T>& x, std::vector<int64_t>* argmax) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = int64_t(x.dim(2)) * x.dim(3);
    TensorT<T> y({N, C});
    if (argmax) argmax->assign(static_cast<size_t>(int64_t(N) * C), 0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            T best = p[0];
            int64_t best_i = 0;
            for (int64_t i = 1; i < plane; ++i)
                if (p[i] > best) {
                    best = p[i];
                    best_i = i;
                }
            y.at(n, c) = best;
            if (argmax) (*argmax)[static_cast<size_t>(int64_t(n) * C + c)] = (int64_t(n) * C + c) * plane + best_i;
        }
    return y;
}

template <typename T>
TensorT<T> global_max_pool_backward(const std::vector<int>& in_shape,
                                    const std::vector<int64_t>& argmax, const TensorT<T>& upstream) {
    TensorT<T> dx(in_shape);
    for (size_t i = 0; i < upstream.data.size(); ++i)
        dx.data[static_cast<size_t>(argmax[i])] += upstream.data[i];
    return dx;
}

// Per-channel max of |x|; feeds mask ground-truth generation, never differentiated.
template <typename T>
TensorT<T> global_max_pool_abs(const TensorT<T>& x) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = int64_t(x.dim(2)) * x.dim(3);
    TensorT<T> y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            T best = T(0);
            for (int64_t i = 0; i < plane; ++i) best = std::max(best, std::abs(p[i]));
            y.at(n, c) = best;
        }
    return y;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = int64_t(x.dim(2)) * x.dim(3);
    TensorT<T> y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x.data.data() + (int64_t(n) * C + c) * plane;
            double sum = 0.0;
            for (int64_t i = 0; i < plane; ++i) sum += p[i];
            y.at(n, c) = T(sum / double(plane));
        }
    return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const std::vector<int>& in_shape, const TensorT<T>& upstream) {
    TensorT<T> dx(in_shape);
    const int N = in_shape[0], C = in_shape[1];
    const int64_t plane = int64_t(in_shape[2]) * in_shape[3];
    const T inv = T(1) / T(plane);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* p = dx.data.data() + (int64_t(n) * C + c) * plane;
            const T g = upstream.at(n, c) * inv;
            for (int64_t i = 0; i < plane; ++i) p[i] = g;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias) {
    const int N = x.dim(0), Ci = x.dim(1);
    const int Co = weight.dim(0);
    if (weight.dim(1) != Ci || bias.numel() != Co)
        throw ConfigError("linear shape mismatch: x " + shape_str(x.shape) + " W " + shape_str(weight.shape));
    TensorT<T> y({N, Co});
    ConstMatMap<T> xm(x.data.data(), N, Ci);
    ConstMatMap<T> wm(weight.data.data(), Co, Ci);
    MatMap<T> ym(y.data.data(), N, Co);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c) y.at(n, c) += bias[c];
    return y;
}

template <typename T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& upstream,
                     TensorT<T>& dx, TensorT<T>& dweight, TensorT<T>& dbias) {
    const int N = x.dim(0), Ci = x.dim(1), Co = weight.dim(0);
    dx = TensorT<T>(x.shape);
    dweight = TensorT<T>(weight.shape);
    dbias = TensorT<T>({Co});
    ConstMatMap<T> xm(x.data.data(), N, Ci);
    ConstMatMap<T> wm(weight.data.data(), Co, Ci);
    ConstMatMap<T> um(upstream.data.data(), N, Co);
    MatMap<T>(dx.data.data(), N, Ci).noalias() = um * wm;
    MatMap<T>(dweight.data.data(), Co, Ci).noalias() = um.transpose() * xm;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < Co; ++c) dbias[c] += upstream.at(n, c);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label]. Cache holds the
// softmax probabilities for the backward pass.
template <typename T>
T cross_entropy_with_logits(const TensorT<T>& logits, const std::vector<int>& labels,
                            TensorT<T>* prob_cache) {
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) throw ConfigError("label count mismatch");
    for (int l : labels)
        if (l < 0 || l >= C) throw DataError("label out of range: " + std::to_string(l));
    TensorT<T> probs = softmax_rows(logits);
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double p = std::max(double(probs.at(n, labels[static_cast<size_t>(n)])), 1e-300);
        loss -= std::log(p);
    }
    if (prob_cache) *prob_cache = std::move(probs);
    return T(loss / double(N));
}

template <typename T>
TensorT<T> cross_entropy_backward(const TensorT<T>& probs, const std::vector<int>& labels) {
    const int N = probs.dim(0), C = probs.dim(1);
    TensorT<T> d(probs.shape);
    const T inv = T(1) / T(N);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) d.at(n, c) = probs.at(n, c) * inv;
        d.at(n, labels[static_cast<size_t>(n)]) -= inv;
    }
    return d;
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay folded into the buffer:
//   v <- mu*v + (g + wd*w);  w <- w - lr*v
// ---------------------------------------------------------------------------

template <typename T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity, T lr, T momentum,
              T weight_decay) {
    if (!param.same_shape(grad)) throw ConfigError("sgd_step shape mismatch");
    if (velocity.empty()) velocity = TensorT<T>(param.shape);
    for (size_t i = 0; i < param.data.size(); ++i) {
        const T g = grad.data[i] + weight_decay * param.data[i];
        velocity.data[i] = momentum * velocity.data[i] + g;
        param.data[i] -= lr * velocity.data[i];
    }
}

} // namespace ftwt
