#pragma once

// Reverse-mode differentiable operations on 5-d tensors [N,C,D,H,W].
// Every op is a pure function of its inputs; when the tape is recording and
// any input requires gradients, a backward closure is pushed that accumulates
// into the inputs' grad buffers. Data-parallel kernels partition disjoint
// output (or gather-target) regions, so results are identical for any worker
// count. Reductions accumulate in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "volshift/tensor.hpp"

namespace volshift {

enum class Act { None, Relu, LeakyRelu, Sigmoid };
enum class LossKind { L1, Bce };

struct PadSpec {
    enum class Kind { Zero, Reflect };
    Kind kind = Kind::Zero;
    int amount = 0;

    static PadSpec zero(int n) { return {Kind::Zero, n}; }
    static PadSpec reflect(int n) { return {Kind::Reflect, n}; }
};

namespace detail {

// per-axis asymmetric zero padding (depth, height, width)
struct Pad3 {
    int before[3] = {0, 0, 0};
    int after[3] = {0, 0, 0};
    static Pad3 sym(int n) {
        Pad3 p;
        for (int i = 0; i < 3; ++i) {
            p.before[i] = n;
            p.after[i] = n;
        }
        return p;
    }
};

// Keras-style SAME padding: output extent = ceil(in/stride).
inline void same_pads(int64_t in, int k, int stride, int& before, int& after) {
    int64_t out = (in + stride - 1) / stride;
    int64_t total = std::max<int64_t>((out - 1) * stride + k - in, 0);
    before = int(total / 2);
    after = int(total - before);
}

template <typename T>
void check_rank5(const TensorT<T>& t, const char* op, const char* name) {
    if (t.rank() != 5)
        throw ShapeError(strf(op, ": ", name, " must have rank 5 [N,C,D,H,W], got ", shape_str(t.shape())));
}

template <typename T>
bool track(const Tape<T>& tape, std::initializer_list<const TensorT<T>*> ins) {
    if (!tape.recording()) return false;
    for (const auto* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / reduction primitives

template <typename T>
TensorT<T> add(Tape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strf("add: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
    auto out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a = a, b = b, out = out]() mutable {
            if (!out.has_grad()) return;
            const auto& g = out.grad_ref();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> scale(Tape<T>& tape, const TensorT<T>& a, double s) {
    auto out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = T(s) * pa[i];
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a = a, out = out, s]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& ga = a.grad();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += T(s) * g[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum(Tape<T>& tape, const TensorT<T>& a) {
    double acc = 0;
    const T* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += double(pa[i]);
    auto out = TensorT<T>::scalar(T(acc));
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a = a, out = out]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            T g = out.grad_ref()[0];
            auto& ga = a.grad();
            for (auto& v : ga) v += g;
        });
    }
    return out;
}

// dot(a, w) with w a plain constant vector; used to seed gradient checks
template <typename T>
TensorT<T> weighted_sum(Tape<T>& tape, const TensorT<T>& a, const std::vector<T>& w) {
    if (int64_t(w.size()) != a.numel())
        throw ShapeError(strf("weighted_sum: ", w.size(), " weights for ", a.numel(), " elements"));
    double acc = 0;
    const T* pa = a.data();
    for (size_t i = 0; i < w.size(); ++i) acc += double(pa[i]) * double(w[i]);
    auto out = TensorT<T>::scalar(T(acc));
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a = a, out = out, w]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            T g = out.grad_ref()[0];
            auto& ga = a.grad();
            for (size_t i = 0; i < w.size(); ++i) ga[i] += g * w[i];
        });
    }
    return out;
}

// Copy that does not participate in differentiation.
template <typename T>
TensorT<T> detach(const TensorT<T>& a) {
    return TensorT<T>::from_data(a.shape(), a.values(), false);
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
TensorT<T> activation(Tape<T>& tape, const TensorT<T>& x, Act kind, double slope = 0.2) {
    if (kind == Act::None) return x;
    auto out = TensorT<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    int64_t n = x.numel();
    switch (kind) {
        case Act::Relu:
            for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
            break;
        case Act::LeakyRelu:
            for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(slope) * px[i];
            break;
        case Act::Sigmoid:
            for (int64_t i = 0; i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-px[i]));
            break;
        default:
            break;
    }
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, kind, slope]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            const T* px = x.data();
            const T* po = out.data();
            switch (kind) {
                case Act::Relu:
                    for (size_t i = 0; i < g.size(); ++i)
                        if (px[i] > T(0)) gx[i] += g[i];
                    break;
                case Act::LeakyRelu:
                    for (size_t i = 0; i < g.size(); ++i) gx[i] += px[i] > T(0) ? g[i] : T(slope) * g[i];
                    break;
                case Act::Sigmoid:
                    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * po[i] * (T(1) - po[i]);
                    break;
                default:
                    break;
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> relu(Tape<T>& tape, const TensorT<T>& x) {
    return activation(tape, x, Act::Relu);
}
template <typename T>
TensorT<T> leaky_relu(Tape<T>& tape, const TensorT<T>& x, double slope) {
    return activation(tape, x, Act::LeakyRelu, slope);
}
template <typename T>
TensorT<T> sigmoid(Tape<T>& tape, const TensorT<T>& x) {
    return activation(tape, x, Act::Sigmoid);
}

// ---------------------------------------------------------------------------
// losses (scalar outputs, means accumulated in double)

template <typename T>
TensorT<T> l1_loss(Tape<T>& tape, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strf("l1: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
    const T* pa = a.data();
    const T* pb = b.data();
    int64_t n = a.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(double(pa[i]) - double(pb[i]));
    auto out = TensorT<T>::scalar(T(acc / double(n)));
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a = a, b = b, out = out]() mutable {
            if (!out.has_grad()) return;
            T g = out.grad_ref()[0];
            const T* pa = a.data();
            const T* pb = b.data();
            int64_t n = a.numel();
            T inv = g / T(n);
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (int64_t i = 0; i < n; ++i) {
                    T d = pa[i] - pb[i];
                    ga[i] += d > T(0) ? inv : (d < T(0) ? -inv : T(0));
                }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int64_t i = 0; i < n; ++i) {
                    T d = pa[i] - pb[i];
                    gb[i] -= d > T(0) ? inv : (d < T(0) ? -inv : T(0));
                }
            }
        });
    }
    return out;
}

inline constexpr double kBceClamp = 1e-7;

template <typename T>
TensorT<T> bce_loss(Tape<T>& tape, const TensorT<T>& p, const TensorT<T>& target) {
    if (p.shape() != target.shape())
        throw ShapeError(strf("bce: shape mismatch ", shape_str(p.shape()), " vs ", shape_str(target.shape())));
    const T* pp = p.data();
    const T* pt = target.data();
    int64_t n = p.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        double q = std::clamp(double(pp[i]), kBceClamp, 1.0 - kBceClamp);
        double t = double(pt[i]);
        acc -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    }
    auto out = TensorT<T>::scalar(T(acc / double(n)));
    if (detail::track(tape, {&p, &target})) {
        out.set_requires_grad(true);
        tape.record([p = p, target = target, out = out]() mutable {
            if (!out.has_grad()) return;
            T g = out.grad_ref()[0];
            const T* pp = p.data();
            const T* pt = target.data();
            int64_t n = p.numel();
            if (p.requires_grad()) {
                auto& gp = p.grad();
                for (int64_t i = 0; i < n; ++i) {
                    double q = double(pp[i]);
                    if (q < kBceClamp || q > 1.0 - kBceClamp) continue;  // clamp region: zero slope
                    gp[i] += g * T((q - double(pt[i])) / (q * (1.0 - q)) / double(n));
                }
            }
            if (target.requires_grad()) {
                auto& gt = target.grad();
                for (int64_t i = 0; i < n; ++i) {
                    double q = std::clamp(double(pp[i]), kBceClamp, 1.0 - kBceClamp);
                    gt[i] -= g * T(std::log(q / (1.0 - q)) / double(n));
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> losses(Tape<T>& tape, const TensorT<T>& a, const TensorT<T>& b, LossKind kind) {
    return kind == LossKind::L1 ? l1_loss(tape, a, b) : bce_loss(tape, a, b);
}

// -mean log p[label] over all voxels; p is a probability map [N,C,spatial...],
// labels hold one class index per (batch, voxel) in batch-major voxel order.
template <typename T>
TensorT<T> cross_entropy_loss(Tape<T>& tape, const TensorT<T>& p, const std::vector<int32_t>& labels) {
    detail::check_rank5(p, "cross_entropy", "probabilities");
    int64_t nb = p.extent(0), nc = p.extent(1);
    int64_t spatial = p.extent(2) * p.extent(3) * p.extent(4);
    if (int64_t(labels.size()) != nb * spatial)
        throw ShapeError(strf("cross_entropy: ", labels.size(), " labels for ", nb * spatial, " voxels"));
    const T* pp = p.data();
    double acc = 0;
    for (int64_t b = 0; b < nb; ++b)
        for (int64_t v = 0; v < spatial; ++v) {
            int32_t c = labels[size_t(b * spatial + v)];
            if (c < 0 || c >= nc) throw ShapeError(strf("cross_entropy: label ", c, " outside [0,", nc, ")"));
            double q = std::max(double(pp[(b * nc + c) * spatial + v]), kBceClamp);
            acc -= std::log(q);
        }
    int64_t count = nb * spatial;
    auto out = TensorT<T>::scalar(T(acc / double(count)));
    if (detail::track(tape, {&p})) {
        out.set_requires_grad(true);
        tape.record([p = p, out = out, labels = labels, nb, nc, spatial, count]() mutable {
            if (!out.has_grad() || !p.requires_grad()) return;
            T g = out.grad_ref()[0];
            const T* pp = p.data();
            auto& gp = p.grad();
            for (int64_t b = 0; b < nb; ++b)
                for (int64_t v = 0; v < spatial; ++v) {
                    int32_t c = labels[size_t(b * spatial + v)];
                    int64_t idx = (b * nc + c) * spatial + v;
                    double q = double(pp[idx]);
                    if (q < kBceClamp) continue;
                    gp[idx] -= g * T(1.0 / (q * double(count)));
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization / softmax

// Per (batch, channel) standardization over spatial voxels, epsilon inside
// the square root. No learned affine parameters.
template <typename T>
TensorT<T> instance_norm3d(Tape<T>& tape, const TensorT<T>& x, double epsilon = 1e-5) {
    detail::check_rank5(x, "instance_norm3d", "input");
    int64_t nb = x.extent(0), nc = x.extent(1);
    int64_t m = x.extent(2) * x.extent(3) * x.extent(4);
    if (m < 2) throw ShapeError(strf("instance_norm3d: spatial volume must be >= 2 voxels, got ", m));
    auto out = TensorT<T>::zeros(x.shape());
    std::vector<T> inv_std(size_t(nb * nc));
    const T* px = x.data();
    T* po = out.data();
    parallel_for(nb * nc, [&](int64_t lo, int64_t hi) {
        for (int64_t g = lo; g < hi; ++g) {
            const T* in = px + g * m;
            T* o = po + g * m;
            double mean = 0;
            for (int64_t i = 0; i < m; ++i) mean += double(in[i]);
            mean /= double(m);
            double var = 0;
            for (int64_t i = 0; i < m; ++i) {
                double d = double(in[i]) - mean;
                var += d * d;
            }
            var /= double(m);
            double inv = 1.0 / std::sqrt(var + epsilon);
            inv_std[size_t(g)] = T(inv);
            for (int64_t i = 0; i < m; ++i) o[i] = T((double(in[i]) - mean) * inv);
        }
    });
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, inv_std = std::move(inv_std), nb, nc, m]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            const T* py = out.data();
            parallel_for(nb * nc, [&](int64_t lo, int64_t hi) {
                for (int64_t k = lo; k < hi; ++k) {
                    const T* gp = g.data() + k * m;
                    const T* yp = py + k * m;
                    T* gxp = gx.data() + k * m;
                    double gmean = 0, gymean = 0;
                    for (int64_t i = 0; i < m; ++i) {
                        gmean += double(gp[i]);
                        gymean += double(gp[i]) * double(yp[i]);
                    }
                    gmean /= double(m);
                    gymean /= double(m);
                    double inv = double(inv_std[size_t(k)]);
                    for (int64_t i = 0; i < m; ++i)
                        gxp[i] += T(inv * (double(gp[i]) - gmean - double(yp[i]) * gymean));
                }
            });
        });
    }
    return out;
}

// Channel-axis softmax per voxel, max-subtracted for stability.
template <typename T>
TensorT<T> softmax_channels(Tape<T>& tape, const TensorT<T>& x) {
    detail::check_rank5(x, "softmax_channels", "input");
    int64_t nb = x.extent(0), nc = x.extent(1);
    int64_t m = x.extent(2) * x.extent(3) * x.extent(4);
    auto out = TensorT<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    parallel_for(nb, [&](int64_t blo, int64_t bhi) {
        for (int64_t b = blo; b < bhi; ++b) {
            const T* xb = px + b * nc * m;
            T* ob = po + b * nc * m;
            for (int64_t v = 0; v < m; ++v) {
                double mx = double(xb[v]);
                for (int64_t c = 1; c < nc; ++c) mx = std::max(mx, double(xb[c * m + v]));
                double s = 0;
                for (int64_t c = 0; c < nc; ++c) {
                    double e = std::exp(double(xb[c * m + v]) - mx);
                    ob[c * m + v] = T(e);
                    s += e;
                }
                double inv = 1.0 / s;
                for (int64_t c = 0; c < nc; ++c) ob[c * m + v] = T(double(ob[c * m + v]) * inv);
            }
        }
    });
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, nb, nc, m]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            const T* po = out.data();
            parallel_for(nb, [&](int64_t blo, int64_t bhi) {
                for (int64_t b = blo; b < bhi; ++b) {
                    const T* pb = po + b * nc * m;
                    const T* gb = g.data() + b * nc * m;
                    T* gxb = gx.data() + b * nc * m;
                    for (int64_t v = 0; v < m; ++v) {
                        double dot = 0;
                        for (int64_t c = 0; c < nc; ++c) dot += double(gb[c * m + v]) * double(pb[c * m + v]);
                        for (int64_t c = 0; c < nc; ++c)
                            gxb[c * m + v] += T(double(pb[c * m + v]) * (double(gb[c * m + v]) - dot));
                    }
                }
            });
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// spatial rearrangement

template <typename T>
TensorT<T> upsample_nearest3d(Tape<T>& tape, const TensorT<T>& x, int factor) {
    detail::check_rank5(x, "upsample_nearest3d", "input");
    if (factor < 1) throw ShapeError(strf("upsample_nearest3d: factor must be >= 1, got ", factor));
    if (factor == 1) return x;
    int64_t nb = x.extent(0), nc = x.extent(1), d = x.extent(2), h = x.extent(3), w = x.extent(4);
    int64_t od = d * factor, oh = h * factor, ow = w * factor;
    auto out = TensorT<T>::zeros({nb, nc, od, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    parallel_for(nb * nc * od, [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            int64_t oz = u % od;
            int64_t g = u / od;
            const T* in_sl = px + (g * d + oz / factor) * h * w;
            T* out_sl = po + u * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                const T* in_row = in_sl + (oy / factor) * w;
                T* out_row = out_sl + oy * ow;
                for (int64_t ox = 0; ox < ow; ++ox) out_row[ox] = in_row[ox / factor];
            }
        }
    });
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, factor, nb, nc, d, h, w]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            int64_t oh = h * factor, ow = w * factor, od = d * factor;
            parallel_for(nb * nc * d, [&](int64_t lo, int64_t hi) {
                for (int64_t u = lo; u < hi; ++u) {
                    int64_t iz = u % d;
                    int64_t gch = u / d;
                    T* gx_sl = gx.data() + u * h * w;
                    for (int64_t fz = 0; fz < factor; ++fz) {
                        const T* g_sl = g.data() + (gch * od + iz * factor + fz) * oh * ow;
                        for (int64_t iy = 0; iy < h; ++iy)
                            for (int64_t fy = 0; fy < factor; ++fy) {
                                const T* g_row = g_sl + (iy * factor + fy) * ow;
                                T* gx_row = gx_sl + iy * w;
                                for (int64_t ix = 0; ix < w; ++ix)
                                    for (int64_t fx = 0; fx < factor; ++fx) gx_row[ix] += g_row[ix * factor + fx];
                            }
                    }
                }
            });
        });
    }
    return out;
}

namespace detail {
// Source coordinates in the padded grid that mirror onto input coordinate i.
// Border mirrors without repeating the edge voxel, so interior voxels can
// receive up to three contributions per axis.
inline void reflect_sources(int64_t i, int64_t extent, int n, int64_t* src, int& count) {
    count = 0;
    src[count++] = i + n;
    if (i >= 1 && i <= n) src[count++] = n - i;
    if (i <= extent - 2 && i >= extent - 1 - n) src[count++] = n + 2 * (extent - 1) - i;
}
}  // namespace detail

template <typename T>
TensorT<T> reflection_pad3d(Tape<T>& tape, const TensorT<T>& x, int n) {
    detail::check_rank5(x, "reflection_pad3d", "input");
    if (n < 0) throw ShapeError("reflection_pad3d: negative pad");
    if (n == 0) return x;
    int64_t nb = x.extent(0), nc = x.extent(1), d = x.extent(2), h = x.extent(3), w = x.extent(4);
    for (int axis = 2; axis < 5; ++axis)
        if (n >= x.extent(axis))
            throw ShapeError(strf("reflection_pad3d: pad ", n, " >= extent ", x.extent(axis), " on axis ", axis));
    int64_t od = d + 2 * n, oh = h + 2 * n, ow = w + 2 * n;
    auto out = TensorT<T>::zeros({nb, nc, od, oh, ow});
    auto mirror = [n](int64_t o, int64_t extent) {
        int64_t i = o - n;
        if (i < 0) i = -i;
        if (i >= extent) i = 2 * (extent - 1) - i;
        return i;
    };
    const T* px = x.data();
    T* po = out.data();
    parallel_for(nb * nc * od, [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            int64_t oz = u % od;
            int64_t g = u / od;
            const T* in_sl = px + (g * d + mirror(oz, d)) * h * w;
            T* out_sl = po + u * oh * ow;
            for (int64_t oy = 0; oy < oh; ++oy) {
                const T* in_row = in_sl + mirror(oy, h) * w;
                T* out_row = out_sl + oy * ow;
                for (int64_t ox = 0; ox < ow; ++ox) out_row[ox] = in_row[mirror(ox, w)];
            }
        }
    });
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, n, nb, nc, d, h, w]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            int64_t oh = h + 2 * n, ow = w + 2 * n, od = d + 2 * n;
            parallel_for(nb * nc * d, [&](int64_t lo, int64_t hi) {
                int64_t zs[3], ys[3], xs[3];
                int zc, yc, xc;
                for (int64_t u = lo; u < hi; ++u) {
                    int64_t iz = u % d;
                    int64_t gch = u / d;
                    detail::reflect_sources(iz, d, n, zs, zc);
                    T* gx_sl = gx.data() + u * h * w;
                    for (int64_t iy = 0; iy < h; ++iy) {
                        detail::reflect_sources(iy, h, n, ys, yc);
                        for (int64_t ix = 0; ix < w; ++ix) {
                            detail::reflect_sources(ix, w, n, xs, xc);
                            double acc = 0;
                            for (int a = 0; a < zc; ++a)
                                for (int b = 0; b < yc; ++b)
                                    for (int c = 0; c < xc; ++c)
                                        acc += double(g[size_t(((gch * od + zs[a]) * oh + ys[b]) * ow + xs[c])]);
                            gx_sl[iy * w + ix] += T(acc);
                        }
                    }
                }
            });
        });
    }
    return out;
}

template <typename T>
TensorT<T> maxpool3d(Tape<T>& tape, const TensorT<T>& x, int size) {
    detail::check_rank5(x, "maxpool3d", "input");
    if (size < 1) throw ShapeError("maxpool3d: size must be >= 1");
    if (size == 1) return x;
    int64_t nb = x.extent(0), nc = x.extent(1), d = x.extent(2), h = x.extent(3), w = x.extent(4);
    for (int axis = 2; axis < 5; ++axis)
        if (x.extent(axis) % size != 0)
            throw ShapeError(strf("maxpool3d: extent ", x.extent(axis), " on axis ", axis,
                                  " not divisible by pool size ", size));
    int64_t od = d / size, oh = h / size, ow = w / size;
    auto out = TensorT<T>::zeros({nb, nc, od, oh, ow});
    auto argmax = std::make_shared<std::vector<int64_t>>(size_t(out.numel()));
    const T* px = x.data();
    T* po = out.data();
    int64_t* pam = argmax->data();
    parallel_for(nb * nc * od, [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            int64_t oz = u % od;
            int64_t g = u / od;
            const T* in_ch = px + g * d * h * w;
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox) {
                    T best = std::numeric_limits<T>::lowest();
                    int64_t best_idx = -1;
                    for (int64_t kz = 0; kz < size; ++kz)
                        for (int64_t ky = 0; ky < size; ++ky)
                            for (int64_t kx = 0; kx < size; ++kx) {
                                int64_t idx = ((oz * size + kz) * h + oy * size + ky) * w + ox * size + kx;
                                if (in_ch[idx] > best) {  // strict: first in scan order wins ties
                                    best = in_ch[idx];
                                    best_idx = idx;
                                }
                            }
                    int64_t oidx = (u * oh + oy) * ow + ox;
                    po[oidx] = best;
                    pam[oidx] = g * d * h * w + best_idx;
                }
        }
    });
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, argmax]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            const int64_t* pam = argmax->data();
            for (size_t i = 0; i < g.size(); ++i) gx[size_t(pam[i])] += g[i];
        });
    }
    return out;
}

// Spatial crop: keeps [lo, lo+extent) on each spatial axis.
template <typename T>
TensorT<T> crop3d(Tape<T>& tape, const TensorT<T>& x, std::array<int64_t, 3> lo, std::array<int64_t, 3> extent) {
    detail::check_rank5(x, "crop3d", "input");
    int64_t nb = x.extent(0), nc = x.extent(1), d = x.extent(2), h = x.extent(3), w = x.extent(4);
    for (int i = 0; i < 3; ++i)
        if (lo[size_t(i)] < 0 || lo[size_t(i)] + extent[size_t(i)] > x.extent(i + 2))
            throw ShapeError(strf("crop3d: window [", lo[size_t(i)], ",", lo[size_t(i)] + extent[size_t(i)],
                                  ") outside extent ", x.extent(i + 2), " on axis ", i + 2));
    auto out = TensorT<T>::zeros({nb, nc, extent[0], extent[1], extent[2]});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t g = 0; g < nb * nc; ++g)
        for (int64_t z = 0; z < extent[0]; ++z)
            for (int64_t y = 0; y < extent[1]; ++y) {
                const T* src = px + ((g * d + lo[0] + z) * h + lo[1] + y) * w + lo[2];
                T* dst = po + ((g * extent[0] + z) * extent[1] + y) * extent[2];
                std::memcpy(dst, src, size_t(extent[2]) * sizeof(T));
            }
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x = x, out = out, lo, extent, nb, nc, d, h, w]() mutable {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& g = out.grad_ref();
            auto& gx = x.grad();
            for (int64_t ch = 0; ch < nb * nc; ++ch)
                for (int64_t z = 0; z < extent[0]; ++z)
                    for (int64_t y = 0; y < extent[1]; ++y) {
                        const T* src = g.data() + ((ch * extent[0] + z) * extent[1] + y) * extent[2];
                        T* dst = gx.data() + ((ch * d + lo[0] + z) * h + lo[1] + y) * w + lo[2];
                        for (int64_t xx = 0; xx < extent[2]; ++xx) dst[xx] += src[xx];
                    }
        });
    }
    return out;
}

}  // namespace volshift
