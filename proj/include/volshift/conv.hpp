#pragma once

// 3D convolution family. Cross-correlation convention (no kernel flip).
// conv3d weight layout [Cout,Cin,k,k,k]; conv_transpose3d weight layout
// [Cin,Cout,k,k,k], matching the adjoint relationship between the two ops.
// Forward and all three gradients are written as gathers over disjoint
// output regions so parallel execution is reproducible for any worker count.

#include "volshift/ops.hpp"

namespace volshift {

namespace detail {

template <typename T>
void check_conv_args(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias, int stride,
                     const char* op, int in_ch_axis) {
    check_rank5(input, op, "input");
    check_rank5(weight, op, "weight");
    if (stride < 1) throw ShapeError(strf(op, ": stride must be >= 1, got ", stride));
    int64_t k = weight.extent(2);
    if (weight.extent(3) != k || weight.extent(4) != k)
        throw ShapeError(strf(op, ": kernel must be cubic, got ", shape_str(weight.shape())));
    if (input.extent(1) != weight.extent(in_ch_axis))
        throw ShapeError(strf(op, ": input channel axis (1) = ", input.extent(1),
                              " does not match weight axis (", in_ch_axis, ") = ", weight.extent(in_ch_axis)));
    int out_ch_axis = 1 - in_ch_axis;
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != weight.extent(out_ch_axis)))
        throw ShapeError(strf(op, ": bias shape ", shape_str(bias.shape()), " does not match ",
                              weight.extent(out_ch_axis), " output channels"));
}

// Output-index range [lo, hi) for which o*stride - pad + tap lands inside
// [0, ext_in). Handles empty ranges.
inline int64_t tap_lo(int tap, int pad, int stride) {
    int64_t num = pad - tap;
    return num <= 0 ? 0 : (num + stride - 1) / stride;
}
inline int64_t tap_hi(int tap, int pad, int stride, int64_t ext_in, int64_t ext_out) {
    int64_t num = ext_in - 1 + pad - tap;
    if (num < 0) return 0;
    return std::min(ext_out, num / stride + 1);
}

// Core zero-padded cross-correlation with per-axis asymmetric pads.
template <typename T>
TensorT<T> conv3d_zero(Tape<T>& tape, const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                       int stride, Pad3 pad) {
    check_conv_args(input, weight, bias, stride, "conv3d", 1);
    const int64_t nb = input.extent(0), ci_n = input.extent(1);
    const int64_t d = input.extent(2), h = input.extent(3), w = input.extent(4);
    const int64_t co_n = weight.extent(0);
    const int k = int(weight.extent(2));
    const int64_t ext_in[3] = {d, h, w};
    int64_t ext_out[3];
    for (int a = 0; a < 3; ++a) {
        int64_t padded = ext_in[a] + pad.before[a] + pad.after[a];
        if (padded < k)
            throw ShapeError(strf("conv3d: padded extent ", padded, " on axis ", a + 2, " smaller than kernel ", k));
        ext_out[a] = (padded - k) / stride + 1;
    }
    const int64_t od = ext_out[0], oh = ext_out[1], ow = ext_out[2];
    auto out = TensorT<T>::zeros({nb, co_n, od, oh, ow});

    const T* pin = input.data();
    const T* pw = weight.data();
    const T* pb = bias.defined() ? bias.data() : nullptr;
    T* pout = out.data();
    const int pd = pad.before[0], ph = pad.before[1], px = pad.before[2];

    parallel_for(nb * co_n * od, [&](int64_t ulo, int64_t uhi) {
        for (int64_t u = ulo; u < uhi; ++u) {
            const int64_t oz = u % od;
            const int64_t nco = u / od;
            const int64_t co = nco % co_n;
            const int64_t n = nco / co_n;
            T* out_sl = pout + u * oh * ow;
            const T binit = pb ? pb[co] : T(0);
            for (int64_t i = 0; i < oh * ow; ++i) out_sl[i] = binit;
            for (int64_t ci = 0; ci < ci_n; ++ci) {
                const T* in_ch = pin + (n * ci_n + ci) * d * h * w;
                const T* w_ch = pw + (co * ci_n + ci) * k * k * k;
                for (int kd = 0; kd < k; ++kd) {
                    const int64_t iz = oz * stride - pd + kd;
                    if (iz < 0 || iz >= d) continue;
                    const T* in_sl = in_ch + iz * h * w;
                    for (int kh = 0; kh < k; ++kh) {
                        const int64_t oy_lo = tap_lo(kh, ph, stride), oy_hi = tap_hi(kh, ph, stride, h, oh);
                        for (int kw = 0; kw < k; ++kw) {
                            const T wv = w_ch[(kd * k + kh) * k + kw];
                            const int64_t ox_lo = tap_lo(kw, px, stride), ox_hi = tap_hi(kw, px, stride, w, ow);
                            const int64_t off = kw - px;
                            for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                                const T* in_row = in_sl + (oy * stride - ph + kh) * w;
                                T* out_row = out_sl + oy * ow;
                                if (stride == 1) {
                                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                        out_row[ox] += wv * in_row[ox + off];
                                } else {
                                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                        out_row[ox] += wv * in_row[ox * stride + off];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    if (track(tape, {&input, &weight, &bias})) {
        out.set_requires_grad(true);
        TensorT<T> in_c = input, w_c = weight, b_c = bias;
        tape.record([in_c, w_c, b_c, out, stride, pad, nb, ci_n, co_n, d, h, w, od, oh, ow, k]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_ref().data();
            const int pd = pad.before[0], ph = pad.before[1], px = pad.before[2];
            if (b_c.defined() && b_c.requires_grad()) {
                auto& gb = b_c.grad();
                parallel_for(co_n, [&](int64_t lo, int64_t hi) {
                    for (int64_t co = lo; co < hi; ++co) {
                        double acc = 0;
                        for (int64_t n = 0; n < nb; ++n) {
                            const T* gs = g + (n * co_n + co) * od * oh * ow;
                            for (int64_t i = 0; i < od * oh * ow; ++i) acc += double(gs[i]);
                        }
                        gb[size_t(co)] += T(acc);
                    }
                });
            }
            if (w_c.requires_grad()) {
                auto& gw = w_c.grad();
                const T* pin = in_c.data();
                parallel_for(co_n * ci_n, [&](int64_t lo, int64_t hi) {
                    for (int64_t cc = lo; cc < hi; ++cc) {
                        const int64_t co = cc / ci_n, ci = cc % ci_n;
                        T* gw_ch = gw.data() + cc * k * k * k;
                        for (int kd = 0; kd < k; ++kd) {
                            const int64_t oz_lo = tap_lo(kd, pd, stride), oz_hi = tap_hi(kd, pd, stride, d, od);
                            for (int kh = 0; kh < k; ++kh) {
                                const int64_t oy_lo = tap_lo(kh, ph, stride), oy_hi = tap_hi(kh, ph, stride, h, oh);
                                for (int kw = 0; kw < k; ++kw) {
                                    const int64_t ox_lo = tap_lo(kw, px, stride),
                                                  ox_hi = tap_hi(kw, px, stride, w, ow);
                                    const int64_t off = kw - px;
                                    double acc = 0;
                                    for (int64_t n = 0; n < nb; ++n) {
                                        const T* g_ch = g + (n * co_n + co) * od * oh * ow;
                                        const T* in_ch = pin + (n * ci_n + ci) * d * h * w;
                                        for (int64_t oz = oz_lo; oz < oz_hi; ++oz) {
                                            const T* in_sl = in_ch + (oz * stride - pd + kd) * h * w;
                                            const T* g_sl = g_ch + oz * oh * ow;
                                            for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                                                const T* in_row = in_sl + (oy * stride - ph + kh) * w;
                                                const T* g_row = g_sl + oy * ow;
                                                for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                                    acc += double(g_row[ox]) * double(in_row[ox * stride + off]);
                                            }
                                        }
                                    }
                                    gw_ch[(kd * k + kh) * k + kw] += T(acc);
                                }
                            }
                        }
                    }
                });
            }
            if (in_c.requires_grad()) {
                auto& gin = in_c.grad();
                const T* pw = w_c.data();
                parallel_for(nb * ci_n * d, [&](int64_t lo, int64_t hi) {
                    for (int64_t u = lo; u < hi; ++u) {
                        const int64_t iz = u % d;
                        const int64_t nci = u / d;
                        const int64_t ci = nci % ci_n;
                        const int64_t n = nci / ci_n;
                        T* gin_sl = gin.data() + u * h * w;
                        for (int64_t co = 0; co < co_n; ++co) {
                            const T* g_ch = g + (n * co_n + co) * od * oh * ow;
                            const T* w_ch = pw + (co * ci_n + ci) * k * k * k;
                            for (int kd = 0; kd < k; ++kd) {
                                const int64_t num = iz + pd - kd;
                                if (num < 0 || num % stride != 0) continue;
                                const int64_t oz = num / stride;
                                if (oz >= od) continue;
                                const T* g_sl = g_ch + oz * oh * ow;
                                for (int kh = 0; kh < k; ++kh) {
                                    const int64_t oy_lo = tap_lo(kh, ph, stride), oy_hi = tap_hi(kh, ph, stride, h, oh);
                                    for (int kw = 0; kw < k; ++kw) {
                                        const T wv = w_ch[(kd * k + kh) * k + kw];
                                        if (wv == T(0)) continue;
                                        const int64_t ox_lo = tap_lo(kw, px, stride),
                                                      ox_hi = tap_hi(kw, px, stride, w, ow);
                                        const int64_t off = kw - px;
                                        for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                                            const T* g_row = g_sl + oy * ow;
                                            T* gin_row = gin_sl + (oy * stride - ph + kh) * w;
                                            for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                                gin_row[ox * stride + off] += wv * g_row[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

}  // namespace detail

// Symmetric padding per the public contract: zero-pad(n) or reflection-pad(n).
// Reflection is composed as an explicit pad op so its gradient reuses the
// pad's backward rule.
template <typename T>
TensorT<T> conv3d(Tape<T>& tape, const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, PadSpec pad) {
    if (pad.amount < 0) throw ShapeError("conv3d: negative padding");
    if (pad.kind == PadSpec::Kind::Reflect && pad.amount > 0) {
        auto padded = reflection_pad3d(tape, input, pad.amount);
        return detail::conv3d_zero(tape, padded, weight, bias, stride, detail::Pad3{});
    }
    return detail::conv3d_zero(tape, input, weight, bias, stride, detail::Pad3::sym(pad.amount));
}

// Keras-style SAME zero padding (output extent = ceil(in/stride)), possibly
// asymmetric. Needed by the patch discriminator.
template <typename T>
TensorT<T> conv3d_same(Tape<T>& tape, const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                       int stride) {
    detail::check_rank5(input, "conv3d", "input");
    detail::Pad3 pad;
    int k = int(weight.extent(2));
    for (int a = 0; a < 3; ++a) detail::same_pads(input.extent(a + 2), k, stride, pad.before[a], pad.after[a]);
    return detail::conv3d_zero(tape, input, weight, bias, stride, pad);
}

// Transposed (fractionally strided) convolution; output extent (D-1)*stride+k.
template <typename T>
TensorT<T> conv_transpose3d(Tape<T>& tape, const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                            int stride) {
    detail::check_conv_args(input, weight, bias, stride, "conv_transpose3d", 0);
    const int64_t nb = input.extent(0), ci_n = input.extent(1);
    const int64_t d = input.extent(2), h = input.extent(3), w = input.extent(4);
    const int64_t co_n = weight.extent(1);
    const int k = int(weight.extent(2));
    const int64_t od = (d - 1) * stride + k, oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
    auto out = TensorT<T>::zeros({nb, co_n, od, oh, ow});

    const T* pin = input.data();
    const T* pw = weight.data();
    const T* pb = bias.defined() ? bias.data() : nullptr;
    T* pout = out.data();

    parallel_for(nb * co_n * od, [&](int64_t ulo, int64_t uhi) {
        for (int64_t u = ulo; u < uhi; ++u) {
            const int64_t oz = u % od;
            const int64_t nco = u / od;
            const int64_t co = nco % co_n;
            const int64_t n = nco / co_n;
            T* out_sl = pout + u * oh * ow;
            const T binit = pb ? pb[co] : T(0);
            for (int64_t i = 0; i < oh * ow; ++i) out_sl[i] = binit;
            for (int64_t ci = 0; ci < ci_n; ++ci) {
                const T* in_ch = pin + (n * ci_n + ci) * d * h * w;
                const T* w_ch = pw + (ci * co_n + co) * k * k * k;
                for (int kd = 0; kd < k; ++kd) {
                    const int64_t num = oz - kd;
                    if (num < 0 || num % stride != 0) continue;
                    const int64_t z = num / stride;
                    if (z >= d) continue;
                    const T* in_sl = in_ch + z * h * w;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw) {
                            const T wv = w_ch[(kd * k + kh) * k + kw];
                            if (wv == T(0)) continue;
                            for (int64_t y = 0; y < h; ++y) {
                                const T* in_row = in_sl + y * w;
                                T* out_row = out_sl + (y * stride + kh) * ow + kw;
                                for (int64_t x = 0; x < w; ++x) out_row[x * stride] += wv * in_row[x];
                            }
                        }
                }
            }
        }
    });

    if (detail::track(tape, {&input, &weight, &bias})) {
        out.set_requires_grad(true);
        TensorT<T> in_c = input, w_c = weight, b_c = bias;
        tape.record([in_c, w_c, b_c, out, stride, nb, ci_n, co_n, d, h, w, od, oh, ow, k]() mutable {
            if (!out.has_grad()) return;
            const T* g = out.grad_ref().data();
            if (b_c.defined() && b_c.requires_grad()) {
                auto& gb = b_c.grad();
                parallel_for(co_n, [&](int64_t lo, int64_t hi) {
                    for (int64_t co = lo; co < hi; ++co) {
                        double acc = 0;
                        for (int64_t n = 0; n < nb; ++n) {
                            const T* gs = g + (n * co_n + co) * od * oh * ow;
                            for (int64_t i = 0; i < od * oh * ow; ++i) acc += double(gs[i]);
                        }
                        gb[size_t(co)] += T(acc);
                    }
                });
            }
            if (w_c.requires_grad()) {
                auto& gw = w_c.grad();
                const T* pin = in_c.data();
                parallel_for(ci_n * co_n, [&](int64_t lo, int64_t hi) {
                    for (int64_t cc = lo; cc < hi; ++cc) {
                        const int64_t ci = cc / co_n, co = cc % co_n;
                        T* gw_ch = gw.data() + cc * k * k * k;
                        for (int kd = 0; kd < k; ++kd)
                            for (int kh = 0; kh < k; ++kh)
                                for (int kw = 0; kw < k; ++kw) {
                                    double acc = 0;
                                    for (int64_t n = 0; n < nb; ++n) {
                                        const T* in_ch = pin + (n * ci_n + ci) * d * h * w;
                                        const T* g_ch = g + (n * co_n + co) * od * oh * ow;
                                        for (int64_t z = 0; z < d; ++z) {
                                            const T* in_sl = in_ch + z * h * w;
                                            const T* g_sl = g_ch + (z * stride + kd) * oh * ow;
                                            for (int64_t y = 0; y < h; ++y) {
                                                const T* in_row = in_sl + y * w;
                                                const T* g_row = g_sl + (y * stride + kh) * ow + kw;
                                                for (int64_t x = 0; x < w; ++x)
                                                    acc += double(in_row[x]) * double(g_row[x * stride]);
                                            }
                                        }
                                    }
                                    gw_ch[(kd * k + kh) * k + kw] += T(acc);
                                }
                    }
                });
            }
            if (in_c.requires_grad()) {
                auto& gin = in_c.grad();
                const T* pw = w_c.data();
                parallel_for(nb * ci_n * d, [&](int64_t lo, int64_t hi) {
                    for (int64_t u = lo; u < hi; ++u) {
                        const int64_t z = u % d;
                        const int64_t nci = u / d;
                        const int64_t ci = nci % ci_n;
                        const int64_t n = nci / ci_n;
                        T* gin_sl = gin.data() + u * h * w;
                        for (int64_t co = 0; co < co_n; ++co) {
                            const T* g_ch = g + (n * co_n + co) * od * oh * ow;
                            const T* w_ch = pw + (ci * co_n + co) * k * k * k;
                            for (int kd = 0; kd < k; ++kd) {
                                const T* g_sl = g_ch + (z * stride + kd) * oh * ow;
                                for (int kh = 0; kh < k; ++kh)
                                    for (int kw = 0; kw < k; ++kw) {
                                        const T wv = w_ch[(kd * k + kh) * k + kw];
                                        if (wv == T(0)) continue;
                                        for (int64_t y = 0; y < h; ++y) {
                                            const T* g_row = g_sl + (y * stride + kh) * ow + kw;
                                            T* gin_row = gin_sl + y * w;
                                            for (int64_t x = 0; x < w; ++x) gin_row[x] += wv * g_row[x * stride];
                                        }
                                    }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

}  // namespace volshift
