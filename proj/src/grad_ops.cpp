#include "mcan/grad_ops.hpp"

#include <algorithm>
#include <cmath>

namespace mcan {

template <typename T>
TensorT<T> conv2d_grad_input(const TensorT<T>& grad_out, const ConvSpec& spec,
                             const TensorT<T>& weight, const Shape& in_shape) {
    if (grad_out.shape != spec.out_shape(in_shape))
        throw ShapeError("conv2d_grad_input: grad shape " + grad_out.shape.str() +
                         " does not match output of " + in_shape.str());
    TensorT<T> gx(in_shape);
    const int64_t W = in_shape.w, OH = grad_out.shape.h, OW = grad_out.shape.w;
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int p = spec.pad;

    parallel_for(in_shape.n * in_shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / in_shape.c;
            const int ic = static_cast<int>(t % in_shape.c);
            const int g = ic / icg;
            const int ici = ic % icg;
            T* gp = gx.plane(n, ic);
            for (int kh = 0; kh < spec.kh; ++kh) {
                for (int oci = 0; oci < ocg; ++oci) {
                    const int oc = g * ocg + oci;
                    const T* wrow = &weight.data[((static_cast<int64_t>(oc) * icg + ici) *
                                                      spec.kh + kh) * spec.kw];
                    const T* goplane = grad_out.plane(n, oc);
                    for (int64_t ih = 0; ih < in_shape.h; ++ih) {
                        const int64_t oh = ih + p - kh;
                        if (oh < 0 || oh >= OH) continue;
                        const T* grow = goplane + oh * OW;
                        T* grow_x = gp + ih * W;
                        for (int kw = 0; kw < spec.kw; ++kw) {
                            const T wv = wrow[kw];
                            const int64_t lo_i = std::max<int64_t>(0, kw - p);
                            const int64_t hi_i = std::min<int64_t>(W, OW + kw - p);
                            const T* gr = grow + p - kw;
                            for (int64_t iw = lo_i; iw < hi_i; ++iw)
                                grow_x[iw] += wv * gr[iw];
                        }
                    }
                }
            }
        }
    });
    return gx;
}

template <typename T>
TensorT<T> conv2d_grad_weight(const TensorT<T>& grad_out, const ConvSpec& spec,
                              const TensorT<T>& input) {
    TensorT<T> gw(spec.weight_shape());
    const int64_t H = input.shape.h, W = input.shape.w;
    const int64_t OH = grad_out.shape.h, OW = grad_out.shape.w;
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int p = spec.pad;

    parallel_for(spec.out_channels, [&](int64_t lo, int64_t hi) {
        for (int64_t oc = lo; oc < hi; ++oc) {
            const int g = static_cast<int>(oc) / ocg;
            for (int ic = 0; ic < icg; ++ic)
                for (int kh = 0; kh < spec.kh; ++kh)
                    for (int kw = 0; kw < spec.kw; ++kw) {
                        T sum = 0;
                        for (int64_t n = 0; n < input.shape.n; ++n) {
                            const T* gp = grad_out.plane(n, oc);
                            const T* ip = input.plane(n, g * icg + ic);
                            for (int64_t oh = 0; oh < OH; ++oh) {
                                const int64_t ih = oh - p + kh;
                                if (ih < 0 || ih >= H) continue;
                                const T* grow = gp + oh * OW;
                                const T* irow = ip + ih * W - p + kw;
                                const int64_t lo_w = std::max<int64_t>(0, p - kw);
                                const int64_t hi_w = std::min<int64_t>(OW, W + p - kw);
                                for (int64_t ow = lo_w; ow < hi_w; ++ow)
                                    sum += grow[ow] * irow[ow];
                            }
                        }
                        gw.data[((oc * icg + ic) * spec.kh + kh) * spec.kw + kw] = sum;
                    }
        }
    });
    return gw;
}

template <typename T>
TensorT<T> conv2d_grad_bias(const TensorT<T>& grad_out) {
    TensorT<T> gb({grad_out.shape.c, 1, 1, 1});
    const int64_t hw = grad_out.shape.h * grad_out.shape.w;
    for (int64_t c = 0; c < grad_out.shape.c; ++c) {
        T sum = 0;
        for (int64_t n = 0; n < grad_out.shape.n; ++n) {
            const T* p = grad_out.plane(n, c);
            for (int64_t i = 0; i < hw; ++i) sum += p[i];
        }
        gb.data[c] = sum;
    }
    return gb;
}

template <typename T>
TensorT<T> relu_grad(const TensorT<T>& input, const TensorT<T>& grad_out) {
    TensorT<T> gx(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i)
        gx.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0);
    return gx;
}

template <typename T>
TensorT<T> sigmoid_grad(const TensorT<T>& output, const TensorT<T>& grad_out) {
    TensorT<T> gx(output.shape);
    for (int64_t i = 0; i < output.numel(); ++i) {
        const T y = output.data[i];
        gx.data[i] = grad_out.data[i] * y * (T(1) - y);
    }
    return gx;
}

template <typename T>
TensorT<T> fast_sigmoid_grad(const TensorT<T>& input, const TensorT<T>& grad_out) {
    TensorT<T> gx(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i) {
        const T d = T(1) + std::abs(input.data[i]);
        gx.data[i] = grad_out.data[i] / (d * d);
    }
    return gx;
}

template <typename T>
TensorT<T> global_avg_pool_grad(const Shape& in_shape, const TensorT<T>& grad_out) {
    TensorT<T> gx(in_shape);
    const int64_t hw = in_shape.h * in_shape.w;
    for (int64_t n = 0; n < in_shape.n; ++n)
        for (int64_t c = 0; c < in_shape.c; ++c) {
            const T g = grad_out.at(n, c, 0, 0) / static_cast<T>(hw);
            T* p = gx.plane(n, c);
            for (int64_t i = 0; i < hw; ++i) p[i] = g;
        }
    return gx;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> scale_channels_grads(const TensorT<T>& t, const TensorT<T>& s,
                                                       const TensorT<T>& grad_out) {
    TensorT<T> gx(t.shape);
    TensorT<T> gs(s.shape);
    const int64_t hw = t.shape.h * t.shape.w;
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T sc = s.at(n, c, 0, 0);
            const T* ip = t.plane(n, c);
            const T* gp = grad_out.plane(n, c);
            T* gxp = gx.plane(n, c);
            T sum = 0;
            for (int64_t i = 0; i < hw; ++i) {
                gxp[i] = sc * gp[i];
                sum += ip[i] * gp[i];
            }
            gs.at(n, c, 0, 0) = sum;
        }
    return {std::move(gx), std::move(gs)};
}

template <typename T>
TensorT<T> pixel_shuffle_grad(const TensorT<T>& grad_out, int s) {
    if (s == 1) return grad_out;
    const Shape os = grad_out.shape;
    TensorT<T> gx({os.n, os.c * s * s, os.h / s, os.w / s});
    for (int64_t n = 0; n < os.n; ++n)
        for (int64_t c = 0; c < os.c; ++c) {
            const T* gp = grad_out.plane(n, c);
            for (int sh = 0; sh < s; ++sh)
                for (int sw = 0; sw < s; ++sw) {
                    T* xp = gx.plane(n, c * s * s + sh * s + sw);
                    for (int64_t y = 0; y < gx.shape.h; ++y) {
                        const T* grow = gp + (y * s + sh) * os.w + sw;
                        T* xrow = xp + y * gx.shape.w;
                        for (int64_t x = 0; x < gx.shape.w; ++x) xrow[x] = grow[x * s];
                    }
                }
        }
    return gx;
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, int64_t c0, int64_t count) {
    if (c0 < 0 || c0 + count > t.shape.c)
        throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + count) + ") out of " + std::to_string(t.shape.c));
    TensorT<T> out({t.shape.n, count, t.shape.h, t.shape.w});
    const int64_t hw = t.shape.h * t.shape.w;
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < count; ++c)
            std::copy_n(t.plane(n, c0 + c), hw, out.plane(n, c));
    return out;
}

template TensorT<float> conv2d_grad_input(const TensorT<float>&, const ConvSpec&, const TensorT<float>&, const Shape&);
template TensorT<double> conv2d_grad_input(const TensorT<double>&, const ConvSpec&, const TensorT<double>&, const Shape&);
template TensorT<float> conv2d_grad_weight(const TensorT<float>&, const ConvSpec&, const TensorT<float>&);
template TensorT<double> conv2d_grad_weight(const TensorT<double>&, const ConvSpec&, const TensorT<double>&);
template TensorT<float> conv2d_grad_bias(const TensorT<float>&);
template TensorT<double> conv2d_grad_bias(const TensorT<double>&);
template TensorT<float> relu_grad(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> relu_grad(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> sigmoid_grad(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> sigmoid_grad(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> fast_sigmoid_grad(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> fast_sigmoid_grad(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> global_avg_pool_grad(const Shape&, const TensorT<float>&);
template TensorT<double> global_avg_pool_grad(const Shape&, const TensorT<double>&);
template std::pair<TensorT<float>, TensorT<float>> scale_channels_grads(const TensorT<float>&, const TensorT<float>&, const TensorT<float>&);
template std::pair<TensorT<double>, TensorT<double>> scale_channels_grads(const TensorT<double>&, const TensorT<double>&, const TensorT<double>&);
template TensorT<float> pixel_shuffle_grad(const TensorT<float>&, int);
template TensorT<double> pixel_shuffle_grad(const TensorT<double>&, int);
template TensorT<float> slice_channels(const TensorT<float>&, int64_t, int64_t);
template TensorT<double> slice_channels(const TensorT<double>&, int64_t, int64_t);

}  // namespace mcan
