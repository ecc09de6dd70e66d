#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcan {

// Shape/format violations (bad dims, channel mismatches).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Malformed files: bad magic, CRC mismatch, unsupported PNG, truncation.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Non-finite values where finiteness is required (e.g. training loss).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Shape {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense NCHW tensor, row-major contiguous. TensorT<float> is the working
// type everywhere; the double instantiation backs high-precision oracles.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {}
    TensorT(Shape s, T fill) : shape(s), data(static_cast<size_t>(s.numel()), fill) {}

    int64_t numel() const { return shape.numel(); }

    T& at(int64_t n, int64_t c, int64_t y, int64_t x) {
        return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
    }
    T at(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
    }
    T* plane(int64_t n, int64_t c) {
        return data.data() + (n * shape.c + c) * shape.h * shape.w;
    }
    const T* plane(int64_t n, int64_t c) const {
        return data.data() + (n * shape.c + c) * shape.h * shape.w;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Convolution descriptor. Stride is always 1; padding is symmetric per side.
struct ConvSpec {
    int kh = 3, kw = 3;
    int in_channels = 0;
    int out_channels = 0;
    int groups = 1;
    int pad = 0;
    bool has_bias = true;

    void validate() const;
    Shape weight_shape() const {
        return {out_channels, in_channels / groups, kh, kw};
    }
    Shape out_shape(const Shape& in) const {
        return {in.n, out_channels, in.h + 2 * pad - kh + 1, in.w + 2 * pad - kw + 1};
    }
    int64_t weight_count() const {
        return static_cast<int64_t>(kh) * kw * (in_channels / groups) * out_channels;
    }
    int64_t param_count() const {
        return weight_count() + (has_bias ? out_channels : 0);
    }
};

inline ConvSpec conv3x3(int cin, int cout, int groups = 1) {
    return {3, 3, cin, cout, groups, 1, true};
}
inline ConvSpec conv1x1(int cin, int cout) {
    return {1, 1, cin, cout, 1, 0, true};
}

// --- primitive ops -------------------------------------------------------
// All primitives accumulate in a fixed order and produce bitwise-identical
// results for any thread count.

template <typename T>
TensorT<T> conv2d(const TensorT<T>& in, const ConvSpec& spec, const TensorT<T>& weight,
                  const TensorT<T>* bias = nullptr);

template <typename T>
TensorT<T> relu(const TensorT<T>& t);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& t);

// x / (1 + |x|): odd, range (-1, 1).
template <typename T>
TensorT<T> fast_sigmoid(const TensorT<T>& t);

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& t);

// s has shape (n, c, 1, 1); broadcasts over the spatial extent of t.
template <typename T>
TensorT<T> scale_channels(const TensorT<T>& t, const TensorT<T>& s);

// (n, c, h, w) -> (n, c/s^2, s*h, s*w), ESPCN channel ordering.
template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& t, int s);

// Integer upscale, align-corners-false with half-pixel centers.
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& t, int s);

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts);

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

extern template TensorT<float> conv2d(const TensorT<float>&, const ConvSpec&, const TensorT<float>&, const TensorT<float>*);
extern template TensorT<double> conv2d(const TensorT<double>&, const ConvSpec&, const TensorT<double>&, const TensorT<double>*);
extern template TensorT<float> relu(const TensorT<float>&);
extern template TensorT<double> relu(const TensorT<double>&);
extern template TensorT<float> sigmoid(const TensorT<float>&);
extern template TensorT<double> sigmoid(const TensorT<double>&);
extern template TensorT<float> fast_sigmoid(const TensorT<float>&);
extern template TensorT<double> fast_sigmoid(const TensorT<double>&);
extern template TensorT<float> global_avg_pool(const TensorT<float>&);
extern template TensorT<double> global_avg_pool(const TensorT<double>&);
extern template TensorT<float> scale_channels(const TensorT<float>&, const TensorT<float>&);
extern template TensorT<double> scale_channels(const TensorT<double>&, const TensorT<double>&);
extern template TensorT<float> pixel_shuffle(const TensorT<float>&, int);
extern template TensorT<double> pixel_shuffle(const TensorT<double>&, int);
extern template TensorT<float> bilinear_resize(const TensorT<float>&, int);
extern template TensorT<double> bilinear_resize(const TensorT<double>&, int);
extern template TensorT<float> concat_channels(const std::vector<const TensorT<float>*>&);
extern template TensorT<double> concat_channels(const std::vector<const TensorT<double>*>&);
extern template TensorT<float> concat_channels(const std::vector<TensorT<float>>&);
extern template TensorT<double> concat_channels(const std::vector<TensorT<double>>&);
extern template TensorT<float> add(const TensorT<float>&, const TensorT<float>&);
extern template TensorT<double> add(const TensorT<double>&, const TensorT<double>&);

// --- parallelism ---------------------------------------------------------

// Runs fn over [0, count) in contiguous chunks. Worker count comes from
// MCAN_THREADS (default: hardware concurrency) unless overridden.
void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& fn);

// Overrides the worker count for this process (0 = back to MCAN_THREADS).
void set_max_threads(int n);
int max_threads();

}  // namespace mcan
