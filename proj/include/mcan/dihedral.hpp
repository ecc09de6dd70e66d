#pragma once

#include "mcan/tensor.hpp"

namespace mcan {

// The 8 symmetries of the square on NCHW tensors. Element k (0..7) applies
// a horizontal flip when k >= 4, then k%4 counterclockwise quarter turns.

template <typename T>
TensorT<T> flip_horizontal(const TensorT<T>& t) {
    TensorT<T> out(t.shape);
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T* ip = t.plane(n, c);
            T* op = out.plane(n, c);
            for (int64_t y = 0; y < t.shape.h; ++y)
                for (int64_t x = 0; x < t.shape.w; ++x)
                    op[y * t.shape.w + x] = ip[y * t.shape.w + (t.shape.w - 1 - x)];
        }
    return out;
}

template <typename T>
TensorT<T> rot90_ccw(const TensorT<T>& t) {
    TensorT<T> out({t.shape.n, t.shape.c, t.shape.w, t.shape.h});
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T* ip = t.plane(n, c);
            T* op = out.plane(n, c);
            // out(y, x) = in(x, W-1-y)
            for (int64_t y = 0; y < out.shape.h; ++y)
                for (int64_t x = 0; x < out.shape.w; ++x)
                    op[y * out.shape.w + x] = ip[x * t.shape.w + (t.shape.w - 1 - y)];
        }
    return out;
}

template <typename T>
TensorT<T> apply_dihedral(const TensorT<T>& t, int k) {
    if (k < 0 || k > 7) throw ShapeError("apply_dihedral: index out of range");
    TensorT<T> out = k >= 4 ? flip_horizontal(t) : t;
    for (int i = 0; i < k % 4; ++i) out = rot90_ccw(out);
    return out;
}

// Pure rotations invert to the complementary rotation; the four reflected
// elements are involutions.
inline int dihedral_inverse(int k) {
    if (k < 0 || k > 7) throw ShapeError("dihedral_inverse: index out of range");
    return k < 4 ? (4 - k) % 4 : k;
}

}  // namespace mcan
