#pragma once

#include "mcan/tensor.hpp"

#include <utility>

namespace mcan {

// Adjoints of the forward primitives. Same determinism contract: fixed
// accumulation order per output element at any thread count.

template <typename T>
TensorT<T> conv2d_grad_input(const TensorT<T>& grad_out, const ConvSpec& spec,
                             const TensorT<T>& weight, const Shape& in_shape);

template <typename T>
TensorT<T> conv2d_grad_weight(const TensorT<T>& grad_out, const ConvSpec& spec,
                              const TensorT<T>& input);

template <typename T>
TensorT<T> conv2d_grad_bias(const TensorT<T>& grad_out);

template <typename T>
TensorT<T> relu_grad(const TensorT<T>& input, const TensorT<T>& grad_out);

// Takes the forward *output* y: d/dx sigmoid = y (1 - y).
template <typename T>
TensorT<T> sigmoid_grad(const TensorT<T>& output, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> fast_sigmoid_grad(const TensorT<T>& input, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> global_avg_pool_grad(const Shape& in_shape, const TensorT<T>& grad_out);

// Returns {grad wrt t, grad wrt s}.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> scale_channels_grads(const TensorT<T>& t, const TensorT<T>& s,
                                                       const TensorT<T>& grad_out);

template <typename T>
TensorT<T> pixel_shuffle_grad(const TensorT<T>& grad_out, int s);

// Channel slice [c0, c0+count) of t; the concat adjoint.
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, int64_t c0, int64_t count);

extern template TensorT<float> conv2d_grad_input(const TensorT<float>&, const ConvSpec&, const TensorT<float>&, const Shape&);
extern template TensorT<double> conv2d_grad_input(const TensorT<double>&, const ConvSpec&, const TensorT<double>&, const Shape&);
extern template TensorT<float> conv2d_grad_weight(const TensorT<float>&, const ConvSpec&, const TensorT<float>&);
extern template TensorT<double> conv2d_grad_weight(const TensorT<double>&, const ConvSpec&, const TensorT<double>&);
extern template TensorT<float> conv2d_grad_bias(const TensorT<float>&);
extern template TensorT<double> conv2d_grad_bias(const TensorT<double>&);
extern template TensorT<float> relu_grad(const TensorT<float>&, const TensorT<float>&);
extern template TensorT<double> relu_grad(const TensorT<double>&, const TensorT<double>&);
extern template TensorT<float> sigmoid_grad(const TensorT<float>&, const TensorT<float>&);
extern template TensorT<double> sigmoid_grad(const TensorT<double>&, const TensorT<double>&);
extern template TensorT<float> fast_sigmoid_grad(const TensorT<float>&, const TensorT<float>&);
extern template TensorT<double> fast_sigmoid_grad(const TensorT<double>&, const TensorT<double>&);
extern template TensorT<float> global_avg_pool_grad(const Shape&, const TensorT<float>&);
extern template TensorT<double> global_avg_pool_grad(const Shape&, const TensorT<double>&);
extern template std::pair<TensorT<float>, TensorT<float>> scale_channels_grads(const TensorT<float>&, const TensorT<float>&, const TensorT<float>&);
extern template std::pair<TensorT<double>, TensorT<double>> scale_channels_grads(const TensorT<double>&, const TensorT<double>&, const TensorT<double>&);
extern template TensorT<float> pixel_shuffle_grad(const TensorT<float>&, int);
extern template TensorT<double> pixel_shuffle_grad(const TensorT<double>&, int);
extern template TensorT<float> slice_channels(const TensorT<float>&, int64_t, int64_t);
extern template TensorT<double> slice_channels(const TensorT<double>&, int64_t, int64_t);

}  // namespace mcan
