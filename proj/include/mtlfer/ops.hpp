#pragma once

#include <span>
#include <vector>

#include "mtlfer/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes its output,
// and when any operand requires grad and the tape is recording, registers a
// backward rule that accumulates into the operands' gradients.
//
// Layouts: images are NCHW, matrices are row-major N×D, conv kernels are
// O×I×K×K and linear weights are D×M (input-major).

namespace mtlfer::ops {

/// 2-D cross-correlation with square kernel, zero padding and bias.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, Tensor<T> input, Tensor<T> kernel,
                 Tensor<T> bias, int stride, int padding);

/// out = input · weight + bias.
template <typename T>
Tensor<T> linear(Tape<T>& tape, Tensor<T> input, Tensor<T> weight,
                 Tensor<T> bias);

template <typename T>
Tensor<T> relu(Tape<T>& tape, Tensor<T> input);

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, Tensor<T> input);

/// Row-wise softmax of an N×C tensor (max-subtracted).
template <typename T>
Tensor<T> softmax(Tape<T>& tape, Tensor<T> input);

/// NCHW -> N×C mean over the spatial axes.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, Tensor<T> input);

/// NCHW -> N×C maximum over the spatial axes. Ties route to the first max.
template <typename T>
Tensor<T> global_max_pool(Tape<T>& tape, Tensor<T> input);

/// 2×2 window, stride 2. H and W must be even. Ties route to the first max.
template <typename T>
Tensor<T> max_pool2x2(Tape<T>& tape, Tensor<T> input);

/// Row-wise concatenation of N×Da and N×Db.
template <typename T>
Tensor<T> concat(Tape<T>& tape, Tensor<T> a, Tensor<T> b);

/// Sum of all entries, as a 1-element tensor.
template <typename T>
Tensor<T> sum(Tape<T>& tape, Tensor<T> input);

template <typename T>
Tensor<T> add(Tape<T>& tape, Tensor<T> a, Tensor<T> b);

/// Element-wise product of equal shapes.
template <typename T>
Tensor<T> mul(Tape<T>& tape, Tensor<T> a, Tensor<T> b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, Tensor<T> input, T factor);

/// feat[n,c,h,w] * gates[n,c].
template <typename T>
Tensor<T> channel_gate(Tape<T>& tape, Tensor<T> feat, Tensor<T> gates);

/// feat[n,c,h,w] * map[n,0,h,w].
template <typename T>
Tensor<T> spatial_gate(Tape<T>& tape, Tensor<T> feat, Tensor<T> map);

/// Element-wise mean of equally shaped tensors, reduced in list order.
template <typename T>
Tensor<T> mean_of(Tape<T>& tape, std::span<const Tensor<T>> inputs);

}  // namespace mtlfer::ops
