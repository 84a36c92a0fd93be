#pragma once

#include <functional>
#include <span>

#include "mtlfer/tensor.hpp"

namespace mtlfer {

/// Scalar-valued function of whatever tensors it closes over, built on the
/// given tape.
using ScalarFn = std::function<Tensor<double>(Tape<double>&)>;

/// Max over every coordinate of every tensor in `wrt` of
/// |analytic - central difference| / max(1, |analytic|).
///
/// The tensors are perturbed in place and restored afterwards; they must
/// have requires_grad set. Existing gradients are cleared.
double finite_diff_check(const ScalarFn& f, std::span<Tensor<double>> wrt, double eps = 1e-5);

/// Single-input form: f is applied to x.
double finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                         Tensor<double> x, double eps = 1e-5);

}  // namespace mtlfer
