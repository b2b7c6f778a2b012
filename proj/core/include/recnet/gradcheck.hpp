#pragma once

#include <functional>

#include "recnet/tensor.hpp"

namespace recnet {

// Compares the reverse-mode gradient of the scalar-valued function f
// against central differences, coordinate by coordinate, and returns the
// worst relative error max|numeric - analytic| / max(|numeric|,
// |analytic|, 1e-8).
//
// Two precision measures keep float32 storage out of the verdict: the
// difference quotient divides by the perturbation actually realized after
// rounding the shifted coordinate to float32, and f's value is read
// through the double-precision shadow carried by reductions.
double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& point, double h = 1e-3);

}  // namespace recnet
