#pragma once

#include <cstddef>

#include "bem/tape.hpp"

// Differentiable operations. Operands must live on the same tape; results are
// recorded on it.
namespace bem::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var square(Var a);
Var abs(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
// x * sigmoid(x), the backbone nonlinearity.
Var silu(Var a);

// Reductions to a [1] tensor.
Var sum(Var a);
Var mean(Var a);

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
Var add_channel_bias(Var x, Var bias);
Var bilinear_resize(Var input, std::size_t out_h, std::size_t out_w);
Var concat_channels(Var a, Var b);

}  // namespace bem::ad
