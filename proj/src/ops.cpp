#include "bem/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bem/error.hpp"

namespace bem {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

bool is_pointwise(const Conv2dGeometry& g) {
    return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

// Column matrix [C_in*kh*kw, H'*W'] of zero-padded input patches.
std::vector<double> im2col(std::span<const double> in, const Conv2dGeometry& g) {
    const std::size_t cols = g.out_h * g.out_w;
    std::vector<double> out(g.in_channels * g.kernel_h * g.kernel_w * cols, 0.0);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = in.data() + c * g.in_h * g.in_w;
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
                double* dst = out.data() + row * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    const double* src_row = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                        dst[oy * g.out_w + ox] = src_row[ix];
                    }
                }
            }
        }
    }
    return out;
}

// Adjoint of im2col: scatters column gradients back onto the input planes.
void col2im(std::span<const double> cols_data, const Conv2dGeometry& g, std::span<double> out) {
    const std::size_t cols = g.out_h * g.out_w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = out.data() + c * g.in_h * g.in_w;
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
                const double* src = cols_data.data() + row * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    double* dst_row = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                        dst_row[ix] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

struct AxisTaps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps taps;
    taps.lo.resize(out);
    taps.hi.resize(out);
    taps.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double max_src = static_cast<double>(in - 1);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, max_src);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        taps.lo[d] = lo;
        taps.hi[d] = std::min(lo + 1, in - 1);
        taps.frac[d] = src - static_cast<double>(lo);
    }
    return taps;
}

}  // namespace

Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding) {
    if (input.size() != 3 || kernel.size() != 4) {
        throw DimensionError("conv2d expects input [C,H,W] and kernel [Co,Ci,kh,kw], got " + shape_to_string(input) +
                             " and " + shape_to_string(kernel));
    }
    if (input[0] != kernel[1]) {
        throw DimensionError("conv2d channel mismatch: input " + shape_to_string(input) + ", kernel " +
                             shape_to_string(kernel));
    }
    if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
    const std::size_t ph = input[1] + 2 * padding, pw = input[2] + 2 * padding;
    if (kernel[2] > ph || kernel[3] > pw) {
        throw DimensionError("conv2d kernel " + shape_to_string(kernel) + " larger than padded input " +
                             shape_to_string(input));
    }
    return Conv2dGeometry{input[0], input[1], input[2],        kernel[0],
                          kernel[2], kernel[3], stride,        padding,
                          (ph - kernel[2]) / stride + 1, (pw - kernel[3]) / stride + 1};
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
    const auto g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding);
    const std::size_t cols = g.out_h * g.out_w;
    const std::size_t inner = g.in_channels * g.kernel_h * g.kernel_w;
    Tensor out({g.out_channels, g.out_h, g.out_w}, narrowest(input.dtype(), kernel.dtype()));
    ConstMap k(kernel.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(inner));
    MutMap o(out.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(cols));
    if (is_pointwise(g)) {
        ConstMap x(input.data().data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        o.noalias() = k * x;
    } else {
        const auto patches = im2col(input.data(), g);
        ConstMap x(patches.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        o.noalias() = k * x;
    }
    out.publish("conv2d");
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape, std::size_t stride,
                         std::size_t padding) {
    const auto g = conv2d_geometry(input_shape, kernel.shape(), stride, padding);
    const std::size_t cols = g.out_h * g.out_w;
    const std::size_t inner = g.in_channels * g.kernel_h * g.kernel_w;
    ConstMap k(kernel.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(inner));
    ConstMap go(grad_out.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(cols));
    Tensor grad(input_shape);
    if (is_pointwise(g)) {
        MutMap gi(grad.data().data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        gi.noalias() = k.transpose() * go;
    } else {
        std::vector<double> gcols(inner * cols);
        MutMap gc(gcols.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        gc.noalias() = k.transpose() * go;
        col2im(gcols, g, grad.data());
    }
    return grad;
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const Shape& kernel_shape, std::size_t stride,
                          std::size_t padding) {
    const auto g = conv2d_geometry(input.shape(), kernel_shape, stride, padding);
    const std::size_t cols = g.out_h * g.out_w;
    const std::size_t inner = g.in_channels * g.kernel_h * g.kernel_w;
    ConstMap go(grad_out.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(cols));
    Tensor grad(kernel_shape);
    MutMap gk(grad.data().data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(inner));
    if (is_pointwise(g)) {
        ConstMap x(input.data().data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        gk.noalias() = go * x.transpose();
    } else {
        const auto patches = im2col(input.data(), g);
        ConstMap x(patches.data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));
        gk.noalias() = go * x.transpose();
    }
    return grad;
}

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    expect_rank(input, 3, "bilinear_resize");
    if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize target size must be >= 1");
    const std::size_t channels = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
    const auto ty = axis_taps(in_h, out_h);
    const auto tx = axis_taps(in_w, out_w);
    Tensor out({channels, out_h, out_w}, input.dtype());
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            const double fy = ty.frac[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const double fx = tx.frac[x];
                const double top = input.at(c, ty.lo[y], tx.lo[x]) * (1.0 - fx) + input.at(c, ty.lo[y], tx.hi[x]) * fx;
                const double bot = input.at(c, ty.hi[y], tx.lo[x]) * (1.0 - fx) + input.at(c, ty.hi[y], tx.hi[x]) * fx;
                out.at(c, y, x) = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out.publish("bilinear_resize");
    return out;
}

Tensor bilinear_resize_grad(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
    expect_rank(grad_out, 3, "bilinear_resize_grad");
    const std::size_t channels = grad_out.dim(0), out_h = grad_out.dim(1), out_w = grad_out.dim(2);
    const auto ty = axis_taps(in_h, out_h);
    const auto tx = axis_taps(in_w, out_w);
    Tensor grad({channels, in_h, in_w});
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            const double fy = ty.frac[y];
            for (std::size_t x = 0; x < out_w; ++x) {
                const double fx = tx.frac[x];
                const double g = grad_out.at(c, y, x);
                grad.at(c, ty.lo[y], tx.lo[x]) += g * (1.0 - fy) * (1.0 - fx);
                grad.at(c, ty.lo[y], tx.hi[x]) += g * (1.0 - fy) * fx;
                grad.at(c, ty.hi[y], tx.lo[x]) += g * fy * (1.0 - fx);
                grad.at(c, ty.hi[y], tx.hi[x]) += g * fy * fx;
            }
        }
    }
    return grad;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    expect_rank(a, 3, "concat_channels");
    expect_rank(b, 3, "concat_channels");
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw DimensionError("concat_channels spatial mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, narrowest(a.dtype(), b.dtype()));
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.numel()));
    out.publish("concat_channels");
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    expect_rank(x, 3, "add_channel_bias");
    if (bias.numel() != x.dim(0)) {
        throw DimensionError("bias of shape " + shape_to_string(bias.shape()) + " does not match channels of " +
                             shape_to_string(x.shape()));
    }
    Tensor out(x.shape(), narrowest(x.dtype(), bias.dtype()));
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < x.dim(0); ++c) {
        for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = x[c * plane + i] + bias[c];
    }
    out.publish("add_channel_bias");
    return out;
}

double sum(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

double mean(const Tensor& t) { return sum(t) / static_cast<double>(t.numel()); }

}  // namespace bem
