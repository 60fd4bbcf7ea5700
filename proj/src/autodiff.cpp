#include "bem/autodiff.hpp"

#include <cmath>

#include "bem/error.hpp"
#include "bem/ops.hpp"

namespace bem::ad {

namespace {

Tape& common_tape(Var a, Var b) {
    if (!a.valid() || a.tape() != b.tape()) throw ContractError("operands are not on the same tape");
    return *a.tape();
}

Tape& tape_of(Var a) {
    if (!a.valid()) throw ContractError("use of an unbound Var");
    return *a.tape();
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Elementwise unary op with derivative d(x) evaluated on the input.
template <typename F, typename D>
Var unary(Var a, const char* name, F f, D d) {
    Tape& tape = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.shape(), x.dtype());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    out.publish(name);
    return tape.record(std::move(out), {a.id()}, [&tape, id = a.id(), d](const Tensor& g, auto slots) {
        const Tensor& xin = tape.value(id);
        Tensor& ga = *slots[0];
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * d(xin[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    expect_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape(), narrowest(a.value().dtype(), b.value().dtype()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    out.publish("add");
    return tape.record(std::move(out), {a.id(), b.id()}, [](const Tensor& g, auto slots) {
        for (auto* s : slots) {
            if (!s) continue;
            for (std::size_t i = 0; i < g.numel(); ++i) (*s)[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    expect_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape(), narrowest(a.value().dtype(), b.value().dtype()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    out.publish("sub");
    return tape.record(std::move(out), {a.id(), b.id()}, [](const Tensor& g, auto slots) {
        if (slots[0]) {
            for (std::size_t i = 0; i < g.numel(); ++i) (*slots[0])[i] += g[i];
        }
        if (slots[1]) {
            for (std::size_t i = 0; i < g.numel(); ++i) (*slots[1])[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    expect_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape(), narrowest(a.value().dtype(), b.value().dtype()));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    out.publish("mul");
    return tape.record(std::move(out), {a.id(), b.id()},
                       [&tape, ia = a.id(), ib = b.id()](const Tensor& g, auto slots) {
                           const Tensor& va = tape.value(ia);
                           const Tensor& vb = tape.value(ib);
                           if (slots[0]) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*slots[0])[i] += g[i] * vb[i];
                           }
                           if (slots[1]) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*slots[1])[i] += g[i] * va[i];
                           }
                       });
}

Var scale(Var a, double factor) {
    return unary(a, "scale", [factor](double x) { return x * factor; }, [factor](double) { return factor; });
}

Var add_scalar(Var a, double offset) {
    return unary(a, "add_scalar", [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Var square(Var a) {
    return unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var abs(Var a) {
    return unary(
        a, "abs", [](double x) { return std::abs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softplus(Var a) { return unary(a, "softplus", stable_softplus, stable_sigmoid); }

Var sigmoid(Var a) {
    return unary(a, "sigmoid", stable_sigmoid, [](double x) {
        const double s = stable_sigmoid(x);
        return s * (1.0 - s);
    });
}

Var silu(Var a) {
    return unary(
        a, "silu", [](double x) { return x * stable_sigmoid(x); },
        [](double x) {
            const double s = stable_sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Var sum(Var a) {
    Tape& tape = tape_of(a);
    Tensor out = Tensor::scalar(bem::sum(a.value()), a.value().dtype());
    out.publish("sum");
    return tape.record(std::move(out), {a.id()}, [](const Tensor& g, auto slots) {
        Tensor& ga = *slots[0];
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().numel());
    return scale(sum(a), 1.0 / n);
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
    Tape& tape = common_tape(input, kernel);
    Tensor out = bem::conv2d(input.value(), kernel.value(), stride, padding);
    return tape.record(std::move(out), {input.id(), kernel.id()},
                       [&tape, ix = input.id(), ik = kernel.id(), stride, padding](const Tensor& g, auto slots) {
                           const Tensor& x = tape.value(ix);
                           const Tensor& k = tape.value(ik);
                           if (slots[0]) {
                               const Tensor gi = conv2d_grad_input(g, k, x.shape(), stride, padding);
                               for (std::size_t i = 0; i < gi.numel(); ++i) (*slots[0])[i] += gi[i];
                           }
                           if (slots[1]) {
                               const Tensor gk = conv2d_grad_kernel(g, x, k.shape(), stride, padding);
                               for (std::size_t i = 0; i < gk.numel(); ++i) (*slots[1])[i] += gk[i];
                           }
                       });
}

Var add_channel_bias(Var x, Var bias) {
    Tape& tape = common_tape(x, bias);
    Tensor out = bem::add_channel_bias(x.value(), bias.value());
    const std::size_t channels = x.shape()[0];
    const std::size_t plane = x.shape()[1] * x.shape()[2];
    return tape.record(std::move(out), {x.id(), bias.id()}, [channels, plane](const Tensor& g, auto slots) {
        if (slots[0]) {
            for (std::size_t i = 0; i < g.numel(); ++i) (*slots[0])[i] += g[i];
        }
        if (slots[1]) {
            for (std::size_t c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += g[c * plane + i];
                (*slots[1])[c] += acc;
            }
        }
    });
}

Var bilinear_resize(Var input, std::size_t out_h, std::size_t out_w) {
    Tape& tape = tape_of(input);
    Tensor out = bem::bilinear_resize(input.value(), out_h, out_w);
    const std::size_t in_h = input.shape()[1], in_w = input.shape()[2];
    return tape.record(std::move(out), {input.id()}, [in_h, in_w](const Tensor& g, auto slots) {
        const Tensor gi = bilinear_resize_grad(g, in_h, in_w);
        for (std::size_t i = 0; i < gi.numel(); ++i) (*slots[0])[i] += gi[i];
    });
}

Var concat_channels(Var a, Var b) {
    Tape& tape = common_tape(a, b);
    Tensor out = bem::concat_channels(a.value(), b.value());
    const std::size_t split = a.value().numel();
    return tape.record(std::move(out), {a.id(), b.id()}, [split](const Tensor& g, auto slots) {
        if (slots[0]) {
            for (std::size_t i = 0; i < split; ++i) (*slots[0])[i] += g[i];
        }
        if (slots[1]) {
            for (std::size_t i = split; i < g.numel(); ++i) (*slots[1])[i - split] += g[i];
        }
    });
}

}  // namespace bem::ad
