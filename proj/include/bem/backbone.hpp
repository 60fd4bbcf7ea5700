#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bem/random.hpp"
#include "bem/tape.hpp"
#include "bem/tensor.hpp"
#include "bem/variational.hpp"

namespace bem {

// SiLU (x * sigmoid(x)) is the only nonlinearity the backbone uses.
enum class Activation : std::uint32_t { SiLU = 1 };

// Shape of the convolutional encoder-decoder.
//
//   stem 3x3 -> [blocks 3x3, stride-2 3x3 down] x levels -> blocks 3x3
//   -> [bilinear x2, 1x1, + skip, blocks 3x3] x levels -> head 1x1
//
// Level l carries base_channels * 2^l channels. Every conv has a bias and all
// convs except the head are followed by the activation.
struct BackboneSpec {
    std::size_t in_channels = 3;
    std::size_t out_channels = 3;
    std::size_t base_channels = 16;
    std::size_t levels = 2;
    std::size_t blocks_per_level = 1;
    Activation activation = Activation::SiLU;

    void validate() const;
    // Spatial dims must be multiples of this at forward time.
    std::size_t divisor() const { return std::size_t{1} << levels; }

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

enum class ModelKind : std::uint8_t { Deterministic = 1, Bayesian = 2 };

struct ParamSlot {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;
    bool is_bias = false;
};

// Parameter tensors in the order the forward pass consumes them.
std::vector<ParamSlot> parameter_layout(const BackboneSpec& spec);

// Calls and input pixels seen by a model's forward passes. Thread-safe;
// copying a model copies the current counts.
class ForwardCounter {
  public:
    ForwardCounter() = default;
    ForwardCounter(const ForwardCounter& other) : calls_(other.calls()), pixels_(other.pixels()) {}
    ForwardCounter& operator=(const ForwardCounter& other) {
        calls_ = other.calls();
        pixels_ = other.pixels();
        return *this;
    }

    void record(std::uint64_t pixels) noexcept {
        calls_.fetch_add(1, std::memory_order_relaxed);
        pixels_.fetch_add(pixels, std::memory_order_relaxed);
    }
    std::uint64_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }
    std::uint64_t pixels() const noexcept { return pixels_.load(std::memory_order_relaxed); }
    void reset() noexcept {
        calls_ = 0;
        pixels_ = 0;
    }

  private:
    std::atomic<std::uint64_t> calls_{0};
    std::atomic<std::uint64_t> pixels_{0};
};

// Process-wide count of network applications by model kind.
std::uint64_t global_forward_count(ModelKind kind) noexcept;

// Posterior leaves (Bayesian) or weight leaves (deterministic) bound to a tape.
struct BoundParams {
    std::vector<Var> weights;  // deterministic weights, or posterior means
    std::vector<Var> rho;      // empty for deterministic models
};

class Model {
  public:
    // Reproducible initialization from `seed`: kernel means uniform in
    // +-sqrt(3/fan_in), biases zero, every posterior sigma kInitialSigma.
    static Model build(const BackboneSpec& spec, ModelKind kind, std::uint64_t seed, DType dtype = DType::F32);
    // Assembles a model from existing tensors (checkpoint loading).
    static Model from_weights(const BackboneSpec& spec, std::vector<Tensor> weights);
    static Model from_posterior(const BackboneSpec& spec, BayesModule posterior);

    const BackboneSpec& spec() const noexcept { return spec_; }
    ModelKind kind() const noexcept { return kind_; }
    bool bayesian() const noexcept { return kind_ == ModelKind::Bayesian; }
    std::span<const ParamSlot> layout() const noexcept { return layout_; }

    std::vector<Tensor>& weights();
    const std::vector<Tensor>& weights() const;
    BayesModule& posterior();
    const BayesModule& posterior() const;

    // Trainable scalars (mu and rho both count for Bayesian models).
    std::size_t parameter_count() const;

    BoundParams bind(Tape& tape, bool requires_grad) const;
    // Weights for one forward pass: the deterministic leaves themselves, or a
    // reparameterized draw per layer.
    std::vector<Var> materialize(Tape& tape, const BoundParams& bound, EpsilonSource* eps) const;

    // The network with explicit weights. Validates the input shape and records
    // one forward in the counters.
    Var apply(Tape& tape, std::span<const Var> weights, Var x) const;
    Var apply(Tape& tape, std::span<const Var> weights, const Tensor& x) const;

    // One inference pass on a private tape. Bayesian models resample weights
    // from `eps` on every call and throw ContractError when it is null.
    Tensor forward(const Tensor& x, EpsilonSource* eps = nullptr) const;

    const ForwardCounter& counter() const noexcept { return counter_; }
    void reset_counter() const noexcept { counter_.reset(); }

    void validate_input(const Tensor& x) const;

  private:
    Model(BackboneSpec spec, ModelKind kind);

    BackboneSpec spec_;
    ModelKind kind_;
    std::vector<ParamSlot> layout_;
    std::vector<Tensor> weights_;
    BayesModule posterior_;
    mutable ForwardCounter counter_;
};

}  // namespace bem
