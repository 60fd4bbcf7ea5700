#include "bem/backbone.hpp"

#include <cmath>

#include "bem/autodiff.hpp"
#include "bem/error.hpp"

namespace bem {

namespace {

std::atomic<std::uint64_t> g_deterministic_forwards{0};
std::atomic<std::uint64_t> g_bayesian_forwards{0};

void add_conv(std::vector<ParamSlot>& out, const std::string& name, std::size_t c_out, std::size_t c_in,
              std::size_t k) {
    const std::size_t fan_in = c_in * k * k;
    out.push_back(ParamSlot{name + ".weight", {c_out, c_in, k, k}, fan_in, false});
    out.push_back(ParamSlot{name + ".bias", {c_out}, fan_in, true});
}

std::size_t level_channels(const BackboneSpec& spec, std::size_t level) { return spec.base_channels << level; }

// Walks the weight list in layout order.
class WeightCursor {
  public:
    explicit WeightCursor(std::span<const Var> weights) : weights_(weights) {}

    Var conv(Var x, std::size_t stride, std::size_t padding) {
        Var k = next();
        Var b = next();
        return ad::add_channel_bias(ad::conv2d(x, k, stride, padding), b);
    }

    bool exhausted() const { return pos_ == weights_.size(); }

  private:
    Var next() {
        if (pos_ >= weights_.size()) throw DimensionError("backbone: too few weight tensors");
        return weights_[pos_++];
    }

    std::span<const Var> weights_;
    std::size_t pos_ = 0;
};

}  // namespace

void BackboneSpec::validate() const {
    if (in_channels == 0 || out_channels == 0 || base_channels == 0 || blocks_per_level == 0) {
        throw ConfigError("backbone channel counts and blocks_per_level must be positive");
    }
    if (levels > 8) throw ConfigError("backbone levels must be <= 8");
    if (activation != Activation::SiLU) throw ConfigError("unknown backbone activation");
}

std::vector<ParamSlot> parameter_layout(const BackboneSpec& spec) {
    spec.validate();
    std::vector<ParamSlot> out;
    add_conv(out, "stem", spec.base_channels, spec.in_channels, 3);
    for (std::size_t l = 0; l < spec.levels; ++l) {
        const std::size_t c = level_channels(spec, l);
        for (std::size_t b = 0; b < spec.blocks_per_level; ++b) {
            add_conv(out, "enc" + std::to_string(l) + ".block" + std::to_string(b), c, c, 3);
        }
        add_conv(out, "enc" + std::to_string(l) + ".down", level_channels(spec, l + 1), c, 3);
    }
    const std::size_t cm = level_channels(spec, spec.levels);
    for (std::size_t b = 0; b < spec.blocks_per_level; ++b) add_conv(out, "mid.block" + std::to_string(b), cm, cm, 3);
    for (std::size_t l = spec.levels; l-- > 0;) {
        const std::size_t c = level_channels(spec, l);
        add_conv(out, "dec" + std::to_string(l) + ".up", c, level_channels(spec, l + 1), 1);
        for (std::size_t b = 0; b < spec.blocks_per_level; ++b) {
            add_conv(out, "dec" + std::to_string(l) + ".block" + std::to_string(b), c, c, 3);
        }
    }
    add_conv(out, "head", spec.out_channels, spec.base_channels, 1);
    return out;
}

std::uint64_t global_forward_count(ModelKind kind) noexcept {
    return kind == ModelKind::Bayesian ? g_bayesian_forwards.load() : g_deterministic_forwards.load();
}

Model::Model(BackboneSpec spec, ModelKind kind) : spec_(spec), kind_(kind), layout_(parameter_layout(spec)) {}

Model Model::build(const BackboneSpec& spec, ModelKind kind, std::uint64_t seed, DType dtype) {
    Model model(spec, kind);
    Rng rng(seed, "init");
    for (const auto& slot : model.layout_) {
        Tensor mu(slot.shape, dtype);
        if (!slot.is_bias) {
            const double bound = std::sqrt(3.0 / static_cast<double>(slot.fan_in));
            for (auto& v : mu.data()) v = rng.uniform(-bound, bound);
        }
        mu.publish("init");
        if (kind == ModelKind::Bayesian) {
            model.posterior_.add(slot.name, VariationalParams::with_sigma(std::move(mu), kInitialSigma));
        } else {
            model.weights_.push_back(std::move(mu));
        }
    }
    return model;
}

Model Model::from_weights(const BackboneSpec& spec, std::vector<Tensor> weights) {
    Model model(spec, ModelKind::Deterministic);
    if (weights.size() != model.layout_.size()) {
        throw DimensionError("expected " + std::to_string(model.layout_.size()) + " weight tensors, got " +
                             std::to_string(weights.size()));
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].shape() != model.layout_[i].shape) {
            throw DimensionError("weight " + model.layout_[i].name + " has shape " +
                                 shape_to_string(weights[i].shape()) + ", expected " +
                                 shape_to_string(model.layout_[i].shape));
        }
    }
    model.weights_ = std::move(weights);
    return model;
}

Model Model::from_posterior(const BackboneSpec& spec, BayesModule posterior) {
    Model model(spec, ModelKind::Bayesian);
    if (posterior.size() != model.layout_.size()) {
        throw DimensionError("expected " + std::to_string(model.layout_.size()) + " posterior layers, got " +
                             std::to_string(posterior.size()));
    }
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        if (posterior.layer(i).mu.shape() != model.layout_[i].shape) {
            throw DimensionError("posterior layer " + model.layout_[i].name + " has shape " +
                                 shape_to_string(posterior.layer(i).mu.shape()));
        }
    }
    model.posterior_ = std::move(posterior);
    return model;
}

std::vector<Tensor>& Model::weights() {
    if (bayesian()) throw ContractError("weights() on a Bayesian model");
    return weights_;
}

const std::vector<Tensor>& Model::weights() const {
    if (bayesian()) throw ContractError("weights() on a Bayesian model");
    return weights_;
}

BayesModule& Model::posterior() {
    if (!bayesian()) throw ContractError("posterior() on a deterministic model");
    return posterior_;
}

const BayesModule& Model::posterior() const {
    if (!bayesian()) throw ContractError("posterior() on a deterministic model");
    return posterior_;
}

std::size_t Model::parameter_count() const {
    if (bayesian()) return posterior_.parameter_count();
    std::size_t n = 0;
    for (const auto& w : weights_) n += w.numel();
    return n;
}

BoundParams Model::bind(Tape& tape, bool requires_grad) const {
    BoundParams bound;
    if (bayesian()) {
        for (const auto& layer : posterior_.layers()) {
            bound.weights.push_back(tape.leaf(layer.mu, requires_grad));
            bound.rho.push_back(tape.leaf(layer.rho, requires_grad));
        }
    } else {
        for (const auto& w : weights_) bound.weights.push_back(tape.leaf(w, requires_grad));
    }
    return bound;
}

std::vector<Var> Model::materialize(Tape&, const BoundParams& bound, EpsilonSource* eps) const {
    if (!bayesian()) return bound.weights;
    if (!eps) throw ContractError("Bayesian forward requires an EpsilonSource");
    std::vector<Var> sampled;
    sampled.reserve(bound.weights.size());
    for (std::size_t i = 0; i < bound.weights.size(); ++i) {
        sampled.push_back(ad::sample_weights(bound.weights[i], bound.rho[i], *eps));
    }
    return sampled;
}

void Model::validate_input(const Tensor& x) const {
    expect_rank(x, 3, "backbone input");
    if (x.dim(0) != spec_.in_channels) {
        throw DimensionError("backbone expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t d = spec_.divisor();
    if (x.dim(1) % d != 0 || x.dim(2) % d != 0) {
        throw DimensionError("backbone input " + shape_to_string(x.shape()) + ": spatial dims must be divisible by " +
                             std::to_string(d));
    }
}

Var Model::apply(Tape& tape, std::span<const Var> weights, const Tensor& x) const {
    return apply(tape, weights, tape.constant(x));
}

Var Model::apply(Tape&, std::span<const Var> weights, Var x) const {
    validate_input(x.value());
    if (weights.size() != layout_.size()) {
        throw DimensionError("backbone expects " + std::to_string(layout_.size()) + " weight tensors, got " +
                             std::to_string(weights.size()));
    }
    counter_.record(static_cast<std::uint64_t>(x.shape()[1] * x.shape()[2]));
    (bayesian() ? g_bayesian_forwards : g_deterministic_forwards).fetch_add(1, std::memory_order_relaxed);

    WeightCursor cur(weights);
    Var h = ad::silu(cur.conv(x, 1, 1));
    std::vector<Var> skips;
    for (std::size_t l = 0; l < spec_.levels; ++l) {
        for (std::size_t b = 0; b < spec_.blocks_per_level; ++b) h = ad::silu(cur.conv(h, 1, 1));
        skips.push_back(h);
        h = ad::silu(cur.conv(h, 2, 1));
    }
    for (std::size_t b = 0; b < spec_.blocks_per_level; ++b) h = ad::silu(cur.conv(h, 1, 1));
    for (std::size_t l = spec_.levels; l-- > 0;) {
        const Var& skip = skips[l];
        h = ad::bilinear_resize(h, skip.shape()[1], skip.shape()[2]);
        h = ad::add(cur.conv(h, 1, 0), skip);
        for (std::size_t b = 0; b < spec_.blocks_per_level; ++b) h = ad::silu(cur.conv(h, 1, 1));
    }
    Var out = cur.conv(h, 1, 0);
    if (!cur.exhausted()) throw DimensionError("backbone: unused weight tensors");
    return out;
}

Tensor Model::forward(const Tensor& x, EpsilonSource* eps) const {
    if (bayesian() && !eps) throw ContractError("Bayesian forward requires an EpsilonSource");
    Tape tape;
    const BoundParams bound = bind(tape, false);
    const auto weights = materialize(tape, bound, eps);
    return apply(tape, weights, x).value();
}

}  // namespace bem
