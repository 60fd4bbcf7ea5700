#include "bem/variational.hpp"

#include <algorithm>
#include <cmath>

#include "bem/autodiff.hpp"
#include "bem/error.hpp"

namespace bem {

double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inverse_softplus(double sigma) {
    if (!(sigma > 0.0)) throw DomainError("inverse_softplus requires sigma > 0");
    // log(exp(s) - 1), written to stay accurate for large and tiny s.
    return sigma > 30.0 ? sigma + std::log1p(-std::exp(-sigma)) : std::log(std::expm1(sigma));
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

VariationalParams VariationalParams::with_sigma(Tensor mu, double sigma) {
    Tensor rho = Tensor::full(mu.shape(), inverse_softplus(sigma), mu.dtype());
    return VariationalParams{std::move(mu), std::move(rho)};
}

Tensor VariationalParams::sigma() const {
    Tensor s(rho.shape(), DType::F64);
    for (std::size_t i = 0; i < rho.numel(); ++i) s[i] = softplus(rho[i]);
    return s;
}

void VariationalParams::validate() const { expect_same_shape(mu, rho, "VariationalParams"); }

Tensor sample_weights(const VariationalParams& params, EpsilonSource& eps) {
    params.validate();
    Tensor w(params.mu.shape(), params.mu.dtype());
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = params.mu[i] + softplus(params.rho[i]) * eps.next();
    w.publish("sample_weights");
    return w;
}

namespace {

// One element of the Gaussian KL. With t = sigma_q / sigma_p the value is
// (t^2 - 1 - 2 log t)/2 + (dmu/sigma_p)^2/2, evaluated through d = t - 1 so
// that q == p gives exactly zero.
double kl_term(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    const double d = sigma_q / sigma_p - 1.0;
    const double dm = (mu_q - mu_p) / sigma_p;
    const double value = 0.5 * (d * (d + 2.0) - 2.0 * std::log1p(d)) + 0.5 * dm * dm;
    return std::max(0.0, value);
}

void check_sigma(double sigma, const char* which) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw DomainError(std::string("kl_diag_gaussian: ") + which + " must be positive, got " +
                          std::to_string(sigma));
    }
}

}  // namespace

double kl_diag_gaussian(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    check_sigma(sigma_q, "sigma_q");
    check_sigma(sigma_p, "sigma_p");
    return kl_term(mu_q, sigma_q, mu_p, sigma_p);
}

double kl_diag_gaussian(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p, const Tensor& sigma_p) {
    expect_same_shape(mu_q, sigma_q, "kl_diag_gaussian");
    expect_same_shape(mu_q, mu_p, "kl_diag_gaussian");
    expect_same_shape(mu_q, sigma_p, "kl_diag_gaussian");
    double total = 0.0;
    for (std::size_t i = 0; i < mu_q.numel(); ++i) total += kl_diag_gaussian(mu_q[i], sigma_q[i], mu_p[i], sigma_p[i]);
    return total;
}

void BayesModule::add(std::string name, VariationalParams params) {
    params.validate();
    names_.push_back(std::move(name));
    layers_.push_back(std::move(params));
}

std::size_t BayesModule::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.mu.numel() + l.rho.numel();
    return n;
}

AdaptivePrior AdaptivePrior::from_posterior(const BayesModule& posterior, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("EMA beta must lie in [0, 1]");
    AdaptivePrior prior;
    prior.beta = beta;
    for (const auto& layer : posterior.layers()) {
        prior.mu_ema.push_back(layer.mu.to(DType::F64));
        prior.sigma_ema.push_back(layer.sigma());
    }
    return prior;
}

AdaptivePrior AdaptivePrior::standard_normal(const BayesModule& posterior) {
    AdaptivePrior prior;
    prior.beta = 1.0;
    for (const auto& layer : posterior.layers()) {
        prior.mu_ema.push_back(Tensor::zeros(layer.mu.shape()));
        prior.sigma_ema.push_back(Tensor::full(layer.mu.shape(), 1.0));
    }
    return prior;
}

void AdaptivePrior::validate_against(const BayesModule& posterior) const {
    if (mu_ema.size() != posterior.size() || sigma_ema.size() != posterior.size()) {
        throw DimensionError("prior has " + std::to_string(mu_ema.size()) + " layers, posterior has " +
                             std::to_string(posterior.size()));
    }
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        expect_same_shape(mu_ema[i], posterior.layer(i).mu, "prior mu vs posterior");
        expect_same_shape(sigma_ema[i], posterior.layer(i).mu, "prior sigma vs posterior");
    }
}

AdaptivePrior ema_update(AdaptivePrior prior, const BayesModule& posterior) {
    prior.validate_against(posterior);
    const double b = prior.beta;
    const auto blend = [b](double prev, double current) {
        const double v = b * prev + (1.0 - b) * current;
        return std::clamp(v, std::min(prev, current), std::max(prev, current));
    };
    for (std::size_t l = 0; l < posterior.size(); ++l) {
        const auto& layer = posterior.layer(l);
        Tensor& m = prior.mu_ema[l];
        Tensor& s = prior.sigma_ema[l];
        for (std::size_t i = 0; i < m.numel(); ++i) {
            m[i] = blend(m[i], layer.mu[i]);
            s[i] = blend(s[i], softplus(layer.rho[i]));
        }
        m.publish("ema_update");
        s.publish("ema_update");
    }
    ++prior.step;
    return prior;
}

namespace ad {

Var sample_weights(Var mu, Var rho, EpsilonSource& eps) {
    if (!mu.valid() || mu.tape() != rho.tape()) throw ContractError("sample_weights: mu and rho on different tapes");
    expect_same_shape(mu.value(), rho.value(), "sample_weights");
    Tape& tape = *mu.tape();
    Tensor noise = eps.draw(mu.shape());
    const Tensor& m = mu.value();
    const Tensor& r = rho.value();
    Tensor w(m.shape(), narrowest(m.dtype(), r.dtype()));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = m[i] + bem::softplus(r[i]) * noise[i];
    w.publish("sample_weights");
    return tape.record(std::move(w), {mu.id(), rho.id()},
                       [&tape, ir = rho.id(), noise = std::move(noise)](const Tensor& g, auto slots) {
                           if (slots[0]) {
                               for (std::size_t i = 0; i < g.numel(); ++i) (*slots[0])[i] += g[i];
                           }
                           if (slots[1]) {
                               const Tensor& r = tape.value(ir);
                               for (std::size_t i = 0; i < g.numel(); ++i) {
                                   (*slots[1])[i] += g[i] * noise[i] * bem::sigmoid(r[i]);
                               }
                           }
                       });
}

Var kl_diag_gaussian(Var mu, Var rho, const Tensor& prior_mu, const Tensor& prior_sigma) {
    if (!mu.valid() || mu.tape() != rho.tape()) throw ContractError("kl_diag_gaussian: mu and rho on different tapes");
    expect_same_shape(mu.value(), rho.value(), "kl_diag_gaussian");
    expect_same_shape(mu.value(), prior_mu, "kl_diag_gaussian prior");
    expect_same_shape(mu.value(), prior_sigma, "kl_diag_gaussian prior");
    Tape& tape = *mu.tape();
    const Tensor& m = mu.value();
    const Tensor& r = rho.value();
    double total = 0.0;
    for (std::size_t i = 0; i < m.numel(); ++i) {
        total += bem::kl_diag_gaussian(m[i], bem::softplus(r[i]), prior_mu[i], prior_sigma[i]);
    }
    Tensor out = Tensor::scalar(total);
    out.publish("kl_diag_gaussian");
    return tape.record(std::move(out), {mu.id(), rho.id()},
                       [&tape, im = mu.id(), ir = rho.id(), pm = prior_mu, ps = prior_sigma](const Tensor& g,
                                                                                              auto slots) {
                           const Tensor& m = tape.value(im);
                           const Tensor& r = tape.value(ir);
                           for (std::size_t i = 0; i < m.numel(); ++i) {
                               const double var_p = ps[i] * ps[i];
                               if (slots[0]) (*slots[0])[i] += g[0] * (m[i] - pm[i]) / var_p;
                               if (slots[1]) {
                                   const double s = bem::softplus(r[i]);
                                   (*slots[1])[i] += g[0] * (s / var_p - 1.0 / s) * bem::sigmoid(r[i]);
                               }
                           }
                       });
}

}  // namespace ad

ElboLoss elbo_minibatch_loss(Tape& tape, std::span<const Example> batch, const NetworkFn& network,
                             std::span<const Var> mu, std::span<const Var> rho, const AdaptivePrior& prior,
                             const ElboOptions& options, EpsilonSource& eps) {
    if (batch.empty()) throw ContractError("elbo_minibatch_loss: empty batch");
    if (options.n_mc < 1) throw ContractError("elbo_minibatch_loss: n_mc must be >= 1");
    if (options.kl_weight < 0.0) throw ContractError("elbo_minibatch_loss: kl_weight must be >= 0");
    if (mu.size() != rho.size() || mu.size() != prior.mu_ema.size() || mu.size() != prior.sigma_ema.size()) {
        throw DimensionError("elbo_minibatch_loss: posterior has " + std::to_string(mu.size()) +
                             " layers, prior has " + std::to_string(prior.mu_ema.size()));
    }

    Var data;
    std::vector<Var> weights(mu.size());
    for (int s = 0; s < options.n_mc; ++s) {
        for (std::size_t l = 0; l < mu.size(); ++l) weights[l] = ad::sample_weights(mu[l], rho[l], eps);
        for (const auto& ex : batch) {
            Var pred = network(tape, weights, ex.x);
            Var diff = ad::sub(pred, tape.constant(ex.y));
            Var err = options.data_loss == DataLoss::L2 ? ad::sum(ad::square(diff)) : ad::sum(ad::abs(diff));
            data = data.valid() ? ad::add(data, err) : err;
        }
    }
    data = ad::scale(data, 1.0 / (static_cast<double>(batch.size()) * options.n_mc));

    Var kl;
    for (std::size_t l = 0; l < mu.size(); ++l) {
        Var term = ad::kl_diag_gaussian(mu[l], rho[l], prior.mu_ema[l], prior.sigma_ema[l]);
        kl = kl.valid() ? ad::add(kl, term) : term;
    }

    ElboLoss loss;
    loss.data_term = data.value().item();
    if (kl.valid()) {
        loss.kl_term = kl.value().item();
        loss.total = ad::add(data, ad::scale(kl, options.kl_weight));
    } else {
        loss.total = data;
    }
    return loss;
}

}  // namespace bem
