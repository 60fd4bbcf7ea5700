#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bem/random.hpp"
#include "bem/tape.hpp"
#include "bem/tensor.hpp"

namespace bem {

// Initial posterior spread of every weight.
inline constexpr double kInitialSigma = 0.05;
inline constexpr double kDefaultEmaBeta = 0.999;

double softplus(double x) noexcept;
double inverse_softplus(double sigma);
double sigmoid(double x) noexcept;

// Mean-field Gaussian posterior of one weight tensor: w ~ N(mu, softplus(rho)^2).
struct VariationalParams {
    Tensor mu;
    Tensor rho;

    // mu with rho set so that every sigma equals `sigma`.
    static VariationalParams with_sigma(Tensor mu, double sigma);

    Tensor sigma() const;
    void validate() const;
};

// Reparameterized draw mu + softplus(rho) * eps, eps taken from `eps`.
Tensor sample_weights(const VariationalParams& params, EpsilonSource& eps);

// Closed-form KL[N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)] summed over
// elements. Throws DomainError on a non-positive sigma.
double kl_diag_gaussian(double mu_q, double sigma_q, double mu_p, double sigma_p);
double kl_diag_gaussian(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p, const Tensor& sigma_p);

// Ordered per-layer posteriors of a Bayesian network.
class BayesModule {
  public:
    BayesModule() = default;

    void add(std::string name, VariationalParams params);

    std::size_t size() const noexcept { return layers_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    VariationalParams& layer(std::size_t i) { return layers_.at(i); }
    const VariationalParams& layer(std::size_t i) const { return layers_.at(i); }
    std::span<const VariationalParams> layers() const noexcept { return layers_; }

    // Trainable scalars: two per weight (mu and rho).
    std::size_t parameter_count() const noexcept;

  private:
    std::vector<std::string> names_;
    std::vector<VariationalParams> layers_;
};

// Gaussian prior whose parameters follow an exponential moving average of the
// posterior. The tensors are plain values, so the loss never differentiates
// through them. Stored at 64-bit regardless of the posterior precision.
struct AdaptivePrior {
    std::vector<Tensor> mu_ema;
    std::vector<Tensor> sigma_ema;
    double beta = kDefaultEmaBeta;
    std::uint64_t step = 0;

    // Copy of the current posterior, so the KL starts at zero.
    static AdaptivePrior from_posterior(const BayesModule& posterior, double beta = kDefaultEmaBeta);
    // N(0, I) with beta = 1, i.e. a prior that never moves.
    static AdaptivePrior standard_normal(const BayesModule& posterior);

    void validate_against(const BayesModule& posterior) const;
};

// One EMA step: mu_ema <- beta*mu_ema + (1-beta)*mu, likewise for sigma.
AdaptivePrior ema_update(AdaptivePrior prior, const BayesModule& posterior);

namespace ad {

// Pathwise-differentiable draw mu + softplus(rho) * eps.
Var sample_weights(Var mu, Var rho, EpsilonSource& eps);

// KL of the posterior (mu, softplus(rho)) against a constant prior; the
// gradient flows to mu and rho only.
Var kl_diag_gaussian(Var mu, Var rho, const Tensor& prior_mu, const Tensor& prior_sigma);

}  // namespace ad

struct Example {
    Tensor x;
    Tensor y;
};

enum class DataLoss { L2, L1 };

struct ElboOptions {
    double kl_weight = 1.0;
    int n_mc = 1;
    DataLoss data_loss = DataLoss::L2;
};

// A network evaluated with explicit weights (one Var per posterior layer).
using NetworkFn = std::function<Var(Tape& tape, std::span<const Var> weights, const Tensor& x)>;

struct ElboLoss {
    Var total;
    double data_term = 0.0;  // (1/M) sum_i E_w ||F(x_i; w) - y_i||^2
    double kl_term = 0.0;    // unweighted KL[q || prior]
};

// Minibatch objective: Monte-Carlo estimate of the mean data term plus
// kl_weight * KL. `mu` and `rho` are the posterior leaves on `tape`, one pair
// per prior layer. Fresh noise is drawn from `eps` for each of n_mc samples;
// one weight draw is shared by the whole batch.
ElboLoss elbo_minibatch_loss(Tape& tape, std::span<const Example> batch, const NetworkFn& network,
                             std::span<const Var> mu, std::span<const Var> rho, const AdaptivePrior& prior,
                             const ElboOptions& options, EpsilonSource& eps);

}  // namespace bem
