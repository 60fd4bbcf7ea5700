#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bem/tensor.hpp"

namespace bem {

// 10*log10(peak^2 / MSE); +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over
// every fully contained window and every channel.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

// No-reference quality score; higher is better. Only the ordering of scores
// carries meaning.
class IqaMetric {
  public:
    virtual ~IqaMetric() = default;
    virtual std::string name() const = 0;
    virtual double score(const Tensor& image) const = 0;
};

// Weights of the built-in statistical score.
inline constexpr double kIqaExposureWeight = 4.0;
inline constexpr double kIqaContrastWeight = 1.0;
inline constexpr double kIqaEntropyWeight = 0.25;

// Rec.601 luma of a 3-channel image; a 1-channel image is returned as is.
Tensor luminance(const Tensor& image);

//   exposure  -(mean luma - 0.5)^2
//   contrast  RMS deviation of luma
//   entropy   Shannon entropy (bits) of a 16-bin gradient-magnitude histogram
double builtin_iqa(const Tensor& image);

// Registry keyed by name. "stat" (builtin_iqa) and "mean_brightness" are
// always present.
using IqaFactory = std::function<std::unique_ptr<IqaMetric>()>;
void register_iqa(const std::string& name, IqaFactory factory);
std::unique_ptr<IqaMetric> make_iqa(const std::string& name);
bool has_iqa(const std::string& name);
std::vector<std::string> iqa_names();

}  // namespace bem
