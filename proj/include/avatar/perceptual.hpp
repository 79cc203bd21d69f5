#pragma once

// Pluggable perceptual image distance. The built-in "gradient_pyramid" metric
// compares horizontal and vertical first differences of a 3-level average
// pooling pyramid, plus the mean absolute difference of the coarsest level so
// that the distance vanishes only for identical images.

#include <functional>
#include <string>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar {

/// Returns d(a, b); when grad_a is non-null, also writes d(distance)/d(a)
/// (same shape as a, overwritten).
using PerceptualFn = std::function<double(const Tensor& a, const Tensor& b, Tensor* grad_a)>;

inline constexpr const char* kDefaultPerceptual = "gradient_pyramid";
inline constexpr std::size_t kPyramidLevels = 3;

double gradient_pyramid_distance(const Tensor& a, const Tensor& b, Tensor* grad_a = nullptr);

/// Adds or replaces a named metric.
void register_perceptual(const std::string& name, PerceptualFn fn);

/// Throws ConfigError for unknown names.
const PerceptualFn& perceptual_metric(const std::string& name);

std::vector<std::string> perceptual_names();

/// The default metric.
double perceptual_distance(const Tensor& a, const Tensor& b);

}  // namespace avatar
