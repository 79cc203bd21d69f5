#include "avatar/perceptual.hpp"

#include <cmath>
#include <map>

#include "avatar/errors.hpp"

namespace avatar {

namespace {

// {H, W, C} -> {H/2, W/2, C}, averaging 2x2 blocks (odd trailing rows/columns dropped).
Tensor pool2(const Tensor& x) {
  const std::size_t h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  Tensor out({h, w, c});
  const std::size_t in_w = x.dim(1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t r0 = ((2 * y) * in_w + 2 * xx) * c + k;
        const std::size_t r1 = ((2 * y + 1) * in_w + 2 * xx) * c + k;
        out[(y * w + xx) * c + k] = 0.25 * (x[r0] + x[r0 + c] + x[r1] + x[r1 + c]);
      }
    }
  }
  return out;
}

void pool2_backward(const Tensor& grad_out, Tensor& grad_in) {
  const std::size_t h = grad_out.dim(0), w = grad_out.dim(1), c = grad_out.dim(2);
  const std::size_t in_w = grad_in.dim(1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        const double g = 0.25 * grad_out[(y * w + x) * c + k];
        const std::size_t r0 = ((2 * y) * in_w + 2 * x) * c + k;
        const std::size_t r1 = ((2 * y + 1) * in_w + 2 * x) * c + k;
        grad_in[r0] += g;
        grad_in[r0 + c] += g;
        grad_in[r1] += g;
        grad_in[r1 + c] += g;
      }
    }
  }
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

// Mean |first difference| along x and along y; accumulates the gradient into g.
double difference_terms(const Tensor& e, Tensor* g) {
  const std::size_t h = e.dim(0), w = e.dim(1), c = e.dim(2);
  double total = 0.0;
  if (w > 1) {
    const double n = static_cast<double>(h * (w - 1) * c);
    double s = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x + 1 < w; ++x) {
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = (y * w + x) * c + k;
          const double d = e[i + c] - e[i];
          s += std::abs(d);
          if (g != nullptr) {
            (*g)[i + c] += sign(d) / n;
            (*g)[i] -= sign(d) / n;
          }
        }
      }
    }
    total += s / n;
  }
  if (h > 1) {
    const double n = static_cast<double>((h - 1) * w * c);
    double s = 0.0;
    for (std::size_t y = 0; y + 1 < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = (y * w + x) * c + k;
          const double d = e[i + w * c] - e[i];
          s += std::abs(d);
          if (g != nullptr) {
            (*g)[i + w * c] += sign(d) / n;
            (*g)[i] -= sign(d) / n;
          }
        }
      }
    }
    total += s / n;
  }
  return total;
}

std::map<std::string, PerceptualFn>& registry() {
  static std::map<std::string, PerceptualFn> metrics{{kDefaultPerceptual, gradient_pyramid_distance}};
  return metrics;
}

}  // namespace

double gradient_pyramid_distance(const Tensor& a, const Tensor& b, Tensor* grad_a) {
  require_same_shape(a, b, "perceptual distance");
  if (a.rank() != 3) throw ShapeError("perceptual distance: expected {H, W, C} images, got " + shape_string(a.shape()));
  // Every term is a function of the difference image, which makes the metric symmetric.
  std::vector<Tensor> levels;
  levels.push_back(a);
  for (std::size_t i = 0; i < a.size(); ++i) levels[0][i] -= b[i];
  while (levels.size() < kPyramidLevels && levels.back().dim(0) >= 2 && levels.back().dim(1) >= 2) {
    levels.push_back(pool2(levels.back()));
  }

  std::vector<Tensor> grads;
  if (grad_a != nullptr) {
    for (const auto& l : levels) grads.push_back(Tensor::zeros_like(l));
  }
  double total = 0.0;
  for (std::size_t s = 0; s < levels.size(); ++s) total += difference_terms(levels[s], grad_a ? &grads[s] : nullptr);

  const Tensor& coarse = levels.back();
  const double n = static_cast<double>(coarse.size());
  double mad = 0.0;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    mad += std::abs(coarse[i]);
    if (grad_a != nullptr) grads.back()[i] += sign(coarse[i]) / n;
  }
  total += mad / n;

  if (grad_a != nullptr) {
    for (std::size_t s = levels.size() - 1; s > 0; --s) pool2_backward(grads[s], grads[s - 1]);
    *grad_a = std::move(grads[0]);
  }
  return total;
}

void register_perceptual(const std::string& name, PerceptualFn fn) {
  if (!fn) throw ConfigError("register_perceptual: empty function for '" + name + "'");
  registry()[name] = std::move(fn);
}

const PerceptualFn& perceptual_metric(const std::string& name) {
  const auto& r = registry();
  const auto it = r.find(name);
  if (it == r.end()) throw ConfigError("unknown perceptual metric '" + name + "'");
  return it->second;
}

std::vector<std::string> perceptual_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

double perceptual_distance(const Tensor& a, const Tensor& b) { return gradient_pyramid_distance(a, b, nullptr); }

}  // namespace avatar
