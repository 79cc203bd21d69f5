#include "avatar/nn.hpp"

#include <utility>

#include "avatar/activations.hpp"
#include "avatar/errors.hpp"

#include <Eigen/Dense>

namespace avatar::nn {

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t out = weight.dim(0);
  const std::size_t in = weight.dim(1);
  require_shape(x, {in}, "linear input");
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = weight.data() + o * in;
    double acc = bias[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                       Tensor* grad_bias) {
  const std::size_t out = weight.dim(0);
  const std::size_t in = weight.dim(1);
  Tensor gx({in});
  for (std::size_t o = 0; o < out; ++o) {
    const double g = grad_y[o];
    const double* w = weight.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) gx[i] += w[i] * g;
    if (grad_weight != nullptr) {
      double* gw = grad_weight->data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += x[i] * g;
    }
    if (grad_bias != nullptr) (*grad_bias)[o] += g;
  }
  return gx;
}

namespace {

std::size_t half_up(std::size_t n) { return (n + 1) / 2; }

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix of a 3x3 stride-2 pad-1 convolution: row (i, ky, kx), column (oy, ox).
RowMatrix im2col_s2(const Tensor& x, std::size_t oh, std::size_t ow) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(cin * 9), static_cast<Eigen::Index>(oh * ow));
  for (std::size_t i = 0; i < cin; ++i) {
    const double* xi = x.data() + i * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col.data() + (i * 9 + static_cast<std::size_t>(ky * 3 + kx)) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long sy = 2 * static_cast<long>(oy) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long sx = 2 * static_cast<long>(ox) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            dst[oy * ow + ox] = xi[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

Tensor conv2d_s2(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t cin = x.dim(0);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) throw ShapeError("conv2d: input channel mismatch");
  const std::size_t oh = half_up(x.dim(1));
  const std::size_t ow = half_up(x.dim(2));
  const RowMatrix col = im2col_s2(x, oh, ow);
  Tensor y({cout, oh, ow});
  Eigen::Map<RowMatrix> ym(y.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(oh * ow));
  ym.noalias() = Eigen::Map<const RowMatrix>(weight.data(), static_cast<Eigen::Index>(cout),
                                             static_cast<Eigen::Index>(cin * 9)) *
                 col;
  ym.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(cout));
  return y;
}

Tensor conv2d_s2_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                          Tensor* grad_bias) {
  const std::size_t cin = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  const std::size_t cout = weight.dim(0);
  const std::size_t oh = grad_y.dim(1);
  const std::size_t ow = grad_y.dim(2);
  const auto rows = static_cast<Eigen::Index>(cin * 9);
  const auto cols = static_cast<Eigen::Index>(oh * ow);
  Eigen::Map<const RowMatrix> gy(grad_y.data(), static_cast<Eigen::Index>(cout), cols);
  Eigen::Map<const RowMatrix> wm(weight.data(), static_cast<Eigen::Index>(cout), rows);

  if (grad_bias != nullptr) {
    Eigen::Map<Eigen::VectorXd>(grad_bias->data(), static_cast<Eigen::Index>(cout)) += gy.rowwise().sum();
  }
  if (grad_weight != nullptr) {
    Eigen::Map<RowMatrix>(grad_weight->data(), static_cast<Eigen::Index>(cout), rows).noalias() +=
        gy * im2col_s2(x, oh, ow).transpose();
  }

  const RowMatrix gcol = wm.transpose() * gy;
  Tensor gx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < cin; ++i) {
    double* gxi = gx.data() + i * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = gcol.data() + (i * 9 + static_cast<std::size_t>(ky * 3 + kx)) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long sy = 2 * static_cast<long>(oy) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long sx = 2 * static_cast<long>(ox) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            gxi[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += src[oy * ow + ox];
          }
        }
      }
    }
  }
  return gx;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t cin = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) throw ShapeError("conv1d: input channel mismatch");
  Tensor y({cout, steps});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < steps; ++t) {
      double acc = bias[o];
      for (std::size_t i = 0; i < cin; ++i) {
        const double* k = weight.data() + (o * cin + i) * 3;
        const double* xi = x.data() + i * steps;
        for (int kt = 0; kt < 3; ++kt) {
          const long st = static_cast<long>(t) + kt - 1;
          if (st < 0 || st >= static_cast<long>(steps)) continue;
          acc += k[kt] * xi[st];
        }
      }
      y[o * steps + t] = acc;
    }
  }
  return y;
}

Tensor conv1d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                       Tensor* grad_bias) {
  const std::size_t cin = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t cout = weight.dim(0);
  Tensor gx = Tensor::zeros_like(x);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double g = grad_y[o * steps + t];
      if (grad_bias != nullptr) (*grad_bias)[o] += g;
      for (std::size_t i = 0; i < cin; ++i) {
        const double* k = weight.data() + (o * cin + i) * 3;
        for (int kt = 0; kt < 3; ++kt) {
          const long st = static_cast<long>(t) + kt - 1;
          if (st < 0 || st >= static_cast<long>(steps)) continue;
          gx[i * steps + static_cast<std::size_t>(st)] += k[kt] * g;
          if (grad_weight != nullptr) {
            (*grad_weight)[(o * cin + i) * 3 + static_cast<std::size_t>(kt)] +=
                x[i * steps + static_cast<std::size_t>(st)] * g;
          }
        }
      }
    }
  }
  return gx;
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.storage()) v = act::silu(v);
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_y) {
  Tensor g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= act::silu_grad(x[i]);
  return g;
}

Tensor global_average(const Tensor& x) {
  const std::size_t c = x.dim(0);
  const std::size_t inner = x.size() / c;
  Tensor y({c});
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < inner; ++j) acc += x[i * inner + j];
    y[i] = acc / static_cast<double>(inner);
  }
  return y;
}

Tensor global_average_backward(const Tensor& x, const Tensor& grad_y) {
  const std::size_t c = x.dim(0);
  const std::size_t inner = x.size() / c;
  Tensor g = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < c; ++i) {
    const double v = grad_y[i] / static_cast<double>(inner);
    for (std::size_t j = 0; j < inner; ++j) g[i * inner + j] = v;
  }
  return g;
}

namespace {

// Bin [lo, hi) of adaptive pooling: cell i of g over n inputs.
std::pair<std::size_t, std::size_t> pool_bin(std::size_t i, std::size_t g, std::size_t n) {
  return {i * n / g, ((i + 1) * n + g - 1) / g};
}

}  // namespace

Tensor adaptive_average(const Tensor& x, std::size_t grid) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c * grid * grid});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xc = x.data() + ch * h * w;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      const auto [y0, y1] = pool_bin(gy, grid, h);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const auto [x0, x1] = pool_bin(gx, grid, w);
        double acc = 0.0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) acc += xc[yy * w + xx];
        }
        y[(ch * grid + gy) * grid + gx] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

Tensor adaptive_average_backward(const Tensor& x, std::size_t grid, const Tensor& grad_y) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor g = Tensor::zeros_like(x);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double* gc = g.data() + ch * h * w;
    for (std::size_t gy = 0; gy < grid; ++gy) {
      const auto [y0, y1] = pool_bin(gy, grid, h);
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const auto [x0, x1] = pool_bin(gx, grid, w);
        const double v = grad_y[(ch * grid + gy) * grid + gx] / static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) gc[yy * w + xx] += v;
        }
      }
    }
  }
  return g;
}

void init_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng);
}

}  // namespace avatar::nn
