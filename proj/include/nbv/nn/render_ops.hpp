#pragma once

// Fused differentiable ops used by the image-based renderer. Batched point
// tensors hold N reference blocks of B samples side by side: column n*B + b is
// sample b expressed in reference n.

#include <cmath>
#include <numbers>
#include <vector>

#include "nbv/geometry.hpp"
#include "nbv/nn/autodiff.hpp"

namespace nbv::nn {

/// 2D convolution of a single image stored as (channels x height*width), column
/// index y*width + x. Zero padding; `pad` pixels before the first row/column.
/// Weight layout: (out_channels x in_channels*k*k), inner order (c, ky, kx).
struct ConvShape {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int out_height = 0;
  int out_width = 0;
};

template <typename T>
Matrix<T> im2col(const Matrix<T>& input, const ConvShape& s) {
  const int k = s.kernel;
  Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(s.in_channels) * k * k,
                                   static_cast<Eigen::Index>(s.out_height) * s.out_width);
  for (int c = 0; c < s.in_channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < s.out_height; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in_height) continue;
          for (int ox = 0; ox < s.out_width; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix < 0 || ix >= s.in_width) continue;
            cols(row, static_cast<Eigen::Index>(oy) * s.out_width + ox) =
                input(c, static_cast<Eigen::Index>(iy) * s.in_width + ix);
          }
        }
      }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, const ConvShape& s) {
  const int k = s.kernel;
  Matrix<T> img = Matrix<T>::Zero(s.in_channels, static_cast<Eigen::Index>(s.in_height) * s.in_width);
  for (int c = 0; c < s.in_channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < s.out_height; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in_height) continue;
          for (int ox = 0; ox < s.out_width; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix < 0 || ix >= s.in_width) continue;
            img(c, static_cast<Eigen::Index>(iy) * s.in_width + ix) +=
                cols(row, static_cast<Eigen::Index>(oy) * s.out_width + ox);
          }
        }
      }
  return img;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const ConvShape& s) {
  require(input.rows() == s.in_channels && input.cols() == static_cast<Eigen::Index>(s.in_height) * s.in_width,
          "conv2d: input shape mismatch");
  require(weight.cols() == static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel,
          "conv2d: weight shape mismatch");
  Matrix<T> cols = im2col<T>(input.value(), s);
  Matrix<T> y = weight.value() * cols;
  y.colwise() += bias.value().col(0);
  auto in = input.node(), wn = weight.node(), bn = bias.node();
  return make_op<T>(std::move(y), {input, weight, bias}, [in, wn, bn, cols = std::move(cols), s](Node<T>& out) {
    if (wn->requires_grad) wn->accumulate(out.grad * cols.transpose());
    if (bn->requires_grad) bn->accumulate(out.grad.rowwise().sum());
    if (in->requires_grad) in->accumulate(col2im<T>(wn->value.transpose() * out.grad, s));
  });
}

/// Points along rays: x = o + t d, with o and d constant (3 x B) and t (1 x B).
template <typename T>
Var<T> ray_points(const Matrix<T>& origins, const Matrix<T>& directions, const Var<T>& t) {
  require(t.rows() == 1 && t.cols() == origins.cols(), "ray_points: shape mismatch");
  Matrix<T> x = origins + (directions.array().rowwise() * t.value().row(0).array()).matrix();
  auto tn = t.node();
  return make_op<T>(std::move(x), {t}, [tn, directions](Node<T>& out) {
    tn->accumulate(out.grad.cwiseProduct(directions).colwise().sum());
  });
}

/// A reference camera as seen by the batched ops.
template <typename T>
struct ReferenceCamera {
  Eigen::Matrix<T, 3, 3> rotation_t;  // camera-from-world rotation
  Eigen::Matrix<T, 3, 1> centre;
  T fx, fy, cx, cy;
  int width, height;

  static ReferenceCamera from(const CameraView& view) {
    return {view.pose.rotation.transpose().cast<T>(),
            view.pose.translation.cast<T>(),
            static_cast<T>(view.intrinsics.fx),
            static_cast<T>(view.intrinsics.fy),
            static_cast<T>(view.intrinsics.cx),
            static_cast<T>(view.intrinsics.cy),
            view.intrinsics.width,
            view.intrinsics.height};
  }
};

/// World points (3 x B) into every reference frame: (3 x N*B).
template <typename T>
Var<T> to_reference_frames(const Var<T>& x, const std::vector<ReferenceCamera<T>>& refs) {
  const Eigen::Index B = x.cols();
  const Eigen::Index N = static_cast<Eigen::Index>(refs.size());
  Matrix<T> y(3, N * B);
  for (Eigen::Index n = 0; n < N; ++n) {
    y.middleCols(n * B, B) = refs[n].rotation_t * (x.value().colwise() - refs[n].centre);
  }
  auto xn = x.node();
  return make_op<T>(std::move(y), {x}, [xn, refs, B, N](Node<T>& out) {
    Matrix<T> g = Matrix<T>::Zero(3, B);
    for (Eigen::Index n = 0; n < N; ++n) g.noalias() += refs[n].rotation_t.transpose() * out.grad.middleCols(n * B, B);
    xn->accumulate(g);
  });
}

/// Batched positional encoding of (3 x M) points: (3 + 6 n_freq) x M rows, in the
/// same layout as nbv::positional_encoding.
template <typename T>
Var<T> positional_encoding(const Var<T>& x, int n_freq) {
  require(x.rows() == 3, "positional_encoding: expects 3 rows");
  const Eigen::Index M = x.cols();
  Matrix<T> y(3 + 6 * n_freq, M);
  y.topRows(3) = x.value();
  if (n_freq > 0) {
    // One sin/cos evaluation; higher octaves by the double-angle identities.
    const auto arg = (x.value().array() * static_cast<T>(std::numbers::pi)).eval();
    y.middleRows(3, 3) = arg.sin().matrix();
    y.middleRows(6, 3) = arg.cos().matrix();
    for (int j = 1; j < n_freq; ++j) {
      const auto sp = y.middleRows(3 + 6 * (j - 1), 3).array();
      const auto cp = y.middleRows(3 + 6 * (j - 1) + 3, 3).array();
      y.middleRows(3 + 6 * j, 3) = (T(2) * sp * cp).matrix();
      y.middleRows(3 + 6 * j + 3, 3) = ((cp - sp) * (cp + sp)).matrix();
    }
  }
  auto xn = x.node();
  // The backward pass reuses the sin/cos values stored in the output.
  return make_op<T>(std::move(y), {x}, [xn, n_freq](Node<T>& o) {
    Matrix<T> g = o.grad.topRows(3);
    T s = static_cast<T>(std::numbers::pi);
    for (int j = 0; j < n_freq; ++j, s *= T(2)) {
      const auto sin_v = o.value.middleRows(3 + 6 * j, 3).array();
      const auto cos_v = o.value.middleRows(3 + 6 * j + 3, 3).array();
      g.array() += s * (o.grad.middleRows(3 + 6 * j, 3).array() * cos_v -
                        o.grad.middleRows(3 + 6 * j + 3, 3).array() * sin_v);
    }
    xn->accumulate(g);
  });
}

/// Pinhole projection of reference-frame points (3 x N*B) into pixel coordinates
/// (2 x N*B). `valid` receives 1 for in-view columns and 0 for points behind the
/// camera or outside the image; invalid columns carry no gradient.
template <typename T>
Var<T> project_points(const Var<T>& x_ref, const std::vector<ReferenceCamera<T>>& refs, Eigen::Index batch,
                      Matrix<T>& valid) {
  const Eigen::Index total = x_ref.cols();
  require(total == batch * static_cast<Eigen::Index>(refs.size()), "project_points: shape mismatch");
  Matrix<T> uv(2, total);
  valid.setZero(1, total);
  const Matrix<T>& x = x_ref.value();
  for (Eigen::Index c = 0; c < total; ++c) {
    const auto& cam = refs[c / batch];
    const T z = x(2, c);
    if (!(z > static_cast<T>(kMinProjectionDepth))) {
      uv(0, c) = uv(1, c) = T(-1);
      continue;
    }
    const T u = cam.fx * x(0, c) / z + cam.cx;
    const T v = cam.fy * x(1, c) / z + cam.cy;
    uv(0, c) = u;
    uv(1, c) = v;
    if (u >= T(0) && u <= T(cam.width) && v >= T(0) && v <= T(cam.height)) valid(0, c) = T(1);
  }
  auto xn = x_ref.node();
  return make_op<T>(std::move(uv), {x_ref}, [xn, refs, batch, valid](Node<T>& out) {
    const Matrix<T>& x = xn->value;
    Matrix<T> g = Matrix<T>::Zero(3, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (valid(0, c) == T(0)) continue;
      const auto& cam = refs[c / batch];
      const T z = x(2, c);
      const T gu = out.grad(0, c), gv = out.grad(1, c);
      g(0, c) = gu * cam.fx / z;
      g(1, c) = gv * cam.fy / z;
      g(2, c) = -(gu * cam.fx * x(0, c) + gv * cam.fy * x(1, c)) / (z * z);
    }
    xn->accumulate(g);
  });
}

/// Bilinear tap of a feature grid at image pixel coordinates.
///
/// Grid node (i, j) of an (grid_w x grid_h) grid covering an (image_w x image_h)
/// image sits at pixel ((i + 0.5) image_w / grid_w, (j + 0.5) image_h / grid_h).
/// Positions between the outermost nodes and the image border clamp to the border
/// nodes.
template <typename T>
struct BilinearTap {
  Eigen::Index i00, i10, i01, i11;  // column indices into the grid
  T ax, ay;                          // interpolation weights towards +x / +y
  T dgx_du, dgy_dv;                  // zero where the coordinate was clamped
};

template <typename T>
BilinearTap<T> bilinear_tap(T u, T v, int image_w, int image_h, int grid_w, int grid_h) {
  auto axis = [](T p, int image_n, int grid_n, Eigen::Index& i0, Eigen::Index& i1, T& a, T& d) {
    const T scale = static_cast<T>(grid_n) / static_cast<T>(image_n);
    T g = p * scale - T(0.5);
    d = scale;
    if (g <= T(0)) {
      g = T(0);
      d = T(0);
    } else if (g >= T(grid_n - 1)) {
      g = T(grid_n - 1);
      d = T(0);
    }
    i0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(g)), std::max(grid_n - 2, 0));
    i1 = std::min<Eigen::Index>(i0 + 1, grid_n - 1);
    a = g - static_cast<T>(i0);
    if (grid_n == 1) a = T(0);
  };
  Eigen::Index x0, x1, y0, y1;
  BilinearTap<T> tap;
  axis(u, image_w, grid_w, x0, x1, tap.ax, tap.dgx_du);
  axis(v, image_h, grid_h, y0, y1, tap.ay, tap.dgy_dv);
  tap.i00 = y0 * grid_w + x0;
  tap.i10 = y0 * grid_w + x1;
  tap.i01 = y1 * grid_w + x0;
  tap.i11 = y1 * grid_w + x1;
  return tap;
}

struct GridShape {
  int grid_w, grid_h, image_w, image_h;
};

/// Samples feature grids (each L x grid_h*grid_w) at pixel coordinates uv (2 x N*B);
/// block n uses grid n. Invalid columns return the zero vector.
template <typename T>
Var<T> bilinear_sample(const std::vector<Var<T>>& grids, const std::vector<GridShape>& shapes, const Var<T>& uv,
                       const Matrix<T>& valid, Eigen::Index batch) {
  require(!grids.empty() && grids.size() == shapes.size(), "bilinear_sample: grid list mismatch");
  const Eigen::Index L = grids.front().rows();
  const Eigen::Index total = uv.cols();
  require(total == batch * static_cast<Eigen::Index>(grids.size()), "bilinear_sample: shape mismatch");
  Matrix<T> y = Matrix<T>::Zero(L, total);
  std::vector<BilinearTap<T>> taps(static_cast<std::size_t>(total));
  for (Eigen::Index c = 0; c < total; ++c) {
    if (valid(0, c) == T(0)) continue;
    const auto n = static_cast<std::size_t>(c / batch);
    const GridShape& s = shapes[n];
    const auto tap = bilinear_tap<T>(uv.value()(0, c), uv.value()(1, c), s.image_w, s.image_h, s.grid_w, s.grid_h);
    taps[c] = tap;
    const Matrix<T>& F = grids[n].value();
    y.col(c) = (T(1) - tap.ax) * (T(1) - tap.ay) * F.col(tap.i00) + tap.ax * (T(1) - tap.ay) * F.col(tap.i10) +
               (T(1) - tap.ax) * tap.ay * F.col(tap.i01) + tap.ax * tap.ay * F.col(tap.i11);
  }
  std::vector<Var<T>> inputs = grids;
  inputs.push_back(uv);
  std::vector<std::shared_ptr<Node<T>>> grid_nodes;
  for (const auto& g : grids) grid_nodes.push_back(g.node());
  auto uvn = uv.node();
  return make_op<T>(std::move(y), inputs,
                    [grid_nodes, uvn, taps = std::move(taps), valid, batch](Node<T>& out) {
                      std::vector<Matrix<T>> grid_grads(grid_nodes.size());
                      for (std::size_t n = 0; n < grid_nodes.size(); ++n)
                        if (grid_nodes[n]->requires_grad)
                          grid_grads[n] = Matrix<T>::Zero(grid_nodes[n]->value.rows(), grid_nodes[n]->value.cols());
                      Matrix<T> guv = Matrix<T>::Zero(2, out.grad.cols());
                      for (Eigen::Index c = 0; c < out.grad.cols(); ++c) {
                        if (valid(0, c) == T(0)) continue;
                        const auto n = static_cast<std::size_t>(c / batch);
                        const auto& tap = taps[c];
                        const auto g = out.grad.col(c);
                        if (grid_grads[n].size() != 0) {
                          grid_grads[n].col(tap.i00) += (T(1) - tap.ax) * (T(1) - tap.ay) * g;
                          grid_grads[n].col(tap.i10) += tap.ax * (T(1) - tap.ay) * g;
                          grid_grads[n].col(tap.i01) += (T(1) - tap.ax) * tap.ay * g;
                          grid_grads[n].col(tap.i11) += tap.ax * tap.ay * g;
                        }
                        if (uvn->requires_grad && (tap.dgx_du != T(0) || tap.dgy_dv != T(0))) {
                          const Matrix<T>& F = grid_nodes[n]->value;
                          const auto dx = ((T(1) - tap.ay) * (F.col(tap.i10) - F.col(tap.i00)) +
                                           tap.ay * (F.col(tap.i11) - F.col(tap.i01)))
                                              .eval();
                          const auto dy = ((T(1) - tap.ax) * (F.col(tap.i01) - F.col(tap.i00)) +
                                           tap.ax * (F.col(tap.i11) - F.col(tap.i10)))
                                              .eval();
                          guv(0, c) = g.dot(dx) * tap.dgx_du;
                          guv(1, c) = g.dot(dy) * tap.dgy_dv;
                        }
                      }
                      for (std::size_t n = 0; n < grid_nodes.size(); ++n)
                        if (grid_grads[n].size() != 0) grid_nodes[n]->accumulate(grid_grads[n]);
                      if (uvn->requires_grad) uvn->accumulate(guv);
                    });
}

/// Below this total weight the aggregation falls back to uniform weights.
inline constexpr double kMinTotalWeight = 1e-12;

/// Weighted mean and variance over N reference blocks.
/// features: (C x N*B); weights: (1 x N*B). Output (2C x B): [mean; variance], using
/// normalised weights w_n / sum_n w_n (uniform when all weights vanish).
template <typename T>
Var<T> weighted_moments(const Var<T>& features, const Var<T>& weights, Eigen::Index batch) {
  const Eigen::Index C = features.rows();
  const Eigen::Index N = features.cols() / batch;
  require(N >= 1 && features.cols() == N * batch && weights.rows() == 1 && weights.cols() == features.cols(),
          "weighted_moments: shape mismatch");
  const Matrix<T>& F = features.value();
  const Matrix<T>& W = weights.value();
  Matrix<T> norm_w(N, batch);  // normalised weights
  Eigen::Array<bool, 1, Eigen::Dynamic> fallback(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    T total = 0;
    for (Eigen::Index n = 0; n < N; ++n) total += W(0, n * batch + b);
    fallback(b) = !(total > static_cast<T>(kMinTotalWeight));
    for (Eigen::Index n = 0; n < N; ++n)
      norm_w(n, b) = fallback(b) ? T(1) / static_cast<T>(N) : W(0, n * batch + b) / total;
  }
  Matrix<T> mean = Matrix<T>::Zero(C, batch);
  for (Eigen::Index n = 0; n < N; ++n)
    mean.array() += F.middleCols(n * batch, batch).array().rowwise() * norm_w.row(n).array();
  Matrix<T> var = Matrix<T>::Zero(C, batch);
  for (Eigen::Index n = 0; n < N; ++n)
    var.array() += (F.middleCols(n * batch, batch) - mean).array().square().rowwise() * norm_w.row(n).array();
  Matrix<T> y(2 * C, batch);
  y.topRows(C) = mean;
  y.bottomRows(C) = var;

  auto fn = features.node(), wn = weights.node();
  return make_op<T>(std::move(y), {features, weights},
                    [fn, wn, norm_w, fallback, batch, C, N](Node<T>& out) {
                      const Matrix<T>& F = fn->value;
                      const auto g_mean = out.grad.topRows(C);
                      const auto g_var = out.grad.bottomRows(C);
                      const auto mean = out.value.topRows(C);
                      if (fn->requires_grad) {
                        Matrix<T> gF(C, N * batch);
                        for (Eigen::Index n = 0; n < N; ++n) {
                          const auto centred = (F.middleCols(n * batch, batch) - mean).array();
                          gF.middleCols(n * batch, batch) =
                              ((g_mean.array() + T(2) * g_var.array() * centred).rowwise() * norm_w.row(n).array())
                                  .matrix();
                        }
                        fn->accumulate(gF);
                      }
                      if (wn->requires_grad) {
                        // d/d(normalised w_n) of the outputs, then through w_n / sum(w).
                        Matrix<T> g_norm(N, batch);
                        for (Eigen::Index n = 0; n < N; ++n) {
                          const auto Fn = F.middleCols(n * batch, batch).array();
                          g_norm.row(n) =
                              (g_mean.array() * Fn + g_var.array() * (Fn - mean.array()).square()).colwise().sum();
                        }
                        Matrix<T> gW = Matrix<T>::Zero(1, N * batch);
                        for (Eigen::Index b = 0; b < batch; ++b) {
                          if (fallback(b)) continue;
                          T total = 0;
                          for (Eigen::Index n = 0; n < N; ++n) total += wn->value(0, n * batch + b);
                          const T dot = norm_w.col(b).dot(g_norm.col(b));
                          for (Eigen::Index n = 0; n < N; ++n) gW(0, n * batch + b) = (g_norm(n, b) - dot) / total;
                        }
                        wn->accumulate(gW);
                      }
                    });
}

}  // namespace nbv::nn
