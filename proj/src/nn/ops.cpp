#include "dutavc/nn/ops.hpp"

#include <cmath>

#include "dutavc/error.hpp"

namespace dutavc::nn {
namespace {

using NodePtr = std::shared_ptr<Node>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + a.value().shape_string() +
                          " vs " + b.value().shape_string());
}

void check_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank)
    throw InvalidArgument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          a.value().shape_string());
}

}  // namespace

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const int n = ta ? ac : ar, k = ta ? ar : ac;
  const int k2 = tb ? bc : br, m = tb ? br : bc;
  if (k != k2)
    throw InvalidArgument("matmul: inner dimension mismatch " + a.value().shape_string() + " x " +
                          b.value().shape_string());
  Tensor out({n, m});
  auto A = a.value().mat(ar, ac);
  auto B = b.value().mat(br, bc);
  auto C = out.mat(n, m);
  if (!ta && !tb) C.noalias() = A * B;
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb, ta, tb, ar, ac, br, bc, n, m](Node& self) {
    auto dC = self.grad.mat(n, m);
    auto A = pa->value.mat(ar, ac);
    auto B = pb->value.mat(br, bc);
    if (pa->requires_grad) {
      auto dA = pa->grad_buffer().mat(ar, ac);
      // d op(A) = dC op(B)^T
      if (!ta && !tb) dA.noalias() += dC * B.transpose();
      else if (!ta && tb) dA.noalias() += dC * B;
      else if (ta && !tb) dA.noalias() += B * dC.transpose();
      else dA.noalias() += B.transpose() * dC.transpose();
    }
    if (pb->requires_grad) {
      auto dB = pb->grad_buffer().mat(br, bc);
      // d op(B) = op(A)^T dC
      if (!ta && !tb) dB.noalias() += A.transpose() * dC;
      else if (ta && !tb) dB.noalias() += A * dC;
      else if (!ta && tb) dB.noalias() += dC.transpose() * A;
      else dB.noalias() += dC.transpose() * A.transpose();
    }
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  out.vec() += b.value().vec();
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad_buffer().vec() += self.grad.vec();
    if (pb->requires_grad) pb->grad_buffer().vec() += self.grad.vec();
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.vec() -= b.value().vec();
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->grad_buffer().vec() += self.grad.vec();
    if (pb->requires_grad) pb->grad_buffer().vec() -= self.grad.vec();
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  out.vec().array() *= b.value().vec().array();
  NodePtr pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad)
      pa->grad_buffer().vec().array() += self.grad.vec().array() * pb->value.vec().array();
    if (pb->requires_grad)
      pb->grad_buffer().vec().array() += self.grad.vec().array() * pa->value.vec().array();
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.vec() *= s;
  NodePtr pa = a.node();
  return make_op(std::move(out), {a}, [pa, s](Node& self) {
    pa->grad_buffer().vec() += s * self.grad.vec();
  });
}

Var add_row_vector(const Var& x, const Var& b) {
  check_rank(x, 2, "add_row_vector");
  const int n = x.dim(0), m = x.dim(1);
  DUTAVC_CHECK(static_cast<int>(b.numel()) == m, "add_row_vector: bias size mismatch");
  Tensor out = x.value();
  out.mat(n, m).rowwise() += b.value().vec().transpose();
  NodePtr px = x.node(), pb = b.node();
  return make_op(std::move(out), {x, b}, [px, pb, n, m](Node& self) {
    if (px->requires_grad) px->grad_buffer().vec() += self.grad.vec();
    if (pb->requires_grad) pb->grad_buffer().vec() += self.grad.mat(n, m).colwise().sum().transpose();
  });
}

Var add_channel_vector(const Var& x, const Var& b) {
  const int c = x.dim(0);
  const int s = static_cast<int>(x.numel() / c);
  DUTAVC_CHECK(static_cast<int>(b.numel()) == c, "add_channel_vector: bias size mismatch");
  Tensor out = x.value();
  out.mat(c, s).colwise() += b.value().vec();
  NodePtr px = x.node(), pb = b.node();
  return make_op(std::move(out), {x, b}, [px, pb, c, s](Node& self) {
    if (px->requires_grad) px->grad_buffer().vec() += self.grad.vec();
    if (pb->requires_grad) pb->grad_buffer().vec() += self.grad.mat(c, s).rowwise().sum();
  });
}

Var affine_rows(const Var& x, const Var& gamma, const Var& beta) {
  check_rank(x, 2, "affine_rows");
  const int n = x.dim(0), m = x.dim(1);
  DUTAVC_CHECK(static_cast<int>(gamma.numel()) == m && static_cast<int>(beta.numel()) == m,
               "affine_rows: parameter size mismatch");
  Tensor out({n, m});
  out.mat(n, m) = (x.value().mat(n, m).array().rowwise() * gamma.value().vec().transpose().array())
                      .rowwise() +
                  beta.value().vec().transpose().array();
  NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta}, [px, pg, pb, n, m](Node& self) {
    auto g = self.grad.mat(n, m);
    if (px->requires_grad)
      px->grad_buffer().mat(n, m).array() +=
          g.array().rowwise() * pg->value.vec().transpose().array();
    if (pg->requires_grad)
      pg->grad_buffer().vec() +=
          (g.array() * px->value.mat(n, m).array()).colwise().sum().transpose().matrix();
    if (pb->requires_grad) pb->grad_buffer().vec() += g.colwise().sum().transpose();
  });
}

Var affine_channels(const Var& x, const Var& gamma, const Var& beta) {
  const int c = x.dim(0);
  const int s = static_cast<int>(x.numel() / c);
  DUTAVC_CHECK(static_cast<int>(gamma.numel()) == c && static_cast<int>(beta.numel()) == c,
               "affine_channels: parameter size mismatch");
  Tensor out(x.shape());
  out.mat(c, s) = (x.value().mat(c, s).array().colwise() * gamma.value().vec().array()).colwise() +
                  beta.value().vec().array();
  NodePtr px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta}, [px, pg, pb, c, s](Node& self) {
    auto g = self.grad.mat(c, s);
    if (px->requires_grad)
      px->grad_buffer().mat(c, s).array() += g.array().colwise() * pg->value.vec().array();
    if (pg->requires_grad)
      pg->grad_buffer().vec() += (g.array() * px->value.mat(c, s).array()).rowwise().sum().matrix();
    if (pb->requires_grad) pb->grad_buffer().vec() += g.rowwise().sum();
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  out.vec() = out.vec().cwiseMax(0.0);
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px](Node& self) {
    px->grad_buffer().vec().array() +=
        self.grad.vec().array() * (px->value.vec().array() > 0.0).cast<double>();
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px](Node& self) {
    auto& g = px->grad_buffer().data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->value.data[i];
      const double sig = 1.0 / (1.0 + std::exp(-v));
      g[i] += self.grad.data[i] * sig * (1.0 + v * (1.0 - sig));
    }
  });
}

Var softmax_rows(const Var& x) {
  check_rank(x, 2, "softmax_rows");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out({n, m});
  auto X = x.value().mat(n, m);
  auto Y = out.mat(n, m);
  for (int i = 0; i < n; ++i) {
    const double mx = X.row(i).maxCoeff();
    Y.row(i) = (X.row(i).array() - mx).exp();
    Y.row(i) /= Y.row(i).sum();
  }
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, n, m](Node& self) {
    auto Y = self.value.mat(n, m);
    auto G = self.grad.mat(n, m);
    auto dX = px->grad_buffer().mat(n, m);
    for (int i = 0; i < n; ++i) {
      const double dot = Y.row(i).dot(G.row(i));
      dX.row(i).array() += Y.row(i).array() * (G.row(i).array() - dot);
    }
  });
}

Var normalize_chunks(const Var& x, std::size_t chunk, double eps) {
  DUTAVC_CHECK(chunk > 0 && x.numel() % chunk == 0, "normalize_chunks: bad chunk size");
  const std::size_t groups = x.numel() / chunk;
  Tensor out(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    ConstVecMap v(x.value().data.data() + g * chunk, static_cast<Eigen::Index>(chunk));
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    VecMap(out.data.data() + g * chunk, static_cast<Eigen::Index>(chunk)) =
        (v.array() - mean) * is;
  }
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, inv_std, chunk, groups](Node& self) {
    auto& gx = px->grad_buffer();
    for (std::size_t g = 0; g < groups; ++g) {
      const auto n = static_cast<Eigen::Index>(chunk);
      ConstVecMap dy(self.grad.data.data() + g * chunk, n);
      ConstVecMap xh(self.value.data.data() + g * chunk, n);
      const double mdy = dy.mean();
      const double mdyx = dy.dot(xh) / static_cast<double>(chunk);
      VecMap(gx.data.data() + g * chunk, n).array() +=
          (*inv_std)[g] * (dy.array() - mdy - xh.array() * mdyx);
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  DUTAVC_CHECK(Tensor::count(shape) == x.numel(), "reshape: element count mismatch");
  Tensor out = x.value();
  out.shape = std::move(shape);
  NodePtr px = x.node();
  return make_op(std::move(out), {x},
                 [px](Node& self) { px->grad_buffer().vec() += self.grad.vec(); });
}

Var concat0(const Var& a, const Var& b) {
  DUTAVC_CHECK(a.value().rank() == b.value().rank() && a.value().rank() >= 1,
               "concat0: rank mismatch");
  for (int i = 1; i < a.value().rank(); ++i)
    DUTAVC_CHECK(a.dim(i) == b.dim(i), "concat0: trailing shape mismatch");
  std::vector<int> shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out(shape);
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
  NodePtr pa = a.node(), pb = b.node();
  const auto na = static_cast<Eigen::Index>(a.numel()), nb = static_cast<Eigen::Index>(b.numel());
  return make_op(std::move(out), {a, b}, [pa, pb, na, nb](Node& self) {
    if (pa->requires_grad) pa->grad_buffer().vec() += self.grad.vec().head(na);
    if (pb->requires_grad) pb->grad_buffer().vec() += self.grad.vec().tail(nb);
  });
}

Var im2col_1d(const Var& x, int kernel) {
  check_rank(x, 2, "im2col_1d");
  DUTAVC_CHECK(kernel >= 1 && kernel % 2 == 1, "im2col_1d: kernel must be odd");
  const int f = x.dim(0), c = x.dim(1), half = kernel / 2;
  Tensor out({f, kernel * c});
  auto X = x.value().mat(f, c);
  auto O = out.mat(f, kernel * c);
  for (int j = 0; j < kernel; ++j) {
    const int shift = j - half;
    const int lo = std::max(0, -shift), hi = std::min(f, f - shift);
    if (hi > lo) O.block(lo, j * c, hi - lo, c) = X.block(lo + shift, 0, hi - lo, c);
  }
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, f, c, kernel, half](Node& self) {
    auto G = self.grad.mat(f, kernel * c);
    auto dX = px->grad_buffer().mat(f, c);
    for (int j = 0; j < kernel; ++j) {
      const int shift = j - half;
      const int lo = std::max(0, -shift), hi = std::min(f, f - shift);
      if (hi > lo) dX.block(lo + shift, 0, hi - lo, c) += G.block(lo, j * c, hi - lo, c);
    }
  });
}

Var im2col_2d(const Var& x, int kernel, int stride, int pad) {
  check_rank(x, 3, "im2col_2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  DUTAVC_CHECK(ho >= 1 && wo >= 1, "im2col_2d: input smaller than kernel");
  const int kk = kernel * kernel;
  Tensor out({c * kk, ho * wo});
  const double* src = x.value().data.data();
  double* dst = out.data.data();
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = dst + static_cast<std::size_t>((ch * kk + ky * kernel + kx)) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* srow = src + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) row[oy * wo + ox] = srow[ix];
          }
        }
      }
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, c, h, w, ho, wo, kernel, stride, pad, kk](Node& self) {
    double* dx = px->grad_buffer().data.data();
    const double* g = self.grad.data.data();
    for (int ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          const double* row = g + static_cast<std::size_t>((ch * kk + ky * kernel + kx)) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            double* drow = dx + (static_cast<std::size_t>(ch) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) drow[ix] += row[oy * wo + ox];
            }
          }
        }
  });
}

Var upsample_nearest2(const Var& x) {
  check_rank(x, 3, "upsample_nearest2");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out.data[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx] =
            x.value().data[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, c, h, w](Node& self) {
    auto& g = px->grad_buffer().data;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          g[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
              self.grad.data[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + xx];
  });
}

Var broadcast_spatial(const Var& v, int height, int width) {
  const int c = static_cast<int>(v.numel());
  const int s = height * width;
  Tensor out({c, height, width});
  out.mat(c, s).colwise() = v.value().vec();
  NodePtr pv = v.node();
  return make_op(std::move(out), {v}, [pv, c, s](Node& self) {
    pv->grad_buffer().vec() += self.grad.mat(c, s).rowwise().sum();
  });
}

Var crop_2d(const Var& x, int height, int width) {
  check_rank(x, 3, "crop_2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  DUTAVC_CHECK(height <= h && width <= w && height >= 1 && width >= 1, "crop_2d: bad crop size");
  Tensor out({c, height, width});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx)
        out.data[(static_cast<std::size_t>(ch) * height + y) * width + xx] =
            x.value().data[(static_cast<std::size_t>(ch) * h + y) * w + xx];
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px, c, h, w, height, width](Node& self) {
    auto& g = px->grad_buffer().data;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx)
          g[(static_cast<std::size_t>(ch) * h + y) * w + xx] +=
              self.grad.data[(static_cast<std::size_t>(ch) * height + y) * width + xx];
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  DUTAVC_CHECK(pred.numel() == target.numel(), "mse_loss: size mismatch");
  const double n = static_cast<double>(pred.numel());
  const Eigen::VectorXd diff = pred.value().vec() - target.vec();
  Tensor out({1}, diff.squaredNorm() / n);
  NodePtr pp = pred.node();
  auto pdiff = std::make_shared<Eigen::VectorXd>(diff);
  return make_op(std::move(out), {pred}, [pp, pdiff, n](Node& self) {
    pp->grad_buffer().vec() += (2.0 * self.grad.data[0] / n) * *pdiff;
  });
}

Var masked_mse_loss(const Var& pred, const std::vector<double>& target,
                    const std::vector<double>& mask) {
  DUTAVC_CHECK(pred.numel() == target.size() && target.size() == mask.size(),
               "masked_mse_loss: size mismatch");
  double denom = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    denom += mask[i];
    const double d = pred.value().data[i] - target[i];
    acc += mask[i] * d * d;
  }
  Tensor out({1}, denom > 0.0 ? acc / denom : 0.0);
  NodePtr pp = pred.node();
  return make_op(std::move(out), {pred}, [pp, target, mask, denom](Node& self) {
    if (denom <= 0.0) return;
    auto& g = pp->grad_buffer().data;
    for (std::size_t i = 0; i < mask.size(); ++i)
      g[i] += self.grad.data[0] * 2.0 * mask[i] * (pp->value.data[i] - target[i]) / denom;
  });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "cross_entropy_rows");
  const int n = logits.dim(0), p = logits.dim(1);
  DUTAVC_CHECK(static_cast<int>(labels.size()) == n, "cross_entropy_rows: label count mismatch");
  auto X = logits.value().mat(n, p);
  auto probs = std::make_shared<RowMatrix>(n, p);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    DUTAVC_CHECK(labels[i] >= 0 && labels[i] < p, "cross_entropy_rows: label out of range");
    const double mx = X.row(i).maxCoeff();
    const double lse = mx + std::log((X.row(i).array() - mx).exp().sum());
    probs->row(i) = (X.row(i).array() - lse).exp();
    loss += lse - X(i, labels[i]);
  }
  Tensor out({1}, loss / n);
  NodePtr pl = logits.node();
  return make_op(std::move(out), {logits}, [pl, probs, labels, n, p](Node& self) {
    auto dX = pl->grad_buffer().mat(n, p);
    const double s = self.grad.data[0] / n;
    dX += s * *probs;
    for (int i = 0; i < n; ++i) dX(i, labels[i]) -= s;
  });
}

Var sum_all(const Var& x) {
  Tensor out({1}, x.value().vec().sum());
  NodePtr px = x.node();
  return make_op(std::move(out), {x}, [px](Node& self) {
    px->grad_buffer().vec().array() += self.grad.data[0];
  });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace dutavc::nn
