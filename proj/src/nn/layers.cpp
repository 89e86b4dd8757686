#include "dutavc/nn/layers.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "dutavc/binary_io.hpp"
#include "dutavc/error.hpp"

namespace dutavc::nn {

Var ParamStore::uniform(const std::string& name, std::vector<int> shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data) v = u(rng);
  Var p(std::move(t), true);
  params_.emplace_back(name, p);
  return p;
}

Var ParamStore::constant(const std::string& name, std::vector<int> shape, double value) {
  Var p(Tensor(std::move(shape), value), true);
  params_.emplace_back(name, p);
  return p;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& [n, v] : params_) out.push_back(v);
  return out;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [n, v] : params_) {
    Var p = v;
    p.zero_grad();
  }
}

std::vector<Tensor> ParamStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [n, v] : params_) out.push_back(v.value());
  return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
  DUTAVC_CHECK(values.size() == params_.size(), "ParamStore::restore: tensor count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    Var p = params_[i].second;
    DUTAVC_CHECK(p.shape() == values[i].shape, "ParamStore::restore: shape mismatch for " + params_[i].first);
    p.value() = values[i];
  }
}

void ParamStore::write(std::ostream& os) const {
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, v] : params_) {
    bin::put_string(os, name);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.value().rank()));
    for (int d : v.shape()) bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double x : v.value().data) bin::put<double>(os, x);
  }
}

void ParamStore::read(std::istream& is) {
  const auto n = bin::get<std::uint32_t>(is);
  if (n != params_.size())
    throw FormatError("checkpoint holds " + std::to_string(n) + " tensors, model expects " +
                      std::to_string(params_.size()));
  for (auto& [name, v] : params_) {
    const std::string stored = bin::get_string(is);
    if (stored != name) throw FormatError("checkpoint tensor '" + stored + "' where '" + name + "' expected");
    const auto rank = bin::get<std::uint32_t>(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(bin::get<std::uint32_t>(is));
    if (shape != v.shape()) throw FormatError("checkpoint tensor '" + name + "' has mismatched shape");
    Var p = v;
    for (double& x : p.value().data) x = bin::get<double>(is);
  }
}

// --- layers ---------------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng)
    : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = store.uniform(name + ".weight", {in, out}, bound, rng);
  bias_ = store.uniform(name + ".bias", {out}, bound, rng);
}

Var Linear::operator()(const Var& x) const { return add_row_vector(matmul(x, weight_), bias_); }

Conv1d::Conv1d(ParamStore& store, const std::string& name, int in, int out, int kernel, Rng& rng)
    : kernel_(kernel) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
  weight_ = store.uniform(name + ".weight", {kernel * in, out}, bound, rng);
  bias_ = store.uniform(name + ".bias", {out}, bound, rng);
}

Var Conv1d::operator()(const Var& x) const {
  const Var cols = kernel_ == 1 ? x : im2col_1d(x, kernel_);
  return add_row_vector(matmul(cols, weight_), bias_);
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
               int pad, Rng& rng)
    : out_(out), kernel_(kernel), stride_(stride), pad_(pad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight_ = store.uniform(name + ".weight", {out, in * kernel * kernel}, bound, rng);
  bias_ = store.uniform(name + ".bias", {out}, bound, rng);
}

Var Conv2d::operator()(const Var& x) const {
  const int h = x.dim(1), w = x.dim(2);
  const int ho = (h + 2 * pad_ - kernel_) / stride_ + 1;
  const int wo = (w + 2 * pad_ - kernel_) / stride_ + 1;
  Var cols = (kernel_ == 1 && stride_ == 1 && pad_ == 0)
                 ? reshape(x, {x.dim(0), h * w})
                 : im2col_2d(x, kernel_, stride_, pad_);
  return reshape(add_channel_vector(matmul(weight_, cols), bias_), {out_, ho, wo});
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) : dim_(dim) {
  gamma_ = store.constant(name + ".gamma", {dim}, 1.0);
  beta_ = store.constant(name + ".beta", {dim}, 0.0);
}

Var LayerNorm::operator()(const Var& x) const {
  return affine_rows(normalize_chunks(x, static_cast<std::size_t>(dim_)), gamma_, beta_);
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int groups, int channels)
    : groups_(groups) {
  DUTAVC_CHECK(groups >= 1 && channels % groups == 0, "GroupNorm: channels must divide into groups");
  gamma_ = store.constant(name + ".gamma", {channels}, 1.0);
  beta_ = store.constant(name + ".beta", {channels}, 0.0);
}

Var GroupNorm::operator()(const Var& x) const {
  return affine_channels(normalize_chunks(x, x.numel() / static_cast<std::size_t>(groups_)), gamma_,
                         beta_);
}

Tensor sinusoidal_embedding(double position, int dim) {
  DUTAVC_CHECK(dim >= 4 && dim % 2 == 0, "sinusoidal_embedding: dim must be even and >= 4");
  const int half = dim / 2;
  const double step = std::log(10000.0) / (half - 1);
  Tensor t({dim});
  for (int i = 0; i < half; ++i) {
    const double a = position * std::exp(-step * i);
    t.data[i] = std::sin(a);
    t.data[half + i] = std::cos(a);
  }
  return t;
}

// --- Adam -------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.numel())));
    v_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.numel())));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::step() {
  double sq = 0.0;
  for (auto& p : params_)
    if (p.has_grad()) sq += p.grad().vec().squaredNorm();
  const double norm = std::sqrt(sq);
  double clip = 1.0;
  if (opts_.clip_grad_norm > 0.0 && norm > opts_.clip_grad_norm) clip = opts_.clip_grad_norm / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (!p.has_grad()) continue;
    const Eigen::VectorXd g = clip * p.grad().vec();
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    if (opts_.lr != 0.0)
      p.value().vec().array() -=
          opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
  zero_grad();
  return norm;
}

}  // namespace dutavc::nn
