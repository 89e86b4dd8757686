#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dutavc/nn/ops.hpp"
#include "dutavc/random.hpp"

namespace dutavc::nn {

/// Named, ordered collection of trainable tensors.
class ParamStore {
 public:
  /// Uniform(-bound, bound) initialisation.
  Var uniform(const std::string& name, std::vector<int> shape, double bound, Rng& rng);
  Var constant(const std::string& name, std::vector<int> shape, double value);

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  std::vector<Var> vars() const;
  std::size_t num_scalars() const;
  void zero_grad();

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

  /// u32 count, then per tensor: name, u32 rank, u32 dims..., f64 data.
  void write(std::ostream& os) const;
  /// Names and shapes must match this store exactly.
  void read(std::istream& is);

 private:
  std::vector<std::pair<std::string, Var>> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  /// x[n, in] -> [n, out]
  Var operator()(const Var& x) const;
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  Var weight_, bias_;
  int in_ = 0, out_ = 0;
};

/// Convolution over the frame axis of an [F, C] sequence, "same" padding.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore& store, const std::string& name, int in, int out, int kernel, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Var weight_, bias_;
  int kernel_ = 1;
};

/// 2-D convolution on [C, H, W].
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel, int stride,
         int pad, Rng& rng);
  Var operator()(const Var& x) const;

 private:
  Var weight_, bias_;
  int out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
};

/// Normalises each row of [n, d].
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(const Var& x) const;

 private:
  Var gamma_, beta_;
  int dim_ = 0;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamStore& store, const std::string& name, int groups, int channels);
  Var operator()(const Var& x) const;

 private:
  Var gamma_, beta_;
  int groups_ = 1;
};

/// Sinusoidal embedding of a scalar position: [sin(p w_i), cos(p w_i)],
/// w_i = exp(-i log(10000) / (dim/2 - 1)).
Tensor sinusoidal_embedding(double position, int dim);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_grad_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions opts);
  /// Applies one update using the accumulated gradients, then clears them.
  /// Returns the (pre-clipping) global gradient norm.
  double step();
  void zero_grad();
  const AdamOptions& options() const { return opts_; }
  long steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Eigen::VectorXd> m_, v_;
  AdamOptions opts_;
  long t_ = 0;
};

}  // namespace dutavc::nn
