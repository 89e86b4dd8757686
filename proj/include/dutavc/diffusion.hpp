#pragma once

// Mel-domain diffusion with a data-dependent prior N(xbar, I):
//   forward  dX = 1/2 beta(t) (xbar - X) dt + sqrt(beta(t)) dW
//   reverse  dX = [1/2 beta(t) (xbar - X) - beta(t) score] dt + sqrt(beta(t)) dW~
// plus the U-Net score estimator, its training and the reverse-time sampler.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dutavc/audio.hpp"
#include "dutavc/nn/layers.hpp"
#include "dutavc/training.hpp"

namespace dutavc {

inline constexpr double kTimeMin = 1e-5;

struct NoiseSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;

  void validate() const;
  double beta(double t) const;
  /// Integral of beta over [0, t].
  double integral(double t) const;
  /// Variance of the forward kernel, 1 - exp(-B(t)).
  double lambda(double t) const;
  /// Mean coefficient of the forward kernel, exp(-B(t) / 2).
  double mean_coef(double t) const;
};

double B_integral(const NoiseSchedule& s, double t);

/// Closed-form forward kernel sample:
/// xbar + (x0 - xbar) e^{-B/2} + sqrt(lambda) noise.
Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xbar, double t,
                               const Eigen::MatrixXd& noise, const NoiseSchedule& s = {});

/// Exact score of the forward kernel, -(x_t - mean_t) / lambda(t). Requires t >= kTimeMin.
Eigen::MatrixXd score_target(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0,
                             const Eigen::MatrixXd& xbar, double t, const NoiseSchedule& s = {});

struct DecoderConfig {
  int n_mels = 80;
  int base_channels = 64;
  std::vector<int> channel_mults = {1, 2, 4, 4};  // one entry per resolution
  int groups = 8;
  int embed_dim = 256;
  int cond_channels = 128;
  int cond_hidden = 256;
  int time_pe_dim = 64;
  int crop_frames = 128;
  NoiseSchedule schedule;
  /// When positive, the score is -(x_t - xbar) / v(t) - c(t) r / sqrt(lambda) with
  /// v = lambda + sigma_data^2 e^{-B}, c = sigma_data e^{-B/2} / sqrt(v) and r the
  /// U-Net output: the exact score for x0 ~ N(xbar, sigma_data^2) plus a learned
  /// residual. Zero uses the U-Net output as the score.
  double sigma_data = 0.0;

  void validate() const;
  /// Frame-count multiple the U-Net needs internally.
  int time_multiple() const { return 1 << (channel_mults.size() - 1); }
  bool operator==(const DecoderConfig& o) const;
};

/// U-Net over [channels, n_mels, frames] maps with a speaker conditioner.
class ScoreNetwork {
 public:
  ScoreNetwork(DecoderConfig cfg, std::uint64_t seed);

  const DecoderConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::size_t num_parameters() const { return params_.num_scalars(); }

  /// c = MLP([e ; PE(t)]) with cond_channels outputs.
  nn::Var condition(const Eigen::VectorXd& embedding, double t) const;

  /// x_t, xbar: [n_mels, F] (F a multiple of 4); cond: [cond_channels].
  /// Returns the score estimate [1, n_mels, F].
  nn::Var forward(const nn::Tensor& x_t, const nn::Tensor& xbar, double t, const nn::Var& cond) const;

  ScoreNetwork clone() const;

 private:
  struct ResBlock {
    nn::Conv2d conv1, conv2, skip;
    nn::GroupNorm norm1, norm2;
    nn::Linear time_proj;
    bool has_skip = false;
  };
  struct Level {
    ResBlock res1, res2;
    nn::Conv2d resample;  // stride-2 conv on the way down, conv after upsampling on the way up
    bool has_resample = false;
  };

  ResBlock make_res(const std::string& name, int in, int out, Rng& rng);
  nn::Var res_forward(const ResBlock& b, const nn::Var& x, const nn::Var& temb) const;

  DecoderConfig cfg_;
  std::uint64_t seed_;
  nn::ParamStore params_;
  nn::Linear cond1_, cond2_, time1_, time2_;
  std::vector<Level> downs_, ups_;
  ResBlock mid1_, mid2_;
  nn::Conv2d final_conv_, out_conv_;
  nn::GroupNorm final_norm_;
};

/// Score estimate as F x n_mels from F x n_mels inputs; F must be a multiple of 4.
Eigen::MatrixXd score_forward(const ScoreNetwork& net, const Eigen::MatrixXd& x_t,
                              const Eigen::MatrixXd& xbar, double t, const Eigen::VectorXd& embedding);

/// A trained decoder: network plus the speaker it was fine-tuned for.
struct DecoderModel {
  ScoreNetwork net;
  std::string speaker_tag;                        // empty for the typical-speech base model
  std::optional<Eigen::VectorXd> target_embedding;  // conditioning used at conversion time

  nn::ParamStore& params() { return net.params(); }
  const nn::ParamStore& params() const { return net.params(); }
};

void save_decoder(const std::string& path, const DecoderModel& model);
DecoderModel load_decoder(const std::string& path);

/// (sqrt(lambda) score + noise)^2 averaged over elements.
nn::Var score_matching_loss(const nn::Var& score, const nn::Tensor& noise, double lambda);

struct DecoderLossDraw {
  double t = 0.0;
  int crop_start = 0;
};

/// One denoising score-matching draw on a random crop of (x0, xbar); both are
/// F x n_mels. Inputs shorter than the crop are padded with the log floor.
nn::Var decoder_loss(const ScoreNetwork& net, const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xbar,
                     const Eigen::VectorXd& embedding, Rng& rng, DecoderLossDraw* draw = nullptr);

struct DecoderExample {
  MelSpectrogram mel;    // X0
  MelSpectrogram prior;  // xbar (SIMS), same shape
};

/// Embedding for utterance `item`, computed from a conditioning crop of its mel.
using ConditionFn = std::function<Eigen::VectorXd(std::size_t item, const MelSpectrogram& crop)>;

/// Training on typical speech; reconstruction and conditioning crops are drawn
/// independently from the same utterance.
void train_decoder(DecoderModel& model, const std::vector<DecoderExample>& corpus,
                   const ConditionFn& condition, const TrainConfig& cfg, TrainLog* log = nullptr);

/// Continues training on one target speaker and tags the model with it.
void finetune_decoder(DecoderModel& model, const std::vector<DecoderExample>& corpus,
                      const ConditionFn& condition, const TrainConfig& cfg,
                      const std::string& speaker_tag, const Eigen::VectorXd& target_embedding,
                      TrainLog* log = nullptr);

/// Score as a function of the current state, the prior mean and time (all F x n_mels).
using ScoreFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xbar, double t)>;

struct SamplerOptions {
  int n_steps = 100;
  std::uint64_t seed = 0;
  bool inject_noise = true;  // false drops the Wiener term (and keeps the prior draw)
  int pad_multiple = 4;
  double pad_value = kLogFloor;
};

/// Reverse-time Euler-Maruyama from X ~ N(xbar, I) with midpoint times
/// t_i = 1 - (i + 1/2) h. xbar is padded along rows to `pad_multiple` and the
/// result trimmed back to its original row count.
Eigen::MatrixXd reverse_sde_sample(const ScoreFn& score, const Eigen::MatrixXd& xbar,
                                   const SamplerOptions& opts = {}, const NoiseSchedule& s = {});

/// Sampler driven by the network with a fixed speaker embedding.
MelSpectrogram decode(const ScoreNetwork& net, const MelSpectrogram& prior,
                      const Eigen::VectorXd& embedding, const SamplerOptions& opts = {});

}  // namespace dutavc
