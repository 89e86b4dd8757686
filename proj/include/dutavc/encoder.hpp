#pragma once

// Content encoder: mel -> speaker-independent mel (SIMS) plus frame-level
// phoneme posteriors and log-duration predictions.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dutavc/alignment.hpp"
#include "dutavc/audio.hpp"
#include "dutavc/nn/layers.hpp"
#include "dutavc/training.hpp"

namespace dutavc {

struct EncoderConfig {
  int n_mels = 80;
  int d_model = 192;
  int n_heads = 2;
  int d_ff = 768;
  int n_blocks = 6;
  int prenet_kernel = 5;
  int ffn_kernel = 3;
  int predictor_channels = 192;
  int predictor_kernel = 3;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct EncoderOutput {
  Eigen::MatrixXd sims_pred;       // F x n_mels
  Eigen::MatrixXd phoneme_logits;  // F x P
  Eigen::VectorXd log_dur_pred;    // F, natural log of seconds

  int num_frames() const { return static_cast<int>(sims_pred.rows()); }
};

/// Graph-level outputs used for training.
struct EncoderVars {
  nn::Var sims;      // [F, n_mels]
  nn::Var logits;    // [F, P]
  nn::Var log_dur;   // [F, 1]
};

class EncoderModel {
 public:
  EncoderModel(EncoderConfig cfg, PhonemeInventory inventory, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  const PhonemeInventory& inventory() const { return inventory_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::size_t num_parameters() const { return params_.num_scalars(); }

  /// mel [F, n_mels] -> outputs. Deterministic (no dropout).
  EncoderVars forward(const nn::Var& mel) const;

  /// Deep copy with independent parameters.
  EncoderModel clone() const;

 private:
  struct Block {
    std::vector<nn::Linear> q, k, v;
    std::vector<nn::Var> out_w;
    nn::Var out_b;
    nn::LayerNorm ln1, ln2;
    nn::Conv1d ff1, ff2;
  };
  struct Predictor {
    nn::Conv1d c1, c2;
    nn::LayerNorm n1, n2;
    nn::Linear proj;
  };

  nn::Var attention(const Block& b, const nn::Var& x) const;
  nn::Var predictor(const Predictor& p, const nn::Var& x) const;

  EncoderConfig cfg_;
  PhonemeInventory inventory_;
  std::uint64_t seed_;
  nn::ParamStore params_;
  std::vector<nn::Conv1d> prenet_conv_;
  std::vector<nn::LayerNorm> prenet_norm_;
  nn::Linear prenet_proj_;
  std::vector<Block> blocks_;
  nn::Linear sims_proj_;
  Predictor phoneme_head_, duration_head_;
};

EncoderOutput encode(const EncoderModel& model, const MelSpectrogram& m);
std::vector<EncoderOutput> encode_batch(const EncoderModel& model,
                                        const std::vector<MelSpectrogram>& batch);

struct EncoderLossWeights {
  double phoneme = 1.0;
  double duration = 1.0;
};

struct EncoderLosses {
  double sims = 0.0, phoneme = 0.0, duration = 0.0, total = 0.0;
};

struct EncoderTargets {
  Eigen::MatrixXd gt_sims;          // F x n_mels
  std::vector<PhonemeId> labels;    // F
  std::vector<double> gt_log_dur;   // F; ignored on silence frames
};

struct EncoderLossVars {
  nn::Var sims, phoneme, duration, total;
};

/// MSE to the ground-truth SIMS + lambda_p * frame CE + lambda_d * MSE of
/// log durations over non-silence frames.
EncoderLossVars encoder_loss_vars(const EncoderVars& out, const EncoderTargets& targets,
                                  const EncoderLossWeights& w = {});
/// Throws InvalidArgument on shape mismatch and Error on non-finite values.
EncoderLosses encoder_loss(const EncoderOutput& out, const EncoderTargets& targets,
                           const EncoderLossWeights& w = {});

struct EncoderExample {
  MelSpectrogram mel;
  EncoderTargets targets;
};

/// Builds training targets from an utterance mel, its alignment and the SIMS dictionary.
EncoderExample make_encoder_example(const MelSpectrogram& mel, const PhonemeAlignment& alignment,
                                    const SimsDictionary& dict);

/// Trains `model` in place on typical speech.
void train_encoder(EncoderModel& model, const std::vector<EncoderExample>& corpus,
                   const TrainConfig& cfg, const EncoderLossWeights& weights = {},
                   TrainLog* log = nullptr);

struct DurationQuery {
  std::vector<PhonemeId> phoneme_set;  // distinct non-silence predictions, ascending
  double t_s = 0.0;                    // mean predicted segment duration (s)
  int num_segments = 0;
};

/// Collapses runs of equal argmax labels into segments, drops silence, and
/// averages exp(mean log-duration) over the remaining segments.
DurationQuery source_duration_query(const EncoderOutput& out);

void save_encoder(const std::string& path, const EncoderModel& model);
EncoderModel load_encoder(const std::string& path);

}  // namespace dutavc
