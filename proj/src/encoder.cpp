#include "dutavc/encoder.hpp"

#include <cmath>
#include <sstream>

#include "dutavc/error.hpp"
#include "dutavc/nn/checkpoint.hpp"

namespace dutavc {

using nn::Tensor;
using nn::Var;

void EncoderConfig::validate() const {
  DUTAVC_CHECK(n_mels >= 1 && d_model >= 1 && d_ff >= 1 && n_blocks >= 0,
               "encoder config: sizes must be positive");
  DUTAVC_CHECK(n_heads >= 1 && d_model % n_heads == 0, "encoder config: d_model must divide into heads");
  DUTAVC_CHECK(prenet_kernel % 2 == 1 && ffn_kernel % 2 == 1 && predictor_kernel % 2 == 1,
               "encoder config: kernels must be odd");
  DUTAVC_CHECK(predictor_channels >= 1, "encoder config: predictor width must be positive");
}

EncoderModel::EncoderModel(EncoderConfig cfg, PhonemeInventory inventory, std::uint64_t seed)
    : cfg_(cfg), inventory_(std::move(inventory)), seed_(seed) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.d_model;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "prenet." + std::to_string(i);
    prenet_conv_.emplace_back(params_, name + ".conv", i == 0 ? cfg_.n_mels : d, d,
                              cfg_.prenet_kernel, rng);
    prenet_norm_.emplace_back(params_, name + ".norm", d);
  }
  prenet_proj_ = nn::Linear(params_, "prenet.proj", d, d, rng);

  const int dk = d / cfg_.n_heads;
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string name = "block." + std::to_string(b);
    Block blk;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const std::string hn = name + ".head" + std::to_string(h);
      blk.q.emplace_back(params_, hn + ".q", d, dk, rng);
      blk.k.emplace_back(params_, hn + ".k", d, dk, rng);
      blk.v.emplace_back(params_, hn + ".v", d, dk, rng);
      blk.out_w.push_back(params_.uniform(hn + ".out", {dk, d}, 1.0 / std::sqrt(double(d)), rng));
    }
    blk.out_b = params_.uniform(name + ".out_bias", {d}, 1.0 / std::sqrt(double(d)), rng);
    blk.ln1 = nn::LayerNorm(params_, name + ".ln1", d);
    blk.ff1 = nn::Conv1d(params_, name + ".ff1", d, cfg_.d_ff, cfg_.ffn_kernel, rng);
    blk.ff2 = nn::Conv1d(params_, name + ".ff2", cfg_.d_ff, d, cfg_.ffn_kernel, rng);
    blk.ln2 = nn::LayerNorm(params_, name + ".ln2", d);
    blocks_.push_back(std::move(blk));
  }
  sims_proj_ = nn::Linear(params_, "sims_proj", d, cfg_.n_mels, rng);

  auto make_predictor = [&](const std::string& name, int out) {
    const int c = cfg_.predictor_channels;
    return Predictor{nn::Conv1d(params_, name + ".conv1", d, c, cfg_.predictor_kernel, rng),
                     nn::Conv1d(params_, name + ".conv2", c, c, cfg_.predictor_kernel, rng),
                     nn::LayerNorm(params_, name + ".norm1", c),
                     nn::LayerNorm(params_, name + ".norm2", c),
                     nn::Linear(params_, name + ".proj", c, out, rng)};
  };
  phoneme_head_ = make_predictor("phoneme", inventory_.size());
  duration_head_ = make_predictor("duration", 1);
}

EncoderModel EncoderModel::clone() const {
  EncoderModel copy(cfg_, inventory_, seed_);
  copy.params_.restore(params_.snapshot());
  return copy;
}

Var EncoderModel::attention(const Block& b, const Var& x) const {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model / cfg_.n_heads));
  Var out;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    Var q = b.q[h](x), k = b.k[h](x), v = b.v[h](x);
    Var attn = nn::softmax_rows(nn::scale(nn::matmul(q, k, false, true), inv_sqrt));
    Var head = nn::matmul(nn::matmul(attn, v), b.out_w[h]);
    out = h == 0 ? head : nn::add(out, head);
  }
  return nn::add_row_vector(out, b.out_b);
}

Var EncoderModel::predictor(const Predictor& p, const Var& x) const {
  Var h = p.n1(nn::silu(p.c1(x)));
  h = p.n2(nn::silu(p.c2(h)));
  return p.proj(h);
}

EncoderVars EncoderModel::forward(const Var& mel) const {
  DUTAVC_CHECK(mel.value().rank() == 2 && mel.dim(1) == cfg_.n_mels,
               "encoder: expected [F, " + std::to_string(cfg_.n_mels) + "] input, got " +
                   mel.value().shape_string());
  DUTAVC_CHECK(mel.dim(0) >= 1, "encoder: empty input");
  Var h0 = nn::silu(prenet_norm_[0](prenet_conv_[0](mel)));
  Var h = nn::silu(prenet_norm_[1](prenet_conv_[1](h0)));
  h = nn::silu(prenet_norm_[2](prenet_conv_[2](h)));
  Var x = nn::add(h0, prenet_proj_(h));

  for (const auto& b : blocks_) {
    x = b.ln1(nn::add(x, attention(b, x)));
    Var ff = b.ff2(nn::silu(b.ff1(x)));
    x = b.ln2(nn::add(x, ff));
  }
  return {sims_proj_(x), predictor(phoneme_head_, x), predictor(duration_head_, x)};
}

EncoderOutput encode(const EncoderModel& model, const MelSpectrogram& m) {
  DUTAVC_CHECK(m.num_frames() >= 1, "encode: empty mel");
  if (m.num_mels() != model.config().n_mels)
    throw InvalidArgument("encode: mel has " + std::to_string(m.num_mels()) +
                          " bins, model expects " + std::to_string(model.config().n_mels));
  nn::NoGradGuard no_grad;
  const EncoderVars v = model.forward(Var(Tensor::from_matrix(m.frames)));
  EncoderOutput out;
  out.sims_pred = v.sims.value().to_matrix();
  out.phoneme_logits = v.logits.value().to_matrix();
  out.log_dur_pred = v.log_dur.value().to_matrix().col(0);
  return out;
}

std::vector<EncoderOutput> encode_batch(const EncoderModel& model,
                                        const std::vector<MelSpectrogram>& batch) {
  std::vector<EncoderOutput> out;
  out.reserve(batch.size());
  for (const auto& m : batch) out.push_back(encode(model, m));
  return out;
}

EncoderLossVars encoder_loss_vars(const EncoderVars& out, const EncoderTargets& t,
                                  const EncoderLossWeights& w) {
  const int f = out.sims.dim(0);
  DUTAVC_CHECK(t.gt_sims.rows() == f && t.gt_sims.cols() == out.sims.dim(1),
               "encoder_loss: SIMS target shape mismatch");
  DUTAVC_CHECK(static_cast<int>(t.labels.size()) == f && static_cast<int>(t.gt_log_dur.size()) == f,
               "encoder_loss: label/duration target length mismatch");
  std::vector<double> mask(f);
  for (int i = 0; i < f; ++i) mask[i] = t.labels[i] == PhonemeInventory::kSilenceId ? 0.0 : 1.0;

  EncoderLossVars l;
  l.sims = nn::mse_loss(out.sims, Tensor::from_matrix(t.gt_sims));
  l.phoneme = nn::cross_entropy_rows(out.logits, t.labels);
  l.duration = nn::masked_mse_loss(out.log_dur, t.gt_log_dur, mask);
  l.total = nn::add(nn::add(l.sims, nn::scale(l.phoneme, w.phoneme)), nn::scale(l.duration, w.duration));
  return l;
}

EncoderLosses encoder_loss(const EncoderOutput& out, const EncoderTargets& t,
                           const EncoderLossWeights& w) {
  DUTAVC_CHECK(out.phoneme_logits.rows() == out.sims_pred.rows() &&
                   out.log_dur_pred.size() == out.sims_pred.rows(),
               "encoder_loss: inconsistent encoder output shapes");
  nn::NoGradGuard no_grad;
  EncoderVars v{Var(Tensor::from_matrix(out.sims_pred)), Var(Tensor::from_matrix(out.phoneme_logits)),
                Var(Tensor::from_matrix(out.log_dur_pred))};
  const EncoderLossVars l = encoder_loss_vars(v, t, w);
  EncoderLosses r{l.sims.item(), l.phoneme.item(), l.duration.item(), l.total.item()};
  if (!std::isfinite(r.total)) {
    std::ostringstream msg;
    msg << "encoder_loss: non-finite loss (sims=" << r.sims << ", phoneme=" << r.phoneme
        << ", duration=" << r.duration << "; non-finite inputs: sims_pred="
        << !out.sims_pred.allFinite() << " logits=" << !out.phoneme_logits.allFinite()
        << " log_dur=" << !out.log_dur_pred.allFinite() << ")";
    throw Error(msg.str());
  }
  return r;
}

EncoderExample make_encoder_example(const MelSpectrogram& mel, const PhonemeAlignment& alignment,
                                    const SimsDictionary& dict) {
  EncoderExample ex;
  ex.mel = mel;
  ex.targets.labels = frame_labels(alignment, mel.num_frames(), mel.hop_s);
  ex.targets.gt_log_dur = frame_log_durations(alignment, mel.num_frames(), mel.hop_s);
  ex.targets.gt_sims = ground_truth_sims(mel, ex.targets.labels, dict).frames;
  return ex;
}

void train_encoder(EncoderModel& model, const std::vector<EncoderExample>& corpus,
                   const TrainConfig& cfg, const EncoderLossWeights& weights, TrainLog* log) {
  for (const auto& ex : corpus)
    DUTAVC_CHECK(ex.mel.num_mels() == model.config().n_mels, "train_encoder: mel-bin mismatch");
  std::vector<Tensor> inputs;
  inputs.reserve(corpus.size());
  for (const auto& ex : corpus) inputs.push_back(Tensor::from_matrix(ex.mel.frames));
  run_training(
      model.params(), corpus.size(), cfg,
      [&](std::size_t i, Rng&) {
        return encoder_loss_vars(model.forward(Var(inputs[i])), corpus[i].targets, weights).total;
      },
      [&](const std::string& path) { save_encoder(path, model); }, log);
}

DurationQuery source_duration_query(const EncoderOutput& out) {
  const int f = out.num_frames();
  DUTAVC_CHECK(f >= 1 && out.phoneme_logits.rows() == f && out.log_dur_pred.size() == f,
               "source_duration_query: inconsistent encoder output");
  std::vector<int> argmax(f);
  for (int i = 0; i < f; ++i) out.phoneme_logits.row(i).maxCoeff(&argmax[i]);

  DurationQuery q;
  std::vector<bool> seen(out.phoneme_logits.cols(), false);
  double seg_sum = 0.0;
  for (int i = 0; i < f;) {
    int j = i;
    double log_sum = 0.0;
    while (j < f && argmax[j] == argmax[i]) log_sum += out.log_dur_pred(j++);
    if (argmax[i] != PhonemeInventory::kSilenceId) {
      seg_sum += std::exp(log_sum / (j - i));
      ++q.num_segments;
      seen[argmax[i]] = true;
    }
    i = j;
  }
  if (q.num_segments == 0) throw InvalidArgument("source_duration_query: no phonetic content");
  for (std::size_t p = 0; p < seen.size(); ++p)
    if (seen[p]) q.phoneme_set.push_back(static_cast<PhonemeId>(p));
  q.t_s = seg_sum / q.num_segments;
  return q;
}

void save_encoder(const std::string& path, const EncoderModel& model) {
  const auto& c = model.config();
  nlohmann::json meta = {
      {"n_mels", c.n_mels},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"d_ff", c.d_ff},
      {"n_blocks", c.n_blocks},
      {"prenet_kernel", c.prenet_kernel},
      {"ffn_kernel", c.ffn_kernel},
      {"predictor_channels", c.predictor_channels},
      {"predictor_kernel", c.predictor_kernel},
      {"phonemes", model.inventory().symbols()},
      {"inventory_hash", model.inventory().hash()},
  };
  nn::write_checkpoint(path, "encoder", meta, model.params());
}

EncoderModel load_encoder(const std::string& path) {
  return nn::read_checkpoint(path, "encoder", [&](const nn::CheckpointHeader& h) {
    try {
      EncoderConfig c;
      c.n_mels = h.meta.at("n_mels");
      c.d_model = h.meta.at("d_model");
      c.n_heads = h.meta.at("n_heads");
      c.d_ff = h.meta.at("d_ff");
      c.n_blocks = h.meta.at("n_blocks");
      c.prenet_kernel = h.meta.at("prenet_kernel");
      c.ffn_kernel = h.meta.at("ffn_kernel");
      c.predictor_channels = h.meta.at("predictor_channels");
      c.predictor_kernel = h.meta.at("predictor_kernel");
      return EncoderModel(c, PhonemeInventory(h.meta.at("phonemes").get<std::vector<std::string>>()), 0);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": incomplete encoder metadata: " + e.what());
    }
  });
}

}  // namespace dutavc
