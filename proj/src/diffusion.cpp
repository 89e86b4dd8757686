#include "dutavc/diffusion.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dutavc/error.hpp"
#include "dutavc/nn/checkpoint.hpp"

namespace dutavc {

using nn::Tensor;
using nn::Var;

// --- schedule and forward kernel --------------------------------------------

void NoiseSchedule::validate() const {
  if (!(beta0 > 0.0 && beta1 > beta0))
    throw InvalidArgument("noise schedule requires 0 < beta0 < beta1");
}

double NoiseSchedule::beta(double t) const { return beta0 + (beta1 - beta0) * t; }

double NoiseSchedule::integral(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("diffusion time " + std::to_string(t) + " outside [0, 1]");
  return beta0 * t + 0.5 * (beta1 - beta0) * t * t;
}

double NoiseSchedule::lambda(double t) const { return -std::expm1(-integral(t)); }

double NoiseSchedule::mean_coef(double t) const { return std::exp(-0.5 * integral(t)); }

double B_integral(const NoiseSchedule& s, double t) { return s.integral(t); }

Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xbar, double t,
                               const Eigen::MatrixXd& noise, const NoiseSchedule& s) {
  DUTAVC_CHECK(x0.rows() == xbar.rows() && x0.cols() == xbar.cols() && noise.rows() == x0.rows() &&
                   noise.cols() == x0.cols(),
               "forward_sample: shape mismatch");
  // Written around x0 so that t = 0 returns x0 exactly.
  return x0 + (xbar - x0) * -std::expm1(-0.5 * s.integral(t)) + noise * std::sqrt(s.lambda(t));
}

Eigen::MatrixXd score_target(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& x0,
                             const Eigen::MatrixXd& xbar, double t, const NoiseSchedule& s) {
  if (!(t >= kTimeMin)) throw InvalidArgument("score_target: t below minimum diffusion time");
  DUTAVC_CHECK(x_t.rows() == x0.rows() && x_t.cols() == x0.cols() && xbar.rows() == x0.rows() &&
                   xbar.cols() == x0.cols(),
               "score_target: shape mismatch");
  const Eigen::MatrixXd mean = xbar + (x0 - xbar) * s.mean_coef(t);
  return -(x_t - mean) / s.lambda(t);
}

// --- configuration -----------------------------------------------------------

void DecoderConfig::validate() const {
  schedule.validate();
  DUTAVC_CHECK(n_mels >= 1 && base_channels >= 1 && !channel_mults.empty(),
               "decoder config: sizes must be positive");
  DUTAVC_CHECK(channel_mults.size() <= 6, "decoder config: at most 6 resolutions");
  for (int m : channel_mults) {
    DUTAVC_CHECK(m >= 1, "decoder config: channel multipliers must be positive");
    DUTAVC_CHECK((base_channels * m) % groups == 0, "decoder config: channels must divide into groups");
  }
  DUTAVC_CHECK(n_mels % time_multiple() == 0,
               "decoder config: mel bins must be divisible by 2^(resolutions - 1)");
  DUTAVC_CHECK(embed_dim >= 1 && cond_channels >= 1 && cond_hidden >= 1,
               "decoder config: conditioner sizes must be positive");
  DUTAVC_CHECK(time_pe_dim >= 4 && time_pe_dim % 2 == 0 && base_channels % 2 == 0 && base_channels >= 4,
               "decoder config: embedding sizes must be even and >= 4");
  DUTAVC_CHECK(crop_frames >= time_multiple() && crop_frames % time_multiple() == 0,
               "decoder config: crop length must be a multiple of 2^(resolutions - 1)");
  DUTAVC_CHECK(sigma_data >= 0.0 && std::isfinite(sigma_data), "decoder config: sigma_data must be >= 0");
}

bool DecoderConfig::operator==(const DecoderConfig& o) const {
  return n_mels == o.n_mels && base_channels == o.base_channels && channel_mults == o.channel_mults &&
         groups == o.groups && embed_dim == o.embed_dim && cond_channels == o.cond_channels &&
         cond_hidden == o.cond_hidden && time_pe_dim == o.time_pe_dim && crop_frames == o.crop_frames &&
         schedule.beta0 == o.schedule.beta0 && schedule.beta1 == o.schedule.beta1 &&
         sigma_data == o.sigma_data;
}

// --- score network -----------------------------------------------------------

ScoreNetwork::ResBlock ScoreNetwork::make_res(const std::string& name, int in, int out, Rng& rng) {
  ResBlock b;
  b.conv1 = nn::Conv2d(params_, name + ".conv1", in, out, 3, 1, 1, rng);
  b.norm1 = nn::GroupNorm(params_, name + ".norm1", cfg_.groups, out);
  b.time_proj = nn::Linear(params_, name + ".time", cfg_.base_channels, out, rng);
  b.conv2 = nn::Conv2d(params_, name + ".conv2", out, out, 3, 1, 1, rng);
  b.norm2 = nn::GroupNorm(params_, name + ".norm2", cfg_.groups, out);
  b.has_skip = in != out;
  if (b.has_skip) b.skip = nn::Conv2d(params_, name + ".skip", in, out, 1, 1, 0, rng);
  return b;
}

ScoreNetwork::ScoreNetwork(DecoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  Rng rng(seed);
  const int base = cfg_.base_channels;
  cond1_ = nn::Linear(params_, "cond.fc1", cfg_.embed_dim + cfg_.time_pe_dim, cfg_.cond_hidden, rng);
  cond2_ = nn::Linear(params_, "cond.fc2", cfg_.cond_hidden, cfg_.cond_channels, rng);
  time1_ = nn::Linear(params_, "time.fc1", base, 4 * base, rng);
  time2_ = nn::Linear(params_, "time.fc2", 4 * base, base, rng);

  const int levels = static_cast<int>(cfg_.channel_mults.size());
  int in = 2 + cfg_.cond_channels;
  for (int i = 0; i < levels; ++i) {
    const int out = base * cfg_.channel_mults[i];
    const std::string name = "down." + std::to_string(i);
    Level lv;
    lv.res1 = make_res(name + ".res1", in, out, rng);
    lv.res2 = make_res(name + ".res2", out, out, rng);
    lv.has_resample = i + 1 < levels;
    if (lv.has_resample) lv.resample = nn::Conv2d(params_, name + ".down", out, out, 3, 2, 1, rng);
    downs_.push_back(std::move(lv));
    in = out;
  }
  mid1_ = make_res("mid.res1", in, in, rng);
  mid2_ = make_res("mid.res2", in, in, rng);
  for (int i = levels - 1; i >= 1; --i) {
    const int cur = base * cfg_.channel_mults[i];
    const int out = base * cfg_.channel_mults[i - 1];
    const std::string name = "up." + std::to_string(i);
    Level lv;
    lv.res1 = make_res(name + ".res1", 2 * cur, out, rng);
    lv.res2 = make_res(name + ".res2", out, out, rng);
    lv.has_resample = true;
    lv.resample = nn::Conv2d(params_, name + ".up", out, out, 3, 1, 1, rng);
    ups_.push_back(std::move(lv));
  }
  final_conv_ = nn::Conv2d(params_, "final.conv", base, base, 3, 1, 1, rng);
  final_norm_ = nn::GroupNorm(params_, "final.norm", cfg_.groups, base);
  out_conv_ = nn::Conv2d(params_, "final.out", base, 1, 1, 1, 0, rng);
}

ScoreNetwork ScoreNetwork::clone() const {
  ScoreNetwork copy(cfg_, seed_);
  copy.params_.restore(params_.snapshot());
  return copy;
}

Var ScoreNetwork::condition(const Eigen::VectorXd& embedding, double t) const {
  if (embedding.size() != cfg_.embed_dim)
    throw InvalidArgument("speaker embedding has " + std::to_string(embedding.size()) +
                          " dims, decoder expects " + std::to_string(cfg_.embed_dim));
  DUTAVC_CHECK(embedding.allFinite(), "speaker embedding is not finite");
  Tensor in({1, cfg_.embed_dim + cfg_.time_pe_dim});
  for (int i = 0; i < cfg_.embed_dim; ++i) in.data[i] = embedding(i);
  const Tensor pe = nn::sinusoidal_embedding(1000.0 * t, cfg_.time_pe_dim);
  std::copy(pe.data.begin(), pe.data.end(), in.data.begin() + cfg_.embed_dim);
  return nn::reshape(cond2_(nn::silu(cond1_(Var(in)))), {cfg_.cond_channels});
}

Var ScoreNetwork::res_forward(const ResBlock& b, const Var& x, const Var& temb) const {
  Var h = nn::silu(b.norm1(b.conv1(x)));
  Var tb = b.time_proj(nn::silu(temb));
  h = nn::add_channel_vector(h, nn::reshape(tb, {tb.dim(1)}));
  h = nn::silu(b.norm2(b.conv2(h)));
  return nn::add(h, b.has_skip ? b.skip(x) : x);
}

namespace {

// [H, W] -> [1, H, W'] with the last column repeated.
Tensor pad_columns(const Tensor& x, int width) {
  const int h = x.dim(0), w = x.dim(1);
  Tensor out({1, h, width});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < width; ++c) out.data[r * width + c] = x.data[r * w + std::min(c, w - 1)];
  return out;
}

}  // namespace

Var ScoreNetwork::forward(const Tensor& x_t, const Tensor& xbar, double t, const Var& cond) const {
  DUTAVC_CHECK(x_t.rank() == 2 && x_t.dim(0) == cfg_.n_mels && x_t.shape == xbar.shape,
               "score network: expected [n_mels, F] inputs of equal shape, got " + x_t.shape_string() +
                   " and " + xbar.shape_string());
  const int frames = x_t.dim(1);
  if (frames < 1 || frames % 4 != 0)
    throw InvalidArgument("score network: frame count " + std::to_string(frames) +
                          " is not a positive multiple of 4 (pad first)");
  DUTAVC_CHECK(cond.numel() == static_cast<std::size_t>(cfg_.cond_channels), "score network: condition size mismatch");
  const int m = cfg_.time_multiple();
  const int width = (frames + m - 1) / m * m;
  const int height = cfg_.n_mels;

  Var x = nn::concat0(nn::concat0(Var(pad_columns(x_t, width)), Var(pad_columns(xbar, width))),
                      nn::broadcast_spatial(cond, height, width));
  Tensor pe = nn::sinusoidal_embedding(1000.0 * t, cfg_.base_channels);
  pe.shape = {1, cfg_.base_channels};
  Var temb = time2_(nn::silu(time1_(Var(std::move(pe)))));

  std::vector<Var> hidden;
  for (const auto& lv : downs_) {
    x = res_forward(lv.res1, x, temb);
    x = res_forward(lv.res2, x, temb);
    hidden.push_back(x);
    if (lv.has_resample) x = lv.resample(x);
  }
  x = res_forward(mid2_, res_forward(mid1_, x, temb), temb);
  for (std::size_t k = 0; k < ups_.size(); ++k) {
    const Level& lv = ups_[k];
    x = nn::concat0(x, hidden[hidden.size() - 1 - k]);
    x = res_forward(lv.res1, x, temb);
    x = res_forward(lv.res2, x, temb);
    x = lv.resample(nn::upsample_nearest2(x));
  }
  x = nn::silu(final_norm_(final_conv_(x)));
  x = out_conv_(x);
  if (width != frames) x = nn::crop_2d(x, height, frames);
  if (cfg_.sigma_data <= 0.0) return x;

  const double lambda = std::max(cfg_.schedule.lambda(t), cfg_.schedule.lambda(kTimeMin));
  const double decay = std::exp(-cfg_.schedule.integral(t));
  const double v = lambda + cfg_.sigma_data * cfg_.sigma_data * decay;
  const double c = cfg_.sigma_data * std::sqrt(decay / v);
  Tensor skip({1, height, frames});
  for (std::size_t i = 0; i < skip.numel(); ++i) skip.data[i] = -(x_t.data[i] - xbar.data[i]) / v;
  return nn::add(nn::scale(x, -c / std::sqrt(lambda)), Var(std::move(skip)));
}

namespace {

Tensor to_channel_major(const Eigen::MatrixXd& frames_by_mels) {
  return Tensor::from_matrix(frames_by_mels.transpose());
}

Eigen::MatrixXd from_channel_major(const Tensor& t, int n_mels, int frames) {
  return nn::ConstMatMap(t.data.data(), n_mels, frames).transpose();
}

}  // namespace

Eigen::MatrixXd score_forward(const ScoreNetwork& net, const Eigen::MatrixXd& x_t,
                              const Eigen::MatrixXd& xbar, double t, const Eigen::VectorXd& embedding) {
  DUTAVC_CHECK(x_t.cols() == net.config().n_mels, "score_forward: mel-bin mismatch");
  nn::NoGradGuard no_grad;
  const Var out = net.forward(to_channel_major(x_t), to_channel_major(xbar), t, net.condition(embedding, t));
  return from_channel_major(out.value(), net.config().n_mels, static_cast<int>(x_t.rows()));
}

// --- checkpoints -------------------------------------------------------------

void save_decoder(const std::string& path, const DecoderModel& model) {
  const DecoderConfig& c = model.net.config();
  nlohmann::json meta = {
      {"n_mels", c.n_mels},
      {"base_channels", c.base_channels},
      {"channel_mults", c.channel_mults},
      {"groups", c.groups},
      {"embed_dim", c.embed_dim},
      {"cond_channels", c.cond_channels},
      {"cond_hidden", c.cond_hidden},
      {"time_pe_dim", c.time_pe_dim},
      {"crop_frames", c.crop_frames},
      {"beta0", c.schedule.beta0},
      {"beta1", c.schedule.beta1},
      {"sigma_data", c.sigma_data},
      {"input_channels", 2 + c.cond_channels},
      {"speaker_tag", model.speaker_tag},
  };
  if (model.target_embedding)
    meta["target_embedding"] = std::vector<double>(model.target_embedding->begin(), model.target_embedding->end());
  nn::write_checkpoint(path, "decoder", meta, model.params());
}

DecoderModel load_decoder(const std::string& path) {
  return nn::read_checkpoint(path, "decoder", [&](const nn::CheckpointHeader& h) {
    try {
      DecoderConfig c;
      c.n_mels = h.meta.at("n_mels");
      c.base_channels = h.meta.at("base_channels");
      c.channel_mults = h.meta.at("channel_mults").get<std::vector<int>>();
      c.groups = h.meta.at("groups");
      c.embed_dim = h.meta.at("embed_dim");
      c.cond_channels = h.meta.at("cond_channels");
      c.cond_hidden = h.meta.at("cond_hidden");
      c.time_pe_dim = h.meta.at("time_pe_dim");
      c.crop_frames = h.meta.at("crop_frames");
      c.schedule.beta0 = h.meta.at("beta0");
      c.schedule.beta1 = h.meta.at("beta1");
      c.sigma_data = h.meta.value("sigma_data", 0.0);
      DecoderModel m{ScoreNetwork(c, 0), h.meta.at("speaker_tag"), std::nullopt};
      if (h.meta.contains("target_embedding")) {
        const auto v = h.meta.at("target_embedding").get<std::vector<double>>();
        m.target_embedding = Eigen::VectorXd::Map(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": incomplete decoder metadata: " + e.what());
    }
  });
}

// --- training ----------------------------------------------------------------

Var score_matching_loss(const Var& score, const Tensor& noise, double lambda) {
  DUTAVC_CHECK(score.numel() == noise.numel(), "score_matching_loss: shape mismatch");
  Tensor target(score.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) target.data[i] = -noise.data[i];
  return nn::mse_loss(nn::scale(score, std::sqrt(lambda)), target);
}

namespace {

Eigen::MatrixXd pad_rows(const Eigen::MatrixXd& x, int rows, double value) {
  if (x.rows() >= rows) return x;
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(rows, x.cols(), value);
  out.topRows(x.rows()) = x;
  return out;
}

int random_offset(int length, int crop, Rng& rng) {
  if (length <= crop) return 0;
  return std::uniform_int_distribution<int>(0, length - crop)(rng);
}

}  // namespace

namespace {

Var unchecked_decoder_loss(const ScoreNetwork& net, const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xbar,
                           const Eigen::VectorXd& embedding, Rng& rng, DecoderLossDraw& draw) {
  const DecoderConfig& c = net.config();
  DUTAVC_CHECK(x0.rows() >= 1 && x0.cols() == c.n_mels && xbar.rows() == x0.rows() && xbar.cols() == x0.cols(),
               "decoder_loss: x0 and xbar must both be F x n_mels");
  const int crop = c.crop_frames;
  const int start = random_offset(static_cast<int>(x0.rows()), crop, rng);
  const Eigen::MatrixXd a = pad_rows(x0, crop, kLogFloor).middleRows(start, crop);
  const Eigen::MatrixXd b = pad_rows(xbar, crop, kLogFloor).middleRows(start, crop);

  const double t = uniform(rng, kTimeMin, 1.0);
  const Eigen::MatrixXd noise = standard_normal(crop, c.n_mels, rng);
  const Eigen::MatrixXd xt = forward_sample(a, b, t, noise, c.schedule);
  draw = {t, start};
  const Var score = net.forward(to_channel_major(xt), to_channel_major(b), t, net.condition(embedding, t));
  return score_matching_loss(score, to_channel_major(noise), c.schedule.lambda(t));
}

}  // namespace

Var decoder_loss(const ScoreNetwork& net, const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xbar,
                 const Eigen::VectorXd& embedding, Rng& rng, DecoderLossDraw* draw) {
  DecoderLossDraw d;
  Var loss = unchecked_decoder_loss(net, x0, xbar, embedding, rng, d);
  if (draw) *draw = d;
  if (!std::isfinite(loss.item())) {
    std::ostringstream msg;
    msg << "decoder_loss: non-finite loss at t=" << d.t << " (crop start " << d.crop_start
        << ", finite inputs: x0=" << x0.allFinite() << " xbar=" << xbar.allFinite() << ")";
    throw Error(msg.str());
  }
  return loss;
}

void train_decoder(DecoderModel& model, const std::vector<DecoderExample>& corpus,
                   const ConditionFn& condition, const TrainConfig& cfg, TrainLog* log) {
  const DecoderConfig& c = model.net.config();
  for (const auto& ex : corpus) {
    DUTAVC_CHECK(ex.mel.num_mels() == c.n_mels, "train_decoder: mel-bin mismatch");
    DUTAVC_CHECK(ex.prior.frames.rows() == ex.mel.frames.rows() && ex.prior.frames.cols() == ex.mel.frames.cols(),
                 "train_decoder: prior and mel shapes differ");
  }
  auto item_loss = [&](std::size_t i, Rng& rng) {
    const DecoderExample& ex = corpus[i];
    const int f = ex.mel.num_frames();
    const int len = std::min(f, c.crop_frames);
    MelSpectrogram crop = ex.mel;
    crop.frames = ex.mel.frames.middleRows(random_offset(f, len, rng), len);
    const Eigen::VectorXd e = condition(i, crop);
    DecoderLossDraw draw;
    return unchecked_decoder_loss(model.net, ex.mel.frames, ex.prior.frames, e, rng, draw);
  };
  run_training(model.params(), corpus.size(), cfg, item_loss,
               [&](const std::string& path) { save_decoder(path, model); }, log);
}

void finetune_decoder(DecoderModel& model, const std::vector<DecoderExample>& corpus,
                      const ConditionFn& condition, const TrainConfig& cfg,
                      const std::string& speaker_tag, const Eigen::VectorXd& target_embedding,
                      TrainLog* log) {
  DUTAVC_CHECK(!speaker_tag.empty(), "finetune_decoder: speaker tag required");
  DUTAVC_CHECK(target_embedding.size() == model.net.config().embed_dim,
               "finetune_decoder: target embedding size mismatch");
  model.speaker_tag = speaker_tag;
  model.target_embedding = target_embedding;
  train_decoder(model, corpus, condition, cfg, log);
}

// --- sampling ----------------------------------------------------------------

Eigen::MatrixXd reverse_sde_sample(const ScoreFn& score, const Eigen::MatrixXd& xbar,
                                   const SamplerOptions& opts, const NoiseSchedule& s) {
  s.validate();
  DUTAVC_CHECK(opts.n_steps >= 1, "reverse_sde_sample: n_steps must be >= 1");
  DUTAVC_CHECK(opts.pad_multiple >= 1, "reverse_sde_sample: pad multiple must be >= 1");
  DUTAVC_CHECK(xbar.rows() >= 1 && xbar.cols() >= 1, "reverse_sde_sample: empty prior");
  const int f = static_cast<int>(xbar.rows());
  const int padded = (f + opts.pad_multiple - 1) / opts.pad_multiple * opts.pad_multiple;
  const Eigen::MatrixXd mu = pad_rows(xbar, padded, opts.pad_value);

  Rng rng(opts.seed);
  Eigen::MatrixXd x = mu + standard_normal(padded, mu.cols(), rng);
  const double h = 1.0 / opts.n_steps;
  for (int i = 0; i < opts.n_steps; ++i) {
    const double t = 1.0 - (i + 0.5) * h;
    const double beta = s.beta(t);
    const Eigen::MatrixXd sc = score(x, mu, t);
    DUTAVC_CHECK(sc.rows() == x.rows() && sc.cols() == x.cols(), "reverse_sde_sample: score has wrong shape");
    x -= h * beta * (0.5 * (mu - x) - sc);
    if (opts.inject_noise) x += std::sqrt(beta * h) * standard_normal(padded, mu.cols(), rng);
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "reverse_sde_sample: non-finite state at step " << i + 1 << "/" << opts.n_steps << " (t=" << t
          << ", score finite=" << sc.allFinite() << ")";
      throw Error(msg.str());
    }
  }
  return x.topRows(f);
}

MelSpectrogram decode(const ScoreNetwork& net, const MelSpectrogram& prior, const Eigen::VectorXd& embedding,
                      const SamplerOptions& opts) {
  DUTAVC_CHECK(prior.num_mels() == net.config().n_mels, "decode: mel-bin mismatch");
  SamplerOptions o = opts;
  o.pad_multiple = std::lcm(4, std::max(1, opts.pad_multiple));
  const ScoreFn fn = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& mu, double t) {
    return score_forward(net, x, mu, t, embedding);
  };
  MelSpectrogram out = prior;
  out.frames = reverse_sde_sample(fn, prior.frames, o, net.config().schedule);
  return out;
}

}  // namespace dutavc
