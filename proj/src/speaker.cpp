#include "dutavc/speaker.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dutavc/error.hpp"
#include "dutavc/random.hpp"

namespace dutavc {

BuiltinEmbeddingProvider::BuiltinEmbeddingProvider(int dim, std::uint64_t seed, int n_mels) {
  DUTAVC_CHECK(dim >= 1 && n_mels >= 1, "embedding: dimensions must be positive");
  Rng rng(seed);
  projection_ = standard_normal(dim, 2 * n_mels, rng) / std::sqrt(2.0 * n_mels);
}

Eigen::VectorXd BuiltinEmbeddingProvider::embed_mel(const MelSpectrogram& m) const {
  const int n_mels = static_cast<int>(projection_.cols() / 2);
  if (m.num_mels() != n_mels)
    throw InvalidArgument("embedding: mel has " + std::to_string(m.num_mels()) + " bins, expected " +
                          std::to_string(n_mels));
  DUTAVC_CHECK(m.num_frames() >= 1, "embedding: empty mel");
  const Eigen::VectorXd energy = m.frames.rowwise().mean();
  const double loudest = energy.maxCoeff();
  std::vector<int> voiced;
  for (int i = 0; i < m.num_frames(); ++i)
    if (energy(i) >= loudest - kVoicedRange && energy(i) > kLogFloor + 1e-9) voiced.push_back(i);
  if (voiced.empty())
    for (int i = 0; i < m.num_frames(); ++i) voiced.push_back(i);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n_mels), sq = Eigen::VectorXd::Zero(n_mels);
  for (int i : voiced) mean += m.frames.row(i).transpose();
  mean /= static_cast<double>(voiced.size());
  for (int i : voiced) sq += (m.frames.row(i).transpose() - mean).array().square().matrix();
  Eigen::VectorXd stats(2 * n_mels);
  stats << mean, (sq / static_cast<double>(voiced.size())).cwiseSqrt();

  Eigen::VectorXd v = projection_ * stats;
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error("embedding: degenerate statistics");
  return v / norm;
}

SpeakerEmbedding BuiltinEmbeddingProvider::embed(const Waveform& w, const std::string&) const {
  DUTAVC_CHECK(w.sample_rate_hz > 0, "embedding: invalid sample rate");
  const double seconds = static_cast<double>(w.size()) / w.sample_rate_hz;
  if (seconds < kMinSeconds)
    throw InvalidArgument("embedding: input is " + std::to_string(seconds) + " s, need at least 0.5 s");
  const Waveform x = w.sample_rate_hz == kSampleRate ? w : resample(w, kSampleRate);
  return {embed_mel(mel_spectrogram(x)), {}};
}

namespace {

Eigen::VectorXd parse_hex_floats(const std::string& hex, const std::string& where) {
  if (hex.size() % 8 != 0) throw FormatError(where + ": hex payload length is not a multiple of 8");
  Eigen::VectorXd v(static_cast<Eigen::Index>(hex.size() / 8));
  for (std::size_t k = 0; k < hex.size() / 8; ++k) {
    std::uint8_t bytes[4];
    for (int b = 0; b < 4; ++b) {
      const std::string byte = hex.substr(8 * k + 2 * b, 2);
      char* end = nullptr;
      const unsigned long value = std::strtoul(byte.c_str(), &end, 16);
      if (end != byte.c_str() + 2) throw FormatError(where + ": invalid hex digit in '" + byte + "'");
      bytes[b] = static_cast<std::uint8_t>(value);
    }
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    v(static_cast<Eigen::Index>(k)) = f;
  }
  return v;
}

bool is_hex_token(const std::string& s) {
  return s.size() >= 8 && s.size() % 8 == 0 && s.find_first_not_of("0123456789abcdefABCDEF") == std::string::npos;
}

}  // namespace

FileEmbeddingProvider::FileEmbeddingProvider(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw FormatError(where + ": expected 'utterance_id<TAB>payload'");
    const std::string id = line.substr(0, tab);
    std::istringstream payload(line.substr(tab + 1));
    std::vector<std::string> tokens;
    for (std::string tok; payload >> tok;) tokens.push_back(tok);
    if (tokens.empty()) throw FormatError(where + ": empty payload");
    Eigen::VectorXd v;
    if (tokens.size() == 1 && is_hex_token(tokens[0])) {
      v = parse_hex_floats(tokens[0], where);
    } else {
      v.resize(static_cast<Eigen::Index>(tokens.size()));
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        try {
          std::size_t used = 0;
          v(static_cast<Eigen::Index>(i)) = std::stod(tokens[i], &used);
          if (used != tokens[i].size()) throw std::invalid_argument(tokens[i]);
        } catch (const std::exception&) {
          throw FormatError(where + ": invalid number '" + tokens[i] + "'");
        }
      }
    }
    if (!v.allFinite()) throw FormatError(where + ": non-finite embedding");
    if (dim_ == 0) dim_ = static_cast<int>(v.size());
    if (v.size() != dim_)
      throw FormatError(where + ": embedding has " + std::to_string(v.size()) + " values, expected " +
                        std::to_string(dim_));
    if (!table_.emplace(id, std::move(v)).second) throw FormatError(where + ": duplicate utterance id '" + id + "'");
  }
  if (table_.empty()) throw FormatError(path + ": no embeddings");
}

SpeakerEmbedding FileEmbeddingProvider::embed(const Waveform&, const std::string& utterance_id) const {
  const auto it = table_.find(utterance_id);
  if (it == table_.end()) throw InvalidArgument("no external embedding for utterance '" + utterance_id + "'");
  return {it->second, {}};
}

void write_embedding_file(const std::string& path,
                          const std::vector<std::pair<std::string, Eigen::VectorXd>>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "# utterance_id<TAB>little-endian float32 values as hex\n";
  for (const auto& [id, v] : records) {
    DUTAVC_CHECK(!id.empty() && id.find_first_of("\t\n") == std::string::npos, "embedding file: invalid utterance id");
    out << id << '\t' << std::hex << std::setfill('0');
    for (double x : v) {
      const float f = static_cast<float>(x);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      for (int b = 0; b < 4; ++b) out << std::setw(2) << ((bits >> (8 * b)) & 0xffu);
    }
    out << std::dec << '\n';
  }
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw InvalidArgument("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw InvalidArgument("cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Eigen::VectorXd mean_embedding(const std::vector<Eigen::VectorXd>& embeddings) {
  DUTAVC_CHECK(!embeddings.empty(), "mean_embedding: no embeddings");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(embeddings.front().size());
  for (const auto& e : embeddings) {
    DUTAVC_CHECK(e.size() == sum.size(), "mean_embedding: dimension mismatch");
    const double n = e.norm();
    DUTAVC_CHECK(n > 0.0, "mean_embedding: zero vector");
    sum += e / n;
  }
  const double n = sum.norm();
  DUTAVC_CHECK(n > 0.0, "mean_embedding: embeddings cancel out");
  return sum / n;
}

namespace {

double mean_cross_cosine(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
  double sum = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) sum += cosine_similarity(x, y);
  return sum / static_cast<double>(a.size() * b.size());
}

const std::vector<Eigen::VectorXd>& lookup(const EmbeddingSets& sets, const std::string& speaker,
                                           const char* role) {
  const auto it = sets.find(speaker);
  if (it == sets.end() || it->second.empty())
    throw InvalidArgument(std::string("similarity_protocol: no ") + role + " embeddings for '" + speaker + "'");
  return it->second;
}

}  // namespace

SimilarityReport similarity_protocol(const EmbeddingSets& sources, const EmbeddingSets& targets,
                                     const ConvertedSets& converted) {
  if (converted.empty()) throw InvalidArgument("similarity_protocol: no converted utterances");
  SimilarityReport r;
  for (const auto& [pair, conv] : converted) {
    if (conv.empty())
      throw InvalidArgument("similarity_protocol: empty converted set for " + pair.first + " -> " + pair.second);
    const auto& s = lookup(sources, pair.first, "source");
    const auto& t = lookup(targets, pair.second, "target");
    r.s_t += mean_cross_cosine(s, t);
    r.s_g += mean_cross_cosine(s, conv);
    r.t_g += mean_cross_cosine(t, conv);
    ++r.num_pairs;
  }
  r.s_t *= 100.0 / r.num_pairs;
  r.s_g *= 100.0 / r.num_pairs;
  r.t_g *= 100.0 / r.num_pairs;
  return r;
}

}  // namespace dutavc
