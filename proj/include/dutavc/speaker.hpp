#pragma once

// Speaker embeddings: a built-in statistics-based reference, an external
// per-utterance file provider, cosine similarity and the similarity protocol.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dutavc/audio.hpp"

namespace dutavc {

struct SpeakerEmbedding {
  Eigen::VectorXd v;
  std::string speaker_id;
};

class SpeakerEmbeddingProvider {
 public:
  virtual ~SpeakerEmbeddingProvider() = default;
  virtual int dim() const = 0;
  /// `utterance_id` identifies the recording for providers backed by precomputed files.
  virtual SpeakerEmbedding embed(const Waveform& w, const std::string& utterance_id = {}) const = 0;
};

/// Per-mel-bin mean and standard deviation over voiced frames, projected by a
/// fixed Gaussian matrix and L2-normalised.
class BuiltinEmbeddingProvider final : public SpeakerEmbeddingProvider {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eedULL;
  static constexpr double kMinSeconds = 0.5;
  /// Frames whose mean log-mel lies more than this below the loudest frame are unvoiced (40 dB).
  static constexpr double kVoicedRange = 4.605170185988091;

  explicit BuiltinEmbeddingProvider(int dim = 256, std::uint64_t seed = kDefaultSeed, int n_mels = 80);

  int dim() const override { return static_cast<int>(projection_.rows()); }
  SpeakerEmbedding embed(const Waveform& w, const std::string& utterance_id = {}) const override;
  /// Same statistics computed on an existing log-mel matrix.
  Eigen::VectorXd embed_mel(const MelSpectrogram& m) const;

 private:
  Eigen::MatrixXd projection_;  // dim x 2 n_mels
};

/// Reads "utterance_id<TAB>payload" lines. The payload is either whitespace-
/// separated decimal floats or one hex string of little-endian float32 values
/// (8 hex digits per value). A single token made only of hex digits whose
/// length is a multiple of 8 is read as hex. '#' lines and blank lines are ignored.
class FileEmbeddingProvider final : public SpeakerEmbeddingProvider {
 public:
  explicit FileEmbeddingProvider(const std::string& path);

  int dim() const override { return dim_; }
  SpeakerEmbedding embed(const Waveform& w, const std::string& utterance_id = {}) const override;
  bool has(const std::string& utterance_id) const { return table_.count(utterance_id) > 0; }
  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, Eigen::VectorXd> table_;
  int dim_ = 0;
};

/// Writes the file format read by FileEmbeddingProvider (hex payloads).
void write_embedding_file(const std::string& path,
                          const std::vector<std::pair<std::string, Eigen::VectorXd>>& records);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Normalised average of unit-normalised embeddings.
Eigen::VectorXd mean_embedding(const std::vector<Eigen::VectorXd>& embeddings);

struct SimilarityReport {
  double s_t = 0.0;  // source vs target, percent
  double s_g = 0.0;  // source vs converted, percent
  double t_g = 0.0;  // target vs converted, percent
  int num_pairs = 0;
};

using EmbeddingSets = std::map<std::string, std::vector<Eigen::VectorXd>>;
using ConvertedSets = std::map<std::pair<std::string, std::string>, std::vector<Eigen::VectorXd>>;

/// For every converted (source speaker, target speaker) pair, mean cosine over
/// all utterance pairs of each relation; the report averages over speaker pairs.
SimilarityReport similarity_protocol(const EmbeddingSets& sources, const EmbeddingSets& targets,
                                     const ConvertedSets& converted);

}  // namespace dutavc
