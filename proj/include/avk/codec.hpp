#pragma once

#include <filesystem>

#include "avk/types.hpp"

namespace avk {

struct CodecConfig {
  int input_dim = 24;                        // J
  int latent_dim = 3;
  std::vector<int> hidden_layers = {64, 16}; // encoder J->64->16->3, decoder mirrored
  double gaussian_sigma = 0.01;              // nonzero-count relaxation width
  double lambda_l1 = 1.0;
  double lambda_nz = 0.1;
  double lambda_kl = 0.1;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 8;
};

struct AffineLayer {
  MatX W;  // out x in
  VecX b;  // out
};

// Encoder: tanh hidden layers, linear latent output.
// Decoder: tanh hidden layers, softmax over J outputs (rows land on the simplex).
struct CodecModel {
  CodecConfig config;
  std::vector<AffineLayer> encoder;
  std::vector<AffineLayer> decoder;

  MatX encode_rows(const MatX& weight_rows) const;   // N x J -> N x 3
  MatX decode_rows(const MatX& latent_rows) const;   // N x 3 -> N x J

  Mat3X encode(const SkinWeights& weights) const;    // per-vertex latents, 3 x V
  SkinWeights decode(const Mat3X& latents) const;
};

enum class SampleProvenance { TemplateVertex, FaceInterpolated };

struct WeightSampleSet {
  MatX samples;  // N x J, rows on the simplex
  SampleProvenance provenance = SampleProvenance::FaceInterpolated;
};

// Barycentric mixtures of face-corner weight rows; faces drawn with
// probability proportional to area, barycentric coordinates uniform.
WeightSampleSet build_sample_set(const SkinnedMesh& tmpl, int target_count, uint64_t seed);

struct CodecLoss {
  double total = 0, l1 = 0, nz = 0, kl = 0;
};

// Differentiable relaxed nonzero count: J - sum_i exp(-w_i^2 / (2 sigma^2)).
double relaxed_nonzero_count(const Eigen::Ref<const Eigen::RowVectorXd>& w, double sigma);

CodecLoss codec_loss(const CodecModel& model, const MatX& batch, const CodecConfig& config);

// Loss plus analytic gradients for every layer (same shapes as the model).
struct CodecGradients {
  std::vector<AffineLayer> encoder;
  std::vector<AffineLayer> decoder;
};
CodecLoss codec_loss_grad(const CodecModel& model, const MatX& batch,
                          const CodecConfig& config, CodecGradients& grads);

struct TrainResult {
  CodecModel model;
  std::vector<double> history;  // per-step total loss
  bool diverged = false;        // model holds the last finite checkpoint
};

CodecModel init_codec(const CodecConfig& config, uint64_t seed);
TrainResult train_codec(const WeightSampleSet& samples, const CodecConfig& config,
                        uint64_t seed);

// Checkpoint: magic, dims, row-major little-endian float32 layer matrices.
void save_codec(const CodecModel& model, const std::filesystem::path& path);
CodecModel load_codec(const std::filesystem::path& path);

// Affine normalization of latents into [0,1] for 16-bit image quantization.
struct LatentNormalization {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  Vec3 normalize(const Vec3& latent) const;
  Vec3 denormalize(const Vec3& unit) const;
  static LatentNormalization fit(const Mat3X& latents, double margin = 0.05);
};

}  // namespace avk
