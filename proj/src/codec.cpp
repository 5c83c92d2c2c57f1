#include "avk/codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace avk {

namespace {

constexpr double kProbFloor = 1e-8;

MatX affine(const MatX& A, const AffineLayer& l) {
  return (A * l.W.transpose()).rowwise() + l.b.transpose();
}

MatX softmax_rows(const MatX& Z) {
  MatX Q = Z;
  for (int r = 0; r < Q.rows(); ++r) {
    Eigen::RowVectorXd row = Q.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    Q.row(r) = row / row.sum();
  }
  return Q;
}

struct ForwardTrace {
  std::vector<MatX> enc_act;  // activations per encoder layer input (first = batch)
  std::vector<MatX> dec_act;
  MatX latent;
  MatX logits;
  MatX probs;
};

ForwardTrace forward(const CodecModel& m, const MatX& X) {
  ForwardTrace t;
  MatX a = X;
  t.enc_act.push_back(a);
  for (size_t i = 0; i < m.encoder.size(); ++i) {
    MatX z = affine(a, m.encoder[i]);
    a = (i + 1 == m.encoder.size()) ? z : z.array().tanh().matrix();
    t.enc_act.push_back(a);
  }
  t.latent = a;
  t.dec_act.push_back(a);
  for (size_t i = 0; i < m.decoder.size(); ++i) {
    MatX z = affine(a, m.decoder[i]);
    if (i + 1 == m.decoder.size()) {
      t.logits = z;
      t.probs = softmax_rows(z);
      a = t.probs;
    } else {
      a = z.array().tanh().matrix();
    }
    t.dec_act.push_back(a);
  }
  return t;
}

}  // namespace

MatX CodecModel::encode_rows(const MatX& weight_rows) const {
  MatX a = weight_rows;
  for (size_t i = 0; i < encoder.size(); ++i) {
    MatX z = affine(a, encoder[i]);
    a = (i + 1 == encoder.size()) ? z : z.array().tanh().matrix();
  }
  return a;
}

MatX CodecModel::decode_rows(const MatX& latent_rows) const {
  MatX a = latent_rows;
  for (size_t i = 0; i < decoder.size(); ++i) {
    MatX z = affine(a, decoder[i]);
    a = (i + 1 == decoder.size()) ? softmax_rows(z) : z.array().tanh().matrix();
  }
  return a;
}

Mat3X CodecModel::encode(const SkinWeights& weights) const {
  MatX lat = encode_rows(weights.w);
  return lat.transpose();
}

SkinWeights CodecModel::decode(const Mat3X& latents) const {
  SkinWeights w;
  w.w = decode_rows(latents.transpose());
  return w;
}

WeightSampleSet build_sample_set(const SkinnedMesh& tmpl, int target_count, uint64_t seed) {
  if (!tmpl.has_weights()) throw InputError("build_sample_set: template has no weights");
  const int F = tmpl.face_count();
  std::vector<double> cum(F);
  double total = 0;
  for (int f = 0; f < F; ++f) {
    const Vec3 a = tmpl.vertices.col(tmpl.faces(0, f));
    const Vec3 b = tmpl.vertices.col(tmpl.faces(1, f));
    const Vec3 c = tmpl.vertices.col(tmpl.faces(2, f));
    total += 0.5 * (b - a).cross(c - a).norm();
    cum[f] = total;
  }
  if (total <= 0) throw InputError("build_sample_set: zero-area template");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0, 1);
  WeightSampleSet set;
  set.samples.resize(target_count, tmpl.weights.joint_count());
  for (int s = 0; s < target_count; ++s) {
    const double pick = uni(rng) * total;
    const int f = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
    // uniform barycentric via the sqrt trick
    const double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
    const double u = 1 - r1, v = r1 * (1 - r2), w = r1 * r2;
    set.samples.row(s) = u * tmpl.weights.w.row(tmpl.faces(0, f)) +
                         v * tmpl.weights.w.row(tmpl.faces(1, f)) +
                         w * tmpl.weights.w.row(tmpl.faces(2, f));
  }
  return set;
}

double relaxed_nonzero_count(const Eigen::Ref<const Eigen::RowVectorXd>& w, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  return w.size() - (-(w.array().square()) * inv).exp().sum();
}

static CodecLoss loss_impl(const CodecModel& model, const MatX& batch,
                           const CodecConfig& cfg, ForwardTrace* trace_out,
                           MatX* grad_probs) {
  if (batch.rows() == 0) throw InputError("codec loss: empty batch");
  ForwardTrace t = forward(model, batch);
  const MatX& P = batch;
  const MatX& Q = t.probs;
  const int N = static_cast<int>(P.rows());
  const int J = static_cast<int>(P.cols());
  CodecLoss loss;
  loss.l1 = (Q - P).array().abs().mean();
  if (grad_probs) *grad_probs = MatX::Zero(N, J);
  if (grad_probs)
    *grad_probs += cfg.lambda_l1 * (Q - P).array().sign().matrix() / (N * J);
  const double inv2s2 = 1.0 / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma);
  for (int r = 0; r < N; ++r) {
    const double nzp = relaxed_nonzero_count(P.row(r), cfg.gaussian_sigma);
    const double nzq = relaxed_nonzero_count(Q.row(r), cfg.gaussian_sigma);
    loss.nz += std::abs(nzp - nzq) / N;
    if (grad_probs) {
      const double s = (nzq > nzp) ? 1.0 : (nzq < nzp ? -1.0 : 0.0);
      // d nz(q)/dq_i = (q_i / sigma^2) exp(-q_i^2 / (2 sigma^2))
      grad_probs->row(r) += (cfg.lambda_nz * s / N) *
                            (Q.row(r).array() * 2.0 * inv2s2 *
                             (-(Q.row(r).array().square()) * inv2s2).exp()).matrix();
    }
    for (int j = 0; j < J; ++j) {
      const double p = std::max(P(r, j), kProbFloor);
      const double q = std::max(Q(r, j), kProbFloor);
      loss.kl += p * std::log(p / q) / N;
      if (grad_probs && Q(r, j) > kProbFloor)
        (*grad_probs)(r, j) += cfg.lambda_kl * (-p / q) / N;
    }
  }
  loss.total = cfg.lambda_l1 * loss.l1 + cfg.lambda_nz * loss.nz + cfg.lambda_kl * loss.kl;
  if (trace_out) *trace_out = std::move(t);
  return loss;
}

CodecLoss codec_loss(const CodecModel& model, const MatX& batch, const CodecConfig& cfg) {
  return loss_impl(model, batch, cfg, nullptr, nullptr);
}

CodecLoss codec_loss_grad(const CodecModel& model, const MatX& batch,
                          const CodecConfig& cfg, CodecGradients& grads) {
  ForwardTrace t;
  MatX gq;
  CodecLoss loss = loss_impl(model, batch, cfg, &t, &gq);
  auto zero_like = [](const std::vector<AffineLayer>& layers) {
    std::vector<AffineLayer> g(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
      g[i].W = MatX::Zero(layers[i].W.rows(), layers[i].W.cols());
      g[i].b = VecX::Zero(layers[i].b.size());
    }
    return g;
  };
  grads.encoder = zero_like(model.encoder);
  grads.decoder = zero_like(model.decoder);

  // softmax backward: dz_i = q_i (g_i - sum_j g_j q_j)
  MatX dz(gq.rows(), gq.cols());
  for (int r = 0; r < gq.rows(); ++r) {
    const double dot = gq.row(r).dot(t.probs.row(r));
    dz.row(r) = (t.probs.row(r).array() * (gq.row(r).array() - dot)).matrix();
  }
  // decoder backward
  MatX delta = dz;
  for (int i = static_cast<int>(model.decoder.size()) - 1; i >= 0; --i) {
    grads.decoder[i].W = delta.transpose() * t.dec_act[i];
    grads.decoder[i].b = delta.colwise().sum().transpose();
    if (i > 0) {
      delta = delta * model.decoder[i].W;
      delta = (delta.array() * (1.0 - t.dec_act[i].array().square())).matrix();
    } else {
      delta = delta * model.decoder[i].W;  // into the latent (linear)
    }
  }
  // encoder backward (last encoder layer is linear)
  for (int i = static_cast<int>(model.encoder.size()) - 1; i >= 0; --i) {
    if (static_cast<size_t>(i) + 1 < model.encoder.size())
      delta = (delta.array() * (1.0 - t.enc_act[i + 1].array().square())).matrix();
    grads.encoder[i].W = delta.transpose() * t.enc_act[i];
    grads.encoder[i].b = delta.colwise().sum().transpose();
    if (i > 0) delta = delta * model.encoder[i].W;
  }
  return loss;
}

CodecModel init_codec(const CodecConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make = [&](int in, int out) {
    const double scale = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> uni(-scale, scale);
    AffineLayer l;
    l.W.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.W(r, c) = uni(rng);
    l.b = VecX::Zero(out);
    return l;
  };
  CodecModel m;
  m.config = cfg;
  int prev = cfg.input_dim;
  for (int h : cfg.hidden_layers) {
    m.encoder.push_back(make(prev, h));
    prev = h;
  }
  m.encoder.push_back(make(prev, cfg.latent_dim));
  prev = cfg.latent_dim;
  for (auto it = cfg.hidden_layers.rbegin(); it != cfg.hidden_layers.rend(); ++it) {
    m.decoder.push_back(make(prev, *it));
    prev = *it;
  }
  m.decoder.push_back(make(prev, cfg.input_dim));
  return m;
}

TrainResult train_codec(const WeightSampleSet& samples, const CodecConfig& cfg,
                        uint64_t seed) {
  const int N = static_cast<int>(samples.samples.rows());
  if (N < cfg.batch_size) throw InputError("train_codec: fewer samples than batch size");
  TrainResult result;
  result.model = init_codec(cfg, seed);
  CodecModel& m = result.model;
  // Adam state mirrors the parameters
  CodecGradients m1, m2;
  auto zero_like = [](const std::vector<AffineLayer>& layers) {
    std::vector<AffineLayer> g(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
      g[i].W = MatX::Zero(layers[i].W.rows(), layers[i].W.cols());
      g[i].b = VecX::Zero(layers[i].b.size());
    }
    return g;
  };
  m1.encoder = zero_like(m.encoder);
  m1.decoder = zero_like(m.decoder);
  m2.encoder = zero_like(m.encoder);
  m2.decoder = zero_like(m.decoder);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  CodecModel last_finite = m;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start + cfg.batch_size <= N; start += cfg.batch_size) {
      MatX batch(cfg.batch_size, samples.samples.cols());
      for (int i = 0; i < cfg.batch_size; ++i)
        batch.row(i) = samples.samples.row(order[start + i]);
      CodecGradients g;
      CodecLoss loss = codec_loss_grad(m, batch, cfg, g);
      if (!std::isfinite(loss.total)) {
        result.model = last_finite;
        result.diverged = true;
        return result;
      }
      last_finite = m;
      ++step;
      const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam = [&](std::vector<AffineLayer>& params, std::vector<AffineLayer>& grad,
                      std::vector<AffineLayer>& mom1, std::vector<AffineLayer>& mom2) {
        for (size_t i = 0; i < params.size(); ++i) {
          mom1[i].W = beta1 * mom1[i].W + (1 - beta1) * grad[i].W;
          mom2[i].W = beta2 * mom2[i].W.eval() +
                      (1 - beta2) * grad[i].W.array().square().matrix();
          params[i].W -= (cfg.learning_rate * (mom1[i].W / corr1).array() /
                          ((mom2[i].W / corr2).array().sqrt() + eps)).matrix();
          mom1[i].b = beta1 * mom1[i].b + (1 - beta1) * grad[i].b;
          mom2[i].b = beta2 * mom2[i].b.eval() +
                      (1 - beta2) * grad[i].b.array().square().matrix();
          params[i].b -= (cfg.learning_rate * (mom1[i].b / corr1).array() /
                          ((mom2[i].b / corr2).array().sqrt() + eps)).matrix();
        }
      };
      adam(m.encoder, g.encoder, m1.encoder, m2.encoder);
      adam(m.decoder, g.decoder, m1.decoder, m2.decoder);
      result.history.push_back(loss.total);
    }
  }
  return result;
}

// ---------------------------------------------------------------- checkpoint

static const char kMagic[8] = {'A', 'V', 'K', 'C', 'O', 'D', 'C', '1'};

static void write_layers(std::ofstream& out, const std::vector<AffineLayer>& layers) {
  const uint32_t n = static_cast<uint32_t>(layers.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& l : layers) {
    const uint32_t rows = static_cast<uint32_t>(l.W.rows());
    const uint32_t cols = static_cast<uint32_t>(l.W.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    for (int r = 0; r < l.W.rows(); ++r)
      for (int c = 0; c < l.W.cols(); ++c) {
        const float v = static_cast<float>(l.W(r, c));
        out.write(reinterpret_cast<const char*>(&v), 4);
      }
    for (int r = 0; r < l.b.size(); ++r) {
      const float v = static_cast<float>(l.b(r));
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

static std::vector<AffineLayer> read_layers(std::ifstream& in) {
  uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  std::vector<AffineLayer> layers(n);
  for (auto& l : layers) {
    uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    l.W.resize(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) {
        float v;
        in.read(reinterpret_cast<char*>(&v), 4);
        l.W(r, c) = v;
      }
    l.b.resize(rows);
    for (uint32_t r = 0; r < rows; ++r) {
      float v;
      in.read(reinterpret_cast<char*>(&v), 4);
      l.b(r) = v;
    }
  }
  return layers;
}

void save_codec(const CodecModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kMagic, 8);
  const uint32_t dims[2] = {static_cast<uint32_t>(model.config.input_dim),
                            static_cast<uint32_t>(model.config.latent_dim)};
  out.write(reinterpret_cast<const char*>(dims), 8);
  const double sigma = model.config.gaussian_sigma;
  out.write(reinterpret_cast<const char*>(&sigma), 8);
  write_layers(out, model.encoder);
  write_layers(out, model.decoder);
}

CodecModel load_codec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw InputError("bad codec checkpoint magic");
  CodecModel m;
  uint32_t dims[2];
  in.read(reinterpret_cast<char*>(dims), 8);
  m.config.input_dim = static_cast<int>(dims[0]);
  m.config.latent_dim = static_cast<int>(dims[1]);
  in.read(reinterpret_cast<char*>(&m.config.gaussian_sigma), 8);
  m.encoder = read_layers(in);
  m.decoder = read_layers(in);
  if (!in) throw InputError("truncated codec checkpoint");
  m.config.hidden_layers.clear();
  for (size_t i = 0; i + 1 < m.encoder.size(); ++i)
    m.config.hidden_layers.push_back(static_cast<int>(m.encoder[i].W.rows()));
  return m;
}

Vec3 LatentNormalization::normalize(const Vec3& latent) const {
  return ((latent - lo).array() / (hi - lo).array()).matrix();
}

Vec3 LatentNormalization::denormalize(const Vec3& unit) const {
  return (lo.array() + unit.array() * (hi - lo).array()).matrix();
}

LatentNormalization LatentNormalization::fit(const Mat3X& latents, double margin) {
  LatentNormalization n;
  n.lo = latents.rowwise().minCoeff();
  n.hi = latents.rowwise().maxCoeff();
  const Vec3 pad = margin * (n.hi - n.lo).cwiseMax(1e-6);
  n.lo -= pad;
  n.hi += pad;
  return n;
}

}  // namespace avk
