#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <random>

#include "avk/codec.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace avk;

namespace {

CodecConfig small_config() {
  CodecConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_layers = {8, 4};
  return cfg;
}

MatX random_simplex(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0, 1);
  MatX m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = -std::log(uni(rng) + 1e-12);
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

// flatten every parameter so the finite-difference sweep can walk them
std::vector<double*> parameter_view(CodecModel& m) {
  std::vector<double*> out;
  auto add = [&](std::vector<AffineLayer>& layers) {
    for (auto& l : layers) {
      for (int r = 0; r < l.W.rows(); ++r)
        for (int c = 0; c < l.W.cols(); ++c) out.push_back(&l.W(r, c));
      for (int r = 0; r < l.b.size(); ++r) out.push_back(&l.b(r));
    }
  };
  add(m.encoder);
  add(m.decoder);
  return out;
}

std::vector<double> gradient_view(const CodecGradients& g) {
  std::vector<double> out;
  auto add = [&](const std::vector<AffineLayer>& layers) {
    for (const auto& l : layers) {
      for (int r = 0; r < l.W.rows(); ++r)
        for (int c = 0; c < l.W.cols(); ++c) out.push_back(l.W(r, c));
      for (int r = 0; r < l.b.size(); ++r) out.push_back(l.b(r));
    }
  };
  add(g.encoder);
  add(g.decoder);
  return out;
}

}  // namespace

TEST_CASE("codec gradients match central finite differences") {
  auto cfg = small_config();
  std::mt19937_64 rng(11);
  CodecModel model = init_codec(cfg, 42);
  MatX batch = random_simplex(4, cfg.input_dim, rng);

  CodecGradients grads;
  codec_loss_grad(model, batch, cfg, grads);
  auto analytic = gradient_view(grads);
  auto params = parameter_view(model);
  REQUIRE(analytic.size() == params.size());

  const double h = 1e-6;
  double max_rel = 0;
  for (size_t i = 0; i < params.size(); i += 7) {  // sparse sweep, still ~60 params
    const double saved = *params[i];
    *params[i] = saved + h;
    const double fp = codec_loss(model, batch, cfg).total;
    *params[i] = saved - h;
    const double fm = codec_loss(model, batch, cfg).total;
    *params[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("KL term matches direct sum p log(p/q)") {
  auto cfg = small_config();
  cfg.lambda_l1 = 0;
  cfg.lambda_nz = 0;
  cfg.lambda_kl = 1;
  std::mt19937_64 rng(12);
  CodecModel model = init_codec(cfg, 7);
  MatX batch = random_simplex(5, cfg.input_dim, rng);
  MatX decoded = model.decode_rows(model.encode_rows(batch));
  double expect = 0;
  for (int r = 0; r < batch.rows(); ++r)
    for (int c = 0; c < batch.cols(); ++c) {
      const double p = std::max(batch(r, c), 1e-8);
      const double q = std::max(decoded(r, c), 1e-8);
      expect += p * std::log(p / q);
    }
  expect /= batch.rows();
  CodecLoss loss = codec_loss(model, batch, cfg);
  CHECK(std::abs(loss.kl - expect) < 1e-10);
  CHECK(std::abs(loss.total - expect) < 1e-10);
}

TEST_CASE("relaxed nonzero count: one-hot row counts almost exactly one") {
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(24);
  w(5) = 1.0;
  const double nz = relaxed_nonzero_count(w, 0.01);
  CHECK(nz == doctest::Approx(1.0).epsilon(1e-12));
  // two active entries of 0.5 each count as two
  Eigen::RowVectorXd w2 = Eigen::RowVectorXd::Zero(24);
  w2(1) = 0.5;
  w2(9) = 0.5;
  CHECK(relaxed_nonzero_count(w2, 0.01) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("decoded rows live on the simplex") {
  auto cfg = small_config();
  std::mt19937_64 rng(13);
  CodecModel model = init_codec(cfg, 3);
  MatX batch = random_simplex(50, cfg.input_dim, rng);
  MatX decoded = model.decode_rows(model.encode_rows(batch));
  for (int r = 0; r < decoded.rows(); ++r) {
    CHECK(std::abs(decoded.row(r).sum() - 1.0) < 1e-6);
    CHECK(decoded.row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("encode is deterministic") {
  auto cfg = small_config();
  std::mt19937_64 rng(14);
  CodecModel model = init_codec(cfg, 9);
  MatX batch = random_simplex(10, cfg.input_dim, rng);
  MatX a = model.encode_rows(batch);
  MatX b = model.encode_rows(batch);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("perfect reconstruction zeroes every loss term") {
  auto cfg = small_config();
  // zero out every weight and pin the output logits, so the model emits the
  // same simplex row for any input; feeding that row back makes p == q exactly
  CodecModel model = init_codec(cfg, 21);
  for (auto& l : model.encoder) {
    l.W.setZero();
    l.b.setZero();
  }
  for (auto& l : model.decoder) {
    l.W.setZero();
    l.b.setZero();
  }
  Eigen::RowVectorXd logits(cfg.input_dim);
  logits << 0.9, -0.3, 1.7, 0.0, -1.1, 0.4;
  model.decoder.back().b = logits.transpose();
  MatX batch = model.decode_rows(MatX::Zero(8, cfg.latent_dim));
  CodecLoss loss = codec_loss(model, batch, cfg);
  CHECK(loss.l1 < 1e-12);
  CHECK(loss.nz < 1e-12);
  CHECK(std::abs(loss.kl) < 1e-12);
  CHECK(std::abs(loss.total) < 1e-12);
}

TEST_CASE("build_sample_set: rows stay on the simplex, area-weighted") {
  auto cube = testing::make_cube();
  std::mt19937_64 rng(16);
  SkinWeights w;
  w.w = random_simplex(cube.vertex_count(), 4, rng);
  cube.weights = w;
  auto set = build_sample_set(cube, 500, 77);
  REQUIRE(set.samples.rows() == 500);
  for (int r = 0; r < set.samples.rows(); ++r) {
    CHECK(std::abs(set.samples.row(r).sum() - 1.0) < 1e-9);
    CHECK(set.samples.row(r).minCoeff() >= 0.0);
  }
  // same seed, same draw
  auto set2 = build_sample_set(cube, 500, 77);
  CHECK((set.samples - set2.samples).norm() == 0.0);
}

TEST_CASE("build_sample_set rejects a zero-area template") {
  SkinnedMesh flat;
  flat.vertices = Mat3X::Zero(3, 3);
  flat.faces.resize(3, 1);
  flat.faces.col(0) << 0, 1, 2;
  flat.weights.w = MatX::Constant(3, 2, 0.5);
  CHECK_THROWS_AS(build_sample_set(flat, 10, 1), InputError);
}

TEST_CASE("training reduces loss and checkpoint round-trips") {
  auto cfg = small_config();
  cfg.batch_size = 32;
  cfg.epochs = 40;
  auto cube = testing::make_cube();
  std::mt19937_64 rng(17);
  SkinWeights w;
  w.w = random_simplex(cube.vertex_count(), cfg.input_dim, rng);
  cube.weights = w;
  auto set = build_sample_set(cube, 512, 5);
  auto result = train_codec(set, cfg, 123);
  REQUIRE(!result.diverged);
  REQUIRE(result.history.size() > 20);
  const double first = result.history.front();
  const double last = result.history.back();
  CHECK(last < first);

  const auto path = std::filesystem::temp_directory_path() / "avk_codec_test.bin";
  save_codec(result.model, path);
  CodecModel loaded = load_codec(path);
  std::remove(path.string().c_str());
  MatX probe = random_simplex(16, cfg.input_dim, rng);
  // float32 checkpoint: agreement to float precision
  CHECK((loaded.decode_rows(loaded.encode_rows(probe)) -
         result.model.decode_rows(result.model.encode_rows(probe)))
            .cwiseAbs()
            .maxCoeff() < 1e-5);
  CHECK(loaded.config.input_dim == cfg.input_dim);
  CHECK(loaded.config.hidden_layers == cfg.hidden_layers);
}

TEST_CASE("identical samples collapse to near-zero reconstruction error") {
  auto cfg = small_config();
  cfg.batch_size = 16;
  cfg.epochs = 400;
  cfg.learning_rate = 3e-3;
  WeightSampleSet set;
  Eigen::RowVectorXd row(cfg.input_dim);
  row << 0.4, 0.3, 0.2, 0.05, 0.04, 0.01;
  set.samples = row.replicate(64, 1);
  auto result = train_codec(set, cfg, 99);
  REQUIRE(!result.diverged);
  MatX decoded = result.model.decode_rows(result.model.encode_rows(set.samples));
  CHECK((decoded.row(0) - row).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("latent normalization round-trips") {
  Mat3X latents = Mat3X::Random(3, 40) * 2.5;
  auto norm = LatentNormalization::fit(latents);
  for (int i = 0; i < latents.cols(); ++i) {
    const Vec3 u = norm.normalize(latents.col(i));
    CHECK(u.minCoeff() >= 0.0);
    CHECK(u.maxCoeff() <= 1.0);
    CHECK((norm.denormalize(u) - latents.col(i)).norm() < 1e-12);
  }
}
