#include "spaigen/dataset.hpp"
#include "spaigen/error.hpp"
#include "spaigen/mesh.hpp"
#include "spaigen/model.hpp"
#include "spaigen/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace spaigen;
namespace fs = std::filesystem;

namespace {

const DatasetSplit& shared_split() {
  static const DatasetSplit split =
      generate_dataset(ProblemFamily::poisson, generate_mesh(20, 3), 5, 0.3, 17);
  return split;
}

}  // namespace

TEST_CASE("model config derived sizes") {
  ModelConfig c = ModelConfig::for_profile("poisson", 225, 1);
  CHECK(c.decoder_base_resolution() == 29);  // ceil(225 / 8)
  CHECK(c.padded_side() == 232);
  c = ModelConfig::for_profile("biharmonic", 1089, 1);
  CHECK(c.cnn_layers() == 4);
  CHECK(c.padded_side() >= 1089);
  CHECK(c.padded_side() % 16 == 0);
  CHECK_THROWS_AS(ModelConfig::for_profile("huge", 10, 1), Error);

  ModelConfig bad = ModelConfig::for_profile("smoke", 10, 1);
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ModelConfig::for_profile("smoke", 10, 1);
  bad.output_scale = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("model config json round trip") {
  ModelConfig c = ModelConfig::for_profile("small", 37, 99);
  c.output_scale = 0.123456789012345678;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.output_scale == c.output_scale);
  CHECK(back.cnn_channels == c.cnn_channels);
  CHECK_THROWS_AS(ModelConfig::from_json("{not json"), Error);
}

TEST_CASE("reparameterize and signed_log") {
  const Vector z = reparameterize({1.0, -2.0}, {0.0, std::log(4.0)}, {0.5, 1.0});
  CHECK(z[0] == doctest::Approx(1.5));
  CHECK(z[1] == doctest::Approx(0.0));
  CHECK(reparameterize({3.0}, {-1.0}, {0.0})[0] == 3.0);  // eps = 0 gives the mean
  CHECK_THROWS_AS(reparameterize({1.0}, {0.0, 0.0}, {0.0}), Error);

  CHECK(signed_log(0.0) == 0.0);
  CHECK(signed_log(-3.0) == -signed_log(3.0));
  CHECK(signed_log(std::exp(1.0) - 1.0) == doctest::Approx(1.0));
}

TEST_CASE("forward pass shapes and mask pattern") {
  const DatasetSplit& split = shared_split();
  const int n = split.dim();
  const Gcvae model(ModelConfig::for_profile("smoke", n, 4));
  const ProblemSample& s = split.train.front();

  const ConditionEmbedding e = model.graph_encode(to_graph(s.a));
  CHECK(static_cast<int>(e.g.size()) == model.config().gnn_hidden);
  CHECK(e.per_node.rows() == n);
  // g is the mean of the node rows
  for (int k = 0; k < model.config().gnn_hidden; ++k)
    CHECK(e.g[k] == doctest::Approx(e.per_node.col(k).mean()).epsilon(1e-12));

  CHECK(static_cast<int>(model.cnn_encode(*s.a_inv).size()) == model.config().cnn_feature_size());

  const Vector eps = standard_normal(model.config().latent_dim, 3);
  const ForwardResult f = model.forward_train(s, eps);
  CHECK(pattern_of(f.r) == s.mask);
  CHECK(f.r.nnz() == s.mask.size());
  CHECK(static_cast<int>(f.latent.mu.size()) == model.config().latent_dim);
  for (double v : f.r.values()) CHECK(std::isfinite(v));

  // same eps, same factor
  const ForwardResult g = model.forward_train(s, eps);
  CHECK(std::ranges::equal(f.r.values(), g.r.values()));
}

TEST_CASE("inference needs only A and the mask") {
  const DatasetSplit& split = shared_split();
  const Gcvae model(ModelConfig::for_profile("smoke", split.dim(), 4));
  ProblemSample s = split.test.front();
  s.a_inv.reset();
  const Vector z0(model.config().latent_dim, 0.0);
  const CsrMatrix r = model.infer(s.a, s.mask, z0);
  CHECK(pattern_of(r) == s.mask);
  CHECK_THROWS_AS(model.forward_train(s, z0), Error);

  // the decoder depends on z
  const CsrMatrix r2 = model.infer(s.a, s.mask, standard_normal(model.config().latent_dim, 1));
  CHECK_FALSE(std::ranges::equal(r.values(), r2.values()));

  // any mask of the right size is honoured, including the plain diagonal
  const CsrMatrix d = model.infer(s.a, SparsityMask::diagonal(s.dim()), z0);
  CHECK(d.nnz() == s.dim());
}

TEST_CASE("dimension errors") {
  const DatasetSplit& split = shared_split();
  const Gcvae model(ModelConfig::for_profile("smoke", split.dim() + 1, 4));
  const ProblemSample& s = split.train.front();
  const Vector z0(model.config().latent_dim, 0.0);
  CHECK_THROWS_AS(model.infer(s.a, s.mask, z0), Error);
  const Gcvae right(ModelConfig::for_profile("smoke", split.dim(), 4));
  CHECK_THROWS_AS(right.infer(s.a, s.mask, Vector(3, 0.0)), Error);
  CHECK_THROWS_AS(right.infer(s.a, SparsityMask::diagonal(s.dim() - 1), z0), Error);
}

TEST_CASE("initialisation is seeded") {
  const Gcvae a(ModelConfig::for_profile("smoke", 12, 1));
  const Gcvae b(ModelConfig::for_profile("smoke", 12, 1));
  const Gcvae c(ModelConfig::for_profile("smoke", 12, 2));
  bool same_ab = true, same_ac = true;
  for (std::size_t k = 0; k < a.parameters().num_scalars(); ++k) {
    same_ab = same_ab && a.parameters().flat(k) == b.parameters().flat(k);
    same_ac = same_ac && a.parameters().flat(k) == c.parameters().flat(k);
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
}

TEST_CASE("checkpoint save and load") {
  const DatasetSplit& split = shared_split();
  ModelConfig cfg = ModelConfig::for_profile("smoke", split.dim(), 8);
  cfg.output_scale = 0.37;
  const Gcvae model(cfg);
  const fs::path dir = fs::temp_directory_path() / "spaigen_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path p = dir / "model.ckpt";
  model.save(p);
  const Gcvae back = Gcvae::load(p);
  CHECK(back.config().to_json() == model.config().to_json());
  for (std::size_t k = 0; k < model.parameters().num_scalars(); ++k)
    REQUIRE(back.parameters().flat(k) == model.parameters().flat(k));
  const ProblemSample& s = split.test.front();
  const Vector z = standard_normal(cfg.latent_dim, 5);
  CHECK(std::ranges::equal(back.infer(s.a, s.mask, z).values(), model.infer(s.a, s.mask, z).values()));

  // truncation and garbage are rejected
  const auto size = fs::file_size(p);
  fs::copy_file(p, dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size - 8);
  CHECK_THROWS_AS(Gcvae::load(dir / "short.ckpt"), Error);
  {
    std::ofstream junk(dir / "junk.ckpt");
    junk << "hello";
  }
  CHECK_THROWS_AS(Gcvae::load(dir / "junk.ckpt"), Error);
  CHECK_THROWS_AS(Gcvae::load(dir / "missing.ckpt"), Error);
  fs::remove_all(dir);
}
