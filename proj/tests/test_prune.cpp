#include <doctest.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"
#include "tinyclap/errors.hpp"
#include "tinyclap/hash.hpp"
#include "tinyclap/io_util.hpp"
#include "tinyclap/prune.hpp"
#include "tinyclap/synthetic.hpp"

using namespace tinyclap;
using namespace tinyclap::testing;

namespace {

Eigen::VectorXf random_vector(Index d, Rng& rng) {
  Eigen::VectorXf v(d);
  for (Index i = 0; i < d; ++i) v[i] = static_cast<float>(normal01(rng));
  return v;
}

}  // namespace

TEST_CASE("ranking of the two-sample example") {
  Eigen::MatrixXf p(2, 3);
  p << 0.1f, -0.9f, 0.3f, 0.3f, 0.5f, -0.1f;
  const PruneRanking r = rank_projections(p);
  CHECK(r.importance[0] == doctest::Approx(0.2));
  CHECK(r.importance[1] == doctest::Approx(0.7));
  CHECK(r.importance[2] == doctest::Approx(0.2));
  CHECK(r.index_order == std::vector<Index>{1, 0, 2});
  CHECK_NOTHROW(r.validate());
}

TEST_CASE("exact ties keep the lower index first") {
  CHECK(rank_order(std::vector<double>{0.5, 0.5, 1.0, 0.5}) == std::vector<Index>{2, 0, 1, 3});
}

TEST_CASE("single sample ranks by absolute value") {
  Eigen::MatrixXf p(1, 4);
  p << -3.f, 1.f, 2.f, -0.5f;
  CHECK(rank_projections(p).index_order == std::vector<Index>{0, 2, 1, 3});
}

TEST_CASE("ranking matches a brute-force recomputation") {
  Rng rng(3);
  Eigen::MatrixXf p(100, 16);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(normal01(rng));
  const PruneRanking r = rank_projections(p);
  std::vector<std::pair<double, Index>> oracle;
  for (Index j = 0; j < 16; ++j) {
    double s = 0.0;
    for (Index i = 0; i < 100; ++i) s += std::abs(static_cast<double>(p(i, j)));
    oracle.emplace_back(s / 100.0, j);
    CHECK(r.importance[static_cast<std::size_t>(j)] == s / 100.0);
  }
  std::sort(oracle.begin(), oracle.end(), [](auto a, auto b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (std::size_t k = 0; k < 16; ++k) CHECK(r.index_order[k] == oracle[k].second);
}

TEST_CASE("empty projection sets cannot be ranked") {
  CHECK_THROWS_AS(rank_projections(Eigen::MatrixXf(0, 4)), ContractError);
  CHECK_THROWS_AS(rank_latents(StudentEncoder::build(preset("tiny"), 0), AudioDataset{}, FrontendSettings{}),
                  ContractError);
}

TEST_CASE("top-r sets are nested prefixes") {
  Rng rng(4);
  Eigen::MatrixXf p(10, 32);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(normal01(rng));
  const PruneRanking r = rank_projections(p);
  for (Index a = 1; a <= 32; ++a) {
    const auto small = r.top_r(a);
    const std::set<Index> small_set(small.begin(), small.end());
    CHECK(small_set.size() == static_cast<std::size_t>(a));
    for (Index b = a; b <= 32; ++b) {
      const auto big = r.top_r(b);
      CHECK(std::equal(small.begin(), small.end(), big.begin()));
    }
  }
  CHECK_THROWS_AS(r.top_r(0), ContractError);
  CHECK_THROWS_AS(r.top_r(33), ContractError);
}

TEST_CASE("selection preserves inner products and matches zero masking") {
  Rng rng(5);
  Eigen::MatrixXf p(3, 20);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(normal01(rng));
  const PruneRanking r = rank_projections(p);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXf u = random_vector(20, rng), v = random_vector(20, rng);
    const Eigen::VectorXf su = select_top_r(r, u, 20), sv = select_top_r(r, v, 20);
    CHECK(su.dot(sv) == doctest::Approx(u.dot(v)).epsilon(1e-6));
    for (Index k : {1, 5, 10, 19}) {
      Eigen::VectorXf mu = Eigen::VectorXf::Zero(20), mv = Eigen::VectorXf::Zero(20);
      for (Index i : r.top_r(k)) {
        mu[i] = u[i];
        mv[i] = v[i];
      }
      CHECK(std::abs(select_top_r(r, u, k).dot(select_top_r(r, v, k)) - mu.dot(mv)) < 1e-6);
    }
  }
  Eigen::VectorXf sorted = select_top_r(r, Eigen::VectorXf(p.row(0).transpose()), 20);
  std::vector<float> a(sorted.data(), sorted.data() + 20), b;
  for (Index j = 0; j < 20; ++j) b.push_back(p(0, j));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK_THROWS_AS(select_top_r(r, Eigen::VectorXf(19), 3), ContractError);
}

TEST_CASE("pruned encoder equals selection of the full projection") {
  const auto enc = StudentEncoder::build(preset("micro"), 2);
  const AudioDataset data = make_mixture_corpus(6, 1, 0.6);
  const InferenceOptions io{0.5, 4, 1};
  const PruneRanking r = rank_latents(enc, data, FrontendSettings{}, io);
  const auto pruned = prune_checkpoint(enc, r, 48);
  CHECK(pruned.output_dim() == 48);
  CHECK(pruned.parameter_count() - body_param_count(enc.config()) == 48 * (enc.feature_dim() + 1));
  CHECK(pruned.prune_info()->kept == r.top_r(48));

  const Eigen::MatrixXf full = project_dataset(enc, data, FrontendSettings{}, io);
  const Eigen::MatrixXf part = project_dataset(pruned, data, FrontendSettings{}, io);
  const MelFrontend fe;
  for (Index i = 0; i < full.rows(); ++i) {
    const Eigen::VectorXf sel = select_top_r(r, Eigen::VectorXf(full.row(i).transpose()), 48);
    CHECK((sel - part.row(i).transpose()).cwiseAbs().maxCoeff() == 0.f);
    const LatentVector e = embed(pruned, prepare_mel(center_crop(data.items[i].clip, 0.5), fe));
    CHECK((e.values - sel.normalized()).cwiseAbs().maxCoeff() < 1e-6f);
  }

  const PruneRanking again = rank_latents(pruned, data, FrontendSettings{}, io);
  for (Index k = 0; k < 48; ++k)
    CHECK(again.importance[static_cast<std::size_t>(k)] ==
          doctest::Approx(r.importance[static_cast<std::size_t>(r.index_order[static_cast<std::size_t>(k)])]).epsilon(1e-6));
}

TEST_CASE("prune checks range and encoder identity") {
  const auto enc = StudentEncoder::build(preset("tiny"), 2);
  const AudioDataset data = make_mixture_corpus(3, 1, 0.6);
  const PruneRanking r = rank_latents(enc, data, FrontendSettings{}, {0.5, 4, 1});
  CHECK_THROWS_WITH_AS(prune_checkpoint(enc, r, 0), doctest::Contains("[1, 8]"), ContractError);
  CHECK_THROWS_AS(prune_checkpoint(enc, r, 9), ContractError);
  CHECK_THROWS_AS(prune_checkpoint(StudentEncoder::build(preset("tiny"), 3), r, 4), ContractError);
  CHECK_THROWS_AS(prune_checkpoint(prune_checkpoint(enc, r, 4), r, 2), ContractError);
}

TEST_CASE("ranking is deterministic and round-trips through JSON") {
  const auto enc = StudentEncoder::build(preset("tiny"), 2);
  const AudioDataset data = make_mixture_corpus(4, 9, 0.6);
  const PruneRanking a = rank_latents(enc, data, FrontendSettings{}, {0.5, 4, 1});
  const PruneRanking b = rank_latents(enc, data, FrontendSettings{}, {0.5, 4, 1});
  CHECK(a.index_order == b.index_order);
  CHECK(a.importance == b.importance);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.dataset_fingerprint == to_hex(data.fingerprint));

  TempDir dir("rank");
  save_ranking(dir / "r.json", a);
  const PruneRanking c = load_ranking(dir / "r.json");
  CHECK(c.index_order == a.index_order);
  CHECK(c.importance == a.importance);
  CHECK(c.encoder_fingerprint == a.encoder_fingerprint);

  nlohmann::json j = a;
  std::swap(j["index_order"][0], j["index_order"][1]);
  write_text_atomic(dir / "bad.json", j.dump());
  CHECK_THROWS_AS(load_ranking(dir / "bad.json"), FormatError);
  write_text_atomic(dir / "worse.json", "{");
  CHECK_THROWS_AS(load_ranking(dir / "worse.json"), FormatError);
}
