#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "opencos/detect.h"
#include "oracles.h"
#include "support.h"

using namespace opencos;
using testing::random_array;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);  // every class present
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::vector<ScoredSample> scored_from(const Array& z, const PrototypeSet& protos) {
  std::vector<ScoredSample> out;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    ScoredSample s;
    s.id = 1000 + r;
    s.sims = class_similarities(z.row_span(r), protos);
    s.score = detection_score(s.sims);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("prototype examples") {
  const Array z = Array::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  const std::vector<int> same{0, 0};
  const PrototypeSet p = compute_prototypes(z, same, 1);
  CHECK(p.prototypes == Array::matrix(1, 2, {0.5, 0.5}));
  CHECK(p.counts == std::vector<std::size_t>{2});

  const std::vector<int> each{1, 0};
  const PrototypeSet q = compute_prototypes(z, each, 2);
  CHECK(q.prototypes == Array::matrix(2, 2, {0.0, 1.0, 1.0, 0.0}));

  const std::vector<int> missing{0, 2};
  try {
    compute_prototypes(z, missing, 3);
    FAIL("expected a missing-class error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("prototypes from a model match an accumulation loop") {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.num_classes = 2;
  const Model model(cfg, 3);
  std::mt19937_64 rng(3);
  Dataset d;
  d.dim = 4;
  for (std::uint64_t i = 0; i < 3; ++i) {
    Sample s{i, {}, static_cast<int>(i % 2)};
    for (int k = 0; k < 4; ++k) s.features.push_back(std::uniform_real_distribution<double>(-1, 1)(rng));
    d.samples.push_back(s);
  }
  const PrototypeSet p = compute_prototypes(d, model);
  const Array z = model.infer(d.features()).projection;
  const Array expected = oracle::class_means(z, d.labels(), 2);
  CHECK(testing::max_abs_diff(p.prototypes, expected) < 1e-12);
  CHECK(project(model, d) == z);
}

TEST_CASE("similarity examples") {
  PrototypeSet p;
  p.prototypes = Array::matrix(2, 3, {1.0, 2.0, 0.0, 0.0, -1.0, 2.0});
  p.counts = {1, 1};
  const std::vector<double> self{1.0, 2.0, 0.0};
  CHECK(class_similarities(self, p)[0] == doctest::Approx(1.0).epsilon(1e-15));
  PrototypeSet axis;
  axis.prototypes = Array::matrix(2, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
  axis.counts = {1, 1};
  const std::vector<double> ortho{0.0, 0.0, 5.0};
  CHECK(class_similarities(ortho, axis) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("score examples") {
  const std::vector<double> sims{0.2, -0.1, 0.9};
  CHECK(detection_score(sims) == 0.9);
  const std::vector<double> single{-0.3};
  CHECK(detection_score(single) == -0.3);
  CHECK_THROWS_AS(detection_score(std::vector<double>{}), std::invalid_argument);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(7);
    for (auto& x : v) x = u(rng);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(detection_score(v) == sorted.back());
  }
}

TEST_CASE("threshold examples") {
  DetectionConfig cfg;
  const std::vector<double> flat{0.5, 0.5};
  CHECK(compute_threshold(flat, cfg).value == 0.5);

  const std::vector<double> s{0.9, 0.8, 1.0};
  const Threshold t = compute_threshold(s, cfg);
  CHECK(t.mu == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(std::abs(t.sigma - 0.081649658092772603) < 1e-15);
  CHECK(std::abs(t.value - 0.73670068381445479) < 1e-12);

  cfg.eta = 0.0;
  CHECK(compute_threshold(s, cfg).value == t.mu);
  cfg.explicit_threshold = 0.25;
  CHECK(compute_threshold(s, cfg).value == 0.25);
  cfg = DetectionConfig{};
  cfg.eta = -1.0;
  CHECK_THROWS_AS(compute_threshold(s, cfg), std::invalid_argument);
}

TEST_CASE("split examples") {
  std::vector<ScoredSample> scored(3);
  for (std::size_t i = 0; i < 3; ++i) {
    scored[i].id = i;
    scored[i].score = 0.1 * static_cast<double>(i + 1);
  }
  CHECK(split_unlabeled(scored, 0.05).out.empty());
  const Split tie = split_unlabeled(scored, scored[1].score);
  CHECK(tie.out == std::vector<std::uint64_t>{0});
  CHECK(tie.in == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("seeded 1000-sample pipeline matches brute-force oracles") {
  std::mt19937_64 rng(2024);
  const std::size_t classes = 5;
  const Array lab = random_array(rng, {200, 6});
  const std::vector<int> labels = random_labels(rng, 200, classes);
  const Array unl = random_array(rng, {1000, 6});

  const PrototypeSet protos = compute_prototypes(lab, labels, classes);
  const Array want_protos = oracle::class_means(lab, labels, classes);
  CHECK(testing::max_abs_diff(protos.prototypes, want_protos) < 1e-12);

  const auto scored = scored_from(unl, protos);
  const auto want_sims = oracle::similarities(unl, want_protos);
  const auto want_scores = oracle::max_per_row(want_sims);
  double sim_err = 0.0, score_err = 0.0;
  for (std::size_t r = 0; r < 1000; ++r) {
    for (std::size_t c = 0; c < classes; ++c) sim_err = std::max(sim_err, std::abs(scored[r].sims[c] - want_sims[r][c]));
    score_err = std::max(score_err, std::abs(scored[r].score - want_scores[r]));
    CHECK(scored[r].score <= 1.0 + 1e-12);
    CHECK(scored[r].score >= -1.0 - 1e-12);
  }
  CHECK(sim_err < 1e-12);
  CHECK(score_err < 1e-12);

  const auto lab_scored = scored_from(lab, protos);
  std::vector<double> lab_scores;
  for (const auto& s : lab_scored) lab_scores.push_back(s.score);
  const Threshold t = compute_threshold(lab_scores, DetectionConfig{});
  const auto ms = oracle::population(oracle::max_per_row(oracle::similarities(lab, want_protos)));
  CHECK(std::abs(t.mu - ms.mean) < 1e-12);
  CHECK(std::abs(t.sigma - ms.sd) < 1e-12);
  CHECK(std::abs(t.value - (ms.mean - 2.0 * ms.sd)) < 1e-12);

  const Split split = split_unlabeled(scored, t.value);
  std::size_t want_out = 0;
  for (double s : want_scores) want_out += s < t.value ? 1 : 0;
  CHECK(split.out.size() == want_out);
  CHECK(split.in.size() == 1000 - want_out);
  std::set<std::uint64_t> all(split.in.begin(), split.in.end());
  for (auto id : split.out) CHECK(all.insert(id).second);
  CHECK(all.size() == 1000);

  // raising t only moves samples out
  const Split higher = split_unlabeled(scored, t.value + 0.05);
  const std::set<std::uint64_t> out_before(split.out.begin(), split.out.end());
  const std::set<std::uint64_t> out_after(higher.out.begin(), higher.out.end());
  CHECK(std::includes(out_after.begin(), out_after.end(), out_before.begin(), out_before.end()));
}

TEST_CASE("positive scaling leaves sims, scores and split unchanged") {
  std::mt19937_64 rng(5);
  const Array lab = random_array(rng, {40, 4});
  const std::vector<int> labels = random_labels(rng, 40, 4);
  const Array unl = random_array(rng, {300, 4});
  Array lab_s = lab, unl_s = unl;
  for (double& v : lab_s.data()) v *= 7.25;
  for (double& v : unl_s.data()) v *= 7.25;

  const auto a = scored_from(unl, compute_prototypes(lab, labels, 4));
  const auto b = scored_from(unl_s, compute_prototypes(lab_s, labels, 4));
  for (std::size_t r = 0; r < a.size(); ++r) {
    CHECK(std::abs(a[r].score - b[r].score) < 1e-12);
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(a[r].sims[c] - b[r].sims[c]) < 1e-12);
  }
  const double t = 0.3;
  CHECK(split_unlabeled(a, t).out == split_unlabeled(b, t).out);
}

TEST_CASE("scored manifest round trip") {
  testing::TempDir dir("detect_manifest");
  std::mt19937_64 rng(6);
  const Array lab = random_array(rng, {6, 3});
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  const auto scored = scored_from(random_array(rng, {20, 3}), compute_prototypes(lab, labels, 3));
  write_scored_manifest(dir / "s.csv", scored, 0.2);
  const ScoredManifest back = read_scored_manifest(dir / "s.csv");
  REQUIRE(back.samples.size() == scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    CHECK(back.samples[i].id == scored[i].id);
    CHECK(back.samples[i].sims == scored[i].sims);
    CHECK(back.samples[i].score == scored[i].score);
    CHECK(back.is_out[i] == (scored[i].score < 0.2));
  }
}
