#include <cmath>
#include <random>

#include "acps/errors.hpp"
#include "acps/sharing.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acps;

namespace {

SharingProblem random_problem(std::mt19937_64& rng, int A, int images, int negatives) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SharingProblem p;
  for (int i = 0; i < images; ++i) {
    SharingImage img;
    for (int j = 0; j < 3; ++j) {
      JointResponses jr;
      for (int a = 0; a < A; ++a) jr.positive.push_back(u(rng));
      for (int k = 0; k < negatives; ++k) {
        std::vector<double> n;
        for (int a = 0; a < A; ++a) n.push_back(u(rng));
        jr.negatives.push_back(n);
      }
      img.joints.push_back(jr);
    }
    p.images.push_back(img);
  }
  return p;
}

std::vector<double> random_simplex(std::mt19937_64& rng, int A) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> g(A);
  double s = 0.0;
  for (double& x : g) s += x = e(rng);
  for (double& x : g) x /= s;
  return g;
}

}  // namespace

TEST_CASE("negatives: plateaus have no modes") {
  ScoreMap m(8, 8);
  for (double& v : m.values) v = 2.0;
  CHECK(mine_negatives(m, {0, 0}).empty());
}

TEST_CASE("negatives: exclusion, ordering, suppression and count") {
  ScoreMap m(40, 20);
  m.at(5, 5) = 9.0;    // at the ground truth
  m.at(20, 10) = 3.0;
  m.at(23, 10) = 4.0;  // suppressed by nothing, suppresses (20,10)
  m.at(35, 15) = 2.0;
  m.at(35, 2) = 1.0;
  const auto peaks = mine_negatives(m, {5, 5}, 10, 5.0, 5.0);
  REQUIRE(peaks.size() == 3);
  CHECK(peaks[0].x == 23);
  CHECK(peaks[1].x == 35);
  CHECK(peaks[1].y == 15);
  CHECK(peaks[2].y == 2);
  CHECK(mine_negatives(m, {5, 5}, 2).size() == 2);
  CHECK(mine_negatives(m, {100, 100}, 10)[0].value == 9.0);
}

TEST_CASE("simplex projection on hand fixtures") {
  const std::vector<double> in = {0.2, 0.3, 0.5};
  CHECK(project_to_simplex(in) == in);
  const std::vector<double> big = {2.0, 0.0};
  CHECK(project_to_simplex(big) == std::vector<double>{1.0, 0.0});
  const auto p = project_to_simplex(std::vector<double>{0.5, 0.5, 0.5});
  for (double x : p) CHECK(x == doctest::Approx(1.0 / 3));
  const auto q = project_to_simplex(std::vector<double>{1.0, 0.4, -3.0});
  CHECK(q[0] == doctest::Approx(0.8));
  CHECK(q[1] == doctest::Approx(0.2));
  CHECK(q[2] == 0.0);
}

TEST_CASE("simplex projection satisfies the obtuse-angle condition") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int t = 0; t < 300; ++t) {
    const int A = 1 + t % 6;
    std::vector<double> v(A);
    for (double& x : v) x = n(rng);
    const auto p = project_to_simplex(v);
    double s = 0.0;
    for (double x : p) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    // (v - p) . (q - p) <= 0 for every point q of the simplex.
    for (int r = 0; r < 5; ++r) {
      const auto q = random_simplex(rng, A);
      double d = 0.0;
      for (int a = 0; a < A; ++a) d += (v[a] - p[a]) * (q[a] - p[a]);
      CHECK(d <= 1e-9);
    }
    const auto pp = project_to_simplex(p);
    for (int a = 0; a < A; ++a) CHECK(pp[a] == doctest::Approx(p[a]).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const int A = 2 + t % 4;
    const SharingProblem prob = random_problem(rng, A, 3, t % 3 == 0 ? 0 : 4);
    SharingConfig cfg;
    cfg.temperature = 0.5 + 0.1 * t;
    const auto g0 = random_simplex(rng, A);
    const auto grad = sharing_gradient(g0, prob, cfg);
    for (int a = 0; a < A; ++a) {
      auto hi = g0, lo = g0;
      hi[a] += 1e-6;
      lo[a] -= 1e-6;
      const double fd = (sharing_objective(hi, prob, cfg) - sharing_objective(lo, prob, cfg)) / 2e-6;
      CHECK(grad[a] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("fit reaches the closed-form optimum of a ridge-only problem") {
  // Objective 0.3 g0 - lambda |g|^2 on the 2-simplex peaks at g0 = (0.3/(2 lambda) + 1) / 2.
  SharingProblem p;
  p.images.push_back({{JointResponses{{0.3, 0.0}, {}}}});
  SharingConfig cfg;
  const SharingFit fit = fit_sharing(p, 2, cfg);
  CHECK(fit.gamma[0] == doctest::Approx(0.6875).epsilon(1e-4));
  CHECK(fit.gamma[1] == doctest::Approx(0.3125).epsilon(1e-4));

  p.images[0].joints[0].positive = {5.0, 0.0};
  CHECK(fit_sharing(p, 2, cfg).gamma == std::vector<double>{1.0, 0.0});
}

TEST_CASE("fit is monotone, stays on the simplex and beats uniform") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 15; ++t) {
    const int A = 2 + t % 4;
    const SharingProblem prob = random_problem(rng, A, 4, 5);
    SharingConfig cfg;
    const SharingFit fit = fit_sharing(prob, A, cfg);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      CHECK(fit.objective_trace[i] >= fit.objective_trace[i - 1]);
    }
    double s = 0.0;
    for (double x : fit.gamma) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    for (int r = 0; r < 20; ++r) {
      CHECK(sharing_objective(random_simplex(rng, A), prob, cfg) <= fit.objective_trace.back() + 1e-6);
    }
  }
}

TEST_CASE("one action fits the trivial weight") {
  std::mt19937_64 rng(4);
  const SharingFit fit = fit_sharing(random_problem(rng, 1, 2, 3), 1, {});
  CHECK(fit.gamma == std::vector<double>{1.0});
}

TEST_CASE("learn_sharing names every action without data") {
  std::mt19937_64 rng(5);
  std::vector<SharingProblem> probs(1, random_problem(rng, 4, 2, 2));
  probs[0].action = 2;
  try {
    learn_sharing(probs, 4, {});
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("0, 1, 3") != std::string::npos);
  }
}

TEST_CASE("learn_sharing is thread-count invariant") {
  std::mt19937_64 rng(6);
  std::vector<SharingProblem> probs;
  for (int a = 0; a < 3; ++a) {
    probs.push_back(random_problem(rng, 3, 3, 4));
    probs.back().action = a;
  }
  const auto w1 = learn_sharing(probs, 3, {}, 1);
  const auto w4 = learn_sharing(probs, 3, {}, 4);
  CHECK(w1.gamma == w4.gamma);
}

TEST_CASE("collect_responses reads positives at the rounded ground truth") {
  std::vector<ScoreMap> maps(2, ScoreMap(20, 20));
  maps[0].at(4, 6) = 1.0;
  maps[1].at(4, 6) = 0.5;
  maps[1].at(15, 15) = 3.0;
  const JointResponses jr = collect_responses(maps, {4.4, 5.6}, 10, 5.0, 5.0);
  CHECK(jr.positive == std::vector<double>{1.0, 0.5});
  REQUIRE(jr.negatives.size() == 1);
  CHECK(jr.negatives[0] == std::vector<double>{0.0, 3.0});
}

TEST_CASE("sharing text round trip and errors") {
  std::mt19937_64 rng(7);
  SharingWeights w;
  for (int a = 0; a < 4; ++a) w.gamma.push_back(random_simplex(rng, 4));
  const SharingWeights r = sharing_from_text(sharing_to_text(w));
  REQUIRE(r.action_count() == 4);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) CHECK(r.gamma[a][b] == doctest::Approx(w.gamma[a][b]).epsilon(1e-8));
  }
  CHECK(sharing_from_text(sharing_to_text(SharingWeights::identity(3))).gamma == SharingWeights::identity(3).gamma);
  CHECK_THROWS_AS(sharing_from_text("actions 2\n1 0\n"), FormatError);
  CHECK_THROWS_AS(sharing_from_text("actions 2\n1 0\n0 x\n"), FormatError);
  CHECK_THROWS_AS(sharing_from_text("rows 2\n"), FormatError);
}
