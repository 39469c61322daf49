#include <cmath>
#include <random>

#include "acps/errors.hpp"
#include "acps/kmeans.hpp"
#include "acps/pairwise.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acps;

namespace {

KinematicTree two_joints() { return KinematicTree{{"root", "leaf"}, {{1, 0}}, 0}; }

// `counts[c]` poses of action `c` whose leaf offset is drawn around centers[c].
std::vector<TrainingPose> blobs(std::mt19937_64& rng, const std::vector<Point2>& centers,
                                const std::vector<int>& counts, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<TrainingPose> out;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (int i = 0; i < counts[c]; ++i) {
      TrainingPose tp;
      tp.action = static_cast<int>(c);
      tp.pose.joints = {{50, 50}, {50 + centers[c].x + n(rng), 50 + centers[c].y + n(rng)}};
      out.push_back(tp);
    }
  }
  return out;
}

const DeformationCluster* nearest(const EdgeModel& e, Point2 p) {
  const DeformationCluster* best = nullptr;
  double bd = 1e300;
  for (const auto& c : e.clusters) {
    const double d = std::hypot(c.mean.x - p.x, c.mean.y - p.y);
    if (d < bd) {
      bd = d;
      best = &c;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("cluster evaluation on hand fixtures") {
  const DeformationCluster c{{1.0, 2.0}, {4.0, 0.0, 1.0}, 0.5, 0};
  CHECK(eval_cluster(c, {1.0, 2.0}) == 0.5);
  CHECK(eval_cluster(c, {3.0, 2.0}) == doctest::Approx(0.5 * std::exp(-0.5)).epsilon(1e-15));
  CHECK(eval_cluster(c, {1.0, 3.0}) == doctest::Approx(0.5 * std::exp(-0.5)).epsilon(1e-15));
  // Correlated covariance: Sigma = [[2,1],[1,2]], Sigma^-1 = [[2,-1],[-1,2]]/3.
  const DeformationCluster r{{0.0, 0.0}, {2.0, 1.0, 2.0}, 1.0, 0};
  CHECK(eval_cluster(r, {1.0, 1.0}) == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-15));
  CHECK(eval_cluster(r, {1.0, -1.0}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 100; ++i) {
    const Point2 d{u(rng), u(rng)};
    CHECK(log_eval_cluster(r, d) == doctest::Approx(std::log(eval_cluster(r, d))).epsilon(1e-12));
  }
}

TEST_CASE("eigenvalue floor") {
  const Cov2 ok{3.0, 0.5, 2.0};
  CHECK(floor_eigenvalues(ok, 1e-4) == ok);
  const Cov2 flat{2.0, 0.0, 0.0};
  const Cov2 f = floor_eigenvalues(flat, 1e-4);
  CHECK(f.xx == 2.0);
  CHECK(f.xy == 0.0);
  CHECK(f.yy == 1e-4);
  // Rank-one along (1,1)/sqrt2 with eigenvalue 2.
  const Cov2 g = floor_eigenvalues({1.0, 1.0, 1.0}, 0.1);
  CHECK(g.xx == doctest::Approx(1.05));
  CHECK(g.xy == doctest::Approx(0.95));
  CHECK(g.yy == doctest::Approx(1.05));
  CHECK(g.det() == doctest::Approx(0.2));
}

TEST_CASE("weighted k-means separates well-spaced blobs") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.5);
  const double cx[] = {0, 20, 0}, cy[] = {0, 0, 20};
  std::vector<double> pts;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 40; ++i) {
      pts.push_back(cx[c] + n(rng));
      pts.push_back(cy[c] + n(rng));
    }
  }
  const KMeansResult km = weighted_kmeans(pts, 2, {}, 3, {});
  REQUIRE(km.k() == 3);
  for (int c = 0; c < 3; ++c) {
    for (int i = 1; i < 40; ++i) CHECK(km.assignment[c * 40 + i] == km.assignment[c * 40]);
  }
  for (std::size_t i = 1; i < km.history.size(); ++i) CHECK(km.history[i] <= km.history[i - 1] + 1e-9);
  const KMeansResult more = weighted_kmeans(pts, 2, {}, 3, {20, 100, 0});
  CHECK(more.objective <= km.objective + 1e-9);
}

TEST_CASE("zero-weight points never pull a center") {
  std::vector<double> pts = {0, 0, 1, 0, 0, 1, 1000, 1000};
  std::vector<double> w = {1, 1, 1, 0};
  const KMeansResult km = weighted_kmeans(pts, 2, w, 1, {});
  CHECK(km.center(0)[0] == doctest::Approx(1.0 / 3));
  CHECK(km.center(0)[1] == doctest::Approx(1.0 / 3));
  CHECK(count_distinct_rows(pts, 2, w) == 3);
  CHECK(count_distinct_rows(pts, 2) == 4);
}

TEST_CASE("fit_pairwise recovers blob means and frequency weights") {
  std::mt19937_64 rng(3);
  const std::vector<Point2> centers = {{-10, 0}, {10, 5}, {0, 15}};
  const auto poses = blobs(rng, centers, {50, 30, 20}, 0.8);
  PairwiseFitOptions opt;
  opt.clusters = 3;
  opt.alpha = 0.1;
  const PairwiseModel m = fit_pairwise(poses, two_joints(), opt);
  REQUIRE(m.edges.size() == 1);
  REQUIRE(m.edges[0].clusters.size() == 3);
  const double freq[] = {0.5, 0.3, 0.2};
  for (int c = 0; c < 3; ++c) {
    const DeformationCluster* cl = nearest(m.edges[0], centers[c]);
    CHECK(std::hypot(cl->mean.x - centers[c].x, cl->mean.y - centers[c].y) < 0.4);
    CHECK(cl->weight == doctest::Approx(std::pow(freq[c], 0.1)).epsilon(1e-12));
    CHECK(cl->cov.xx == doctest::Approx(0.64).epsilon(0.4));
  }
  opt.alpha = 1.0;
  const PairwiseModel m1 = fit_pairwise(poses, two_joints(), opt);
  double s = 0.0;
  for (const auto& c : m1.edges[0].clusters) s += c.weight;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  opt.alpha = 0.0;
  const PairwiseModel m0 = fit_pairwise(poses, two_joints(), opt);
  for (const auto& c : m0.edges[0].clusters) CHECK(c.weight == 1.0);
}

TEST_CASE("too few distinct offsets asks for a smaller K") {
  std::mt19937_64 rng(4);
  auto poses = blobs(rng, {{1, 1}}, {5}, 0.0);
  PairwiseFitOptions opt;
  opt.clusters = 2;
  try {
    fit_pairwise(poses, two_joints(), opt);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("smaller K") != std::string::npos);
  }
}

TEST_CASE("conditioning under a uniform prior matches the unweighted fit") {
  std::mt19937_64 rng(5);
  const auto poses = blobs(rng, {{-8, 0}, {8, 2}, {0, 9}}, {30, 25, 35}, 1.5);
  PairwiseFitOptions opt;
  opt.clusters = 4;
  opt.seed = 9;
  const PairwiseModel direct = fit_pairwise(poses, two_joints(), opt);
  const PairwiseModel cond = fit_pairwise_statistics(poses, two_joints(), 3, opt).condition(ActionPrior::uniform(3));
  REQUIRE(direct.edges[0].clusters.size() == cond.edges[0].clusters.size());
  for (std::size_t k = 0; k < direct.edges[0].clusters.size(); ++k) {
    const auto& a = direct.edges[0].clusters[k];
    const auto& b = cond.edges[0].clusters[k];
    CHECK(a.id == b.id);
    CHECK(b.mean.x == doctest::Approx(a.mean.x).epsilon(1e-9));
    CHECK(b.mean.y == doctest::Approx(a.mean.y).epsilon(1e-9));
    CHECK(b.cov.xx == doctest::Approx(a.cov.xx).epsilon(1e-8));
    CHECK(b.cov.xy == doctest::Approx(a.cov.xy).epsilon(1e-8).scale(1.0));
    CHECK(b.cov.yy == doctest::Approx(a.cov.yy).epsilon(1e-8));
    CHECK(b.weight == doctest::Approx(a.weight).epsilon(1e-12));
  }
}

TEST_CASE("hard and soft priors reweight per-action clusters") {
  std::mt19937_64 rng(6);
  const auto poses = blobs(rng, {{-10, 0}, {10, 0}}, {30, 10}, 1.0);
  PairwiseFitOptions opt;
  opt.clusters = 2;
  opt.alpha = 0.5;
  const PairwiseStatistics st = fit_pairwise_statistics(poses, two_joints(), 2, opt);

  const PairwiseModel h = st.condition(ActionPrior::hard(2, 1));
  REQUIRE(h.edges[0].clusters.size() == 1);
  double mx = 0.0;
  for (int i = 30; i < 40; ++i) mx += (poses[i].pose.joints[1] - poses[i].pose.joints[0]).x;
  CHECK(h.edges[0].clusters[0].mean.x == doctest::Approx(mx / 10).epsilon(1e-12));
  CHECK(h.edges[0].clusters[0].weight == 1.0);

  const PairwiseModel s = st.condition(ActionPrior::soft({0.25, 0.75}));
  REQUIRE(s.edges[0].clusters.size() == 2);
  // Masses 0.25*30 = 7.5 and 0.75*10 = 7.5.
  for (const auto& c : s.edges[0].clusters) CHECK(c.weight == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(st.condition(ActionPrior::uniform(3)), std::invalid_argument);
}

TEST_CASE("pairwise statistics text round trip is exact") {
  std::mt19937_64 rng(7);
  const auto poses = blobs(rng, {{-3.3, 0.7}, {4.1, 2.9}, {0.2, 6.6}}, {20, 20, 20}, 1.3);
  PairwiseFitOptions opt;
  opt.clusters = 5;
  opt.alpha = 0.37;
  const PairwiseStatistics st = fit_pairwise_statistics(poses, two_joints(), 3, opt);
  const std::string text = pairwise_to_text(st);
  CHECK(pairwise_from_text(text) == st);
  CHECK(pairwise_from_text(text).condition(ActionPrior::soft({0.2, 0.3, 0.5})) ==
        st.condition(ActionPrior::soft({0.2, 0.3, 0.5})));
  CHECK_THROWS_AS(pairwise_from_text(text.substr(0, text.size() / 2)), FormatError);
  CHECK_THROWS_AS(pairwise_from_text(text + "moments 0 0 1 1 1 1 1 1\n"), FormatError);
  CHECK_THROWS_AS(pairwise_from_text("alpha x\n"), FormatError);
}

TEST_CASE("edge lookup by child") {
  std::mt19937_64 rng(8);
  const PairwiseModel m = acps::testing::random_pairwise(rng, KinematicTree::body(), 2);
  CHECK(m.edge_for_child(joint::l_hip).parent == joint::l_shoulder);
  CHECK_THROWS_AS(m.edge_for_child(joint::head), std::out_of_range);
}
