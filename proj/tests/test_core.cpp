#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "acps/core.hpp"
#include "acps/errors.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace acps;

namespace {

FeatureStack random_stack(std::mt19937_64& rng, int w, int h, int c) {
  FeatureStack s(w, h, c);
  std::normal_distribution<float> n(0.0f, 10.0f);
  for (float& v : s.data()) v = n(rng);
  return s;
}

FormatError::Reason decode_reason(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_feature_stack(bytes);
  } catch (const FormatError& e) {
    return e.reason();
  }
  FAIL("decode did not throw");
  return FormatError::Reason::corrupt;
}

bool has_kind(const std::vector<TreeViolation>& v, TreeViolation::Kind k) {
  for (const auto& x : v) {
    if (x.kind == k) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("FSTK header layout is little-endian with a six byte magic") {
  FeatureStack s(2, 1, 1);
  s.at(0, 0, 0) = 1.0f;
  s.at(0, 0, 1) = -2.5f;
  const auto bytes = encode_feature_stack(s);
  const std::vector<std::uint8_t> expected = {
      'F', 'S', 'T', 'K', '1', 0,   // magic
      2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,
      0x00, 0x00, 0x80, 0x3f,       // 1.0f
      0x00, 0x00, 0x20, 0xc0};      // -2.5f
  CHECK(bytes == expected);
}

TEST_CASE("FSTK 4x4x2 save/load is bit-exact") {
  std::mt19937_64 rng(1);
  const FeatureStack s = random_stack(rng, 4, 4, 2);
  const auto path = std::filesystem::temp_directory_path() / "acps_core_roundtrip.fstk";
  save_feature_stack(path, s);
  const FeatureStack t = load_feature_stack(path);
  std::filesystem::remove(path);
  REQUIRE(t.width() == 4);
  REQUIRE(t.channels() == 2);
  CHECK(std::memcmp(s.data().data(), t.data().data(), s.data().size() * sizeof(float)) == 0);
}

TEST_CASE("FSTK load errors are distinct") {
  std::mt19937_64 rng(2);
  const auto good = encode_feature_stack(random_stack(rng, 3, 3, 2));

  auto magic = good;
  magic[0] = 'G';
  CHECK(decode_reason(magic) == FormatError::Reason::bad_magic);

  auto short_payload = good;
  short_payload.resize(short_payload.size() - 4);
  CHECK(decode_reason(short_payload) == FormatError::Reason::truncated);

  auto header_only = good;
  header_only.resize(10);
  CHECK(decode_reason(header_only) == FormatError::Reason::truncated);

  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 18, &q, 4);
  CHECK(decode_reason(nan) == FormatError::Reason::non_finite);

  auto inf = good;
  const float i = INFINITY;
  std::memcpy(inf.data() + 22, &i, 4);
  CHECK(decode_reason(inf) == FormatError::Reason::non_finite);

  CHECK_THROWS_AS(load_feature_stack("/nonexistent/acps.fstk"), std::runtime_error);
}

TEST_CASE("FSTK round-trip property over random shapes") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 9);
  for (int i = 0; i < 200; ++i) {
    const FeatureStack s = random_stack(rng, dim(rng), dim(rng), dim(rng));
    const FeatureStack t = decode_feature_stack(encode_feature_stack(s));
    CHECK(t == s);
  }
}

TEST_CASE("pyramid level sizes follow round(dim * factor^i)") {
  FeatureStack s(100, 100, 1);
  const ScalePyramid p = build_pyramid(s, 4, 0.8);
  REQUIRE(p.count() == 4);
  const int widths[] = {100, 80, 64, 51};
  for (int i = 0; i < 4; ++i) {
    CHECK(p.levels[i].width() == widths[i]);
    CHECK(p.levels[i].height() == widths[i]);
    CHECK(p.levels[i].scale_factor() == std::pow(0.8, i));
  }
}

TEST_CASE("pyramid with one level is the input") {
  std::mt19937_64 rng(4);
  const FeatureStack s = random_stack(rng, 12, 9, 3);
  const ScalePyramid p = build_pyramid(s, 1, 0.8);
  REQUIRE(p.count() == 1);
  CHECK(p.levels[0] == s);
}

TEST_CASE("bilinear resampling preserves constant channels") {
  FeatureStack s(31, 17, 2);
  for (int y = 0; y < 17; ++y) {
    for (int x = 0; x < 31; ++x) {
      s.at(0, y, x) = 3.25f;
      s.at(1, y, x) = -1.5f;
    }
  }
  const ScalePyramid pyr = build_pyramid(s, 3, 0.7);
  for (const auto& level : pyr.levels) {
    for (int y = 0; y < level.height(); ++y) {
      for (int x = 0; x < level.width(); ++x) {
        CHECK(level.at(0, y, x) == doctest::Approx(3.25f).epsilon(1e-6));
        CHECK(level.at(1, y, x) == doctest::Approx(-1.5f).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("pyramid rejects levels under 8 px and names the level") {
  FeatureStack s(12, 40, 1);
  try {
    build_pyramid(s, 4, 0.8);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("level 3") != std::string::npos);
  }
  CHECK_THROWS_AS(build_pyramid(s, 0, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(build_pyramid(s, 2, 1.0), std::invalid_argument);
}

TEST_CASE("body tree is valid and rooted at the head") {
  const KinematicTree t = KinematicTree::body();
  CHECK(t.joint_count() == 13);
  CHECK(t.edges.size() == 12);
  CHECK(t.root == joint::head);
  CHECK(validate_tree(t).empty());
  const TreeTopology topo(t);
  CHECK(topo.parent(joint::l_hip) == joint::l_shoulder);
  CHECK(topo.parent(joint::r_hip) == joint::r_shoulder);
  CHECK(topo.top_down().front() == joint::head);
}

TEST_CASE("validate_tree reports cycles, multiple parents and disconnection") {
  KinematicTree t;
  t.joints = {"a", "b", "c"};
  t.root = 0;

  t.edges = {{1, 2}, {2, 1}};
  CHECK(has_kind(validate_tree(t), TreeViolation::Kind::cycle));

  t.edges = {{1, 0}, {1, 2}};
  CHECK(has_kind(validate_tree(t), TreeViolation::Kind::multi_parent));

  t.edges = {{1, 0}};
  CHECK_FALSE(validate_tree(t).empty());

  t.edges = {{1, 0}, {2, 1}};
  CHECK(validate_tree(t).empty());
  CHECK_THROWS_AS(TreeTopology(KinematicTree{{"a", "b"}, {{1, 1}}, 0}), std::invalid_argument);
}

TEST_CASE("validate_tree agrees with TreeTopology on random edge lists") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    std::uniform_int_distribution<int> jd(1, 6);
    const int J = jd(rng);
    KinematicTree t;
    for (int j = 0; j < J; ++j) t.joints.push_back("j" + std::to_string(j));
    std::uniform_int_distribution<int> pick(0, J - 1), count(0, J);
    t.root = pick(rng);
    const int E = count(rng);
    for (int e = 0; e < E; ++e) t.edges.push_back({pick(rng), pick(rng)});
    bool built = true;
    try {
      TreeTopology topo(t);
    } catch (const std::invalid_argument&) {
      built = false;
    }
    CHECK(built == validate_tree(t).empty());
  }
}

TEST_CASE("action prior constructors enforce their invariants") {
  const ActionPrior u = ActionPrior::uniform(4);
  CHECK(u.probs == std::vector<double>(4, 0.25));
  const ActionPrior h = ActionPrior::hard(3, 1);
  CHECK(h.probs == std::vector<double>{0, 1, 0});
  CHECK(h.argmax() == 1);
  CHECK(ActionPrior::soft({0.3, 0.7}).argmax() == 1);
  CHECK(ActionPrior::soft({0.5, 0.5}).argmax() == 0);
  CHECK_THROWS_AS(ActionPrior::soft({0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(ActionPrior::soft({-0.1, 1.1}), std::invalid_argument);
  CHECK_THROWS_AS(ActionPrior::hard(2, 2), std::invalid_argument);
}

TEST_CASE("person size is half the bounding-box diagonal") {
  Pose p;
  p.joints.assign(kBodyJoints, Point2{10, 10});
  p.joints[3] = {16, 10};
  p.joints[7] = {10, 18};
  CHECK(person_size_from_pose(p) == doctest::Approx(5.0));
}

TEST_CASE("annotation JSON round-trip and validation") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 50);
  VideoAnnotation a;
  a.action = 1;
  a.action_name = "wave";
  for (int f = 0; f < 3; ++f) {
    Pose p;
    p.frame_index = f;
    for (int j = 0; j < kBodyJoints; ++j) p.joints.push_back({u(rng), u(rng)});
    a.person_size.push_back(person_size_from_pose(p));
    a.frames.push_back(p);
  }
  const VideoAnnotation b = annotation_from_json(annotation_to_json(a));
  CHECK(b.action == 1);
  CHECK(b.action_name == "wave");
  REQUIRE(b.frames.size() == 3);
  for (int f = 0; f < 3; ++f) {
    CHECK(b.person_size[f] == a.person_size[f]);
    for (int j = 0; j < kBodyJoints; ++j) {
      CHECK(b.frames[f].joints[j].x == a.frames[f].joints[j].x);
      CHECK(b.frames[f].joints[j].y == a.frames[f].joints[j].y);
    }
  }
  CHECK_THROWS_AS(annotation_from_json("{not json"), FormatError);
  std::string bad = annotation_to_json(a);
  bad.replace(bad.find("l-elbow"), 7, "l-elbox");
  CHECK_THROWS_AS(annotation_from_json(bad), FormatError);
}
