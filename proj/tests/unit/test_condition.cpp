#include "doctest_torch.hpp"

#include <fstream>

#include "helpers.hpp"
#include "qscraft/condition.hpp"
#include "qscraft/error.hpp"

using namespace qscraft;
using condition::Keypoint;
using condition::PoseFrame;

namespace {

PoseFrame random_pose(int64_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PoseFrame p;
  for (int64_t k = 0; k < n; ++k) {
    p.points.push_back(rng() % 4 == 0 ? Keypoint::occluded() : Keypoint{u(rng), u(rng)});
  }
  return p;
}

}  // namespace

TEST_SUITE("condition") {
  TEST_CASE("pixel keypoints normalize by the frame size") {
    std::vector<condition::RawKeypoint> raw{{32, 16, false}};
    auto p = condition::normalize_keypoints(raw, 64, 64);
    CHECK(p.points[0].x == doctest::Approx(0.5));
    CHECK(p.points[0].y == doctest::Approx(0.25));
  }

  TEST_CASE("occluded keypoints become the (-1,-1) sentinel") {
    std::vector<condition::RawKeypoint> raw{{10, 10, true}, {5, 6, false}};
    auto p = condition::normalize_keypoints(raw, 64, 64);
    CHECK(p.points[0].x == -1.0);
    CHECK(p.points[0].y == -1.0);
    CHECK_FALSE(p.points[0].visible());
    CHECK(p.visible_count() == 1);
  }

  TEST_CASE("denormalize inverts normalize for visible points") {
    std::vector<condition::RawKeypoint> raw{{0, 0, false}, {13.5, 40.25, false}, {64, 48, false}};
    auto back = condition::denormalize_keypoints(condition::normalize_keypoints(raw, 64, 48), 64, 48);
    for (size_t i = 0; i < raw.size(); ++i) {
      CHECK(back[i].x == doctest::Approx(raw[i].x));
      CHECK(back[i].y == doctest::Approx(raw[i].y));
      CHECK_FALSE(back[i].occluded);
    }
  }

  TEST_CASE("out-of-range coordinates are rejected") {
    std::vector<condition::RawKeypoint> raw{{70, 10, false}};
    CHECK_THROWS_AS(condition::normalize_keypoints(raw, 64, 64), Error);
    PoseFrame half{{Keypoint{-1.0, 0.5}}};
    CHECK_THROWS_AS(half.validate(), Error);
    PoseFrame outside{{Keypoint{0.5, 1.5}}};
    CHECK_THROWS_AS(outside.validate(), Error);
  }

  TEST_CASE("pose encoder output is n x n_c and deterministic") {
    torch::manual_seed(31);
    condition::PoseEncoder enc(64, 128, 128);
    std::mt19937_64 rng(31);
    auto pose = random_pose(8, rng);
    auto a = condition::encode_pose(pose, enc);
    auto b = condition::encode_pose(pose, enc);
    CHECK(a.tokens.size(0) == 8);
    CHECK(a.tokens.size(1) == 128);
    CHECK(torch::equal(a.tokens, b.tokens));
    CHECK(torch::isfinite(a.tokens).all().item<bool>());
  }

  TEST_CASE("property: shape contract for any keypoint count") {
    std::mt19937_64 rng(32);
    condition::PoseEncoder enc(8, 12, 20);
    for (int64_t n = 1; n <= 17; n += 4) {
      auto c = condition::encode_pose(random_pose(n, rng), enc);
      CHECK(c.tokens.size(0) == n);
      CHECK(c.tokens.size(1) == 20);
    }
  }

  TEST_CASE("the MLP is shared across keypoints") {
    condition::PoseEncoder enc(8, 12, 20);
    PoseFrame p{{Keypoint{0.2, 0.3}, Keypoint{0.7, 0.1}, Keypoint{0.2, 0.3}}};
    auto c = condition::encode_pose(p, enc);
    CHECK(torch::equal(c.tokens[0], c.tokens[2]));
  }

  TEST_CASE("sentinel encoding differs from visible encodings") {
    torch::manual_seed(33);
    condition::PoseEncoder enc(64, 128, 32);
    std::mt19937_64 rng(33);
    PoseFrame p{{Keypoint::occluded()}};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 50; ++i) p.points.push_back(Keypoint{u(rng), u(rng)});
    auto c = condition::encode_pose(p, enc);
    for (int i = 1; i <= 50; ++i) CHECK((c.tokens[0] - c.tokens[i]).abs().max().item<double>() > 1e-6);
  }

  TEST_CASE("gradient of a scalar head w.r.t. the MLP weights matches finite differences") {
    torch::manual_seed(34);
    condition::PoseEncoder enc(6, 7, 5);
    enc->to(torch::kFloat64);
    auto pts = torch::tensor({0.1, 0.9, 0.4, 0.35, -1.0, -1.0, 0.8, 0.05}, torch::kFloat64).reshape({1, 4, 2});
    auto head = torch::randn({4, 5}, torch::kFloat64);
    auto loss = [&] { return (enc->forward(pts)[0] * head).sum(); };
    for (auto& p : enc->parameters()) CHECK(testing::grad_rel_error(loss, p) <= 1e-3);
  }

  TEST_CASE("pose file round trip, sorted by frame") {
    auto dir = testing::scratch_dir("poses");
    std::vector<PoseFrame> frames{PoseFrame{{Keypoint{0.25, 0.5}, Keypoint::occluded()}},
                                  PoseFrame{{Keypoint{1.0, 0.0}, Keypoint{0.125, 0.75}}}};
    condition::write_poses(dir / "p.json", frames);
    auto back = condition::read_poses(dir / "p.json");
    REQUIRE(back.size() == 2);
    for (size_t f = 0; f < 2; ++f) {
      for (size_t k = 0; k < 2; ++k) {
        CHECK(back[f].points[k].x == frames[f].points[k].x);
        CHECK(back[f].points[k].y == frames[f].points[k].y);
      }
    }
    auto j = nlohmann::json::parse(R"([{"frame":1,"points":[[0.5,0.5]]},{"frame":0,"points":[[-1,-1]]}])");
    auto sorted = condition::poses_from_json(j);
    CHECK_FALSE(sorted[0].points[0].visible());
    CHECK(sorted[1].points[0].x == 0.5);
  }

  TEST_CASE("malformed pose files are rejected") {
    CHECK_THROWS_AS(condition::poses_from_json(nlohmann::json::parse(R"({"frame":0})")), Error);
    CHECK_THROWS_AS(condition::poses_from_json(nlohmann::json::parse(R"([{"frame":0,"points":[[0.5]]}])")), Error);
    CHECK_THROWS_AS(
        condition::poses_from_json(nlohmann::json::parse(
            R"([{"frame":0,"points":[[0.5,0.5]]},{"frame":1,"points":[[0.5,0.5],[0.1,0.1]]}])")),
        Error);
    CHECK_THROWS_AS(condition::poses_from_json(nlohmann::json::parse(
                        R"([{"frame":2,"points":[[0.5,0.5]]},{"frame":2,"points":[[0.1,0.1]]}])")),
                    Error);
    CHECK_THROWS_AS(condition::read_poses("/nonexistent/poses.json"), Error);
  }
}
