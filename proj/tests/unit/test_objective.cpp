#include <cmath>
#include <random>

#include "doctest.h"
#include "gsdeform/error.hpp"
#include "gsdeform/objective.hpp"
#include "test_util.hpp"

using namespace gsdeform;
using gsdeform::testing::random_quat;
using gsdeform::testing::random_vec;
using gsdeform::testing::simple_camera;

namespace {

// Straight double loop over ordered pairs, rotations inverted explicitly.
double oracle_group(const DeformationState& s, const RigidGroupSet& groups) {
  double total = 0.0;
  for (const auto& g : groups.groups) {
    for (int i : g) {
      const Mat3 ri = quat_to_rot(s.initial_rotations[i]).inverse();
      const Mat3 rpi = quat_to_rot(s.rotations[i]).inverse();
      for (int j : g) {
        if (i == j) continue;
        total += (ri * (s.initial_positions[i] - s.initial_positions[j]) -
                  rpi * (s.positions[i] - s.positions[j]))
                     .squaredNorm();
      }
    }
  }
  return total;
}

double oracle_deform(const DeformationState& s, const GaussianPixelMatchSet& m, const Camera& c) {
  double total = 0.0;
  for (const auto& x : m) {
    total += x.confidence * (gsdeform::testing::oracle_project(c, s.positions[x.gaussian_id]) - x.target).squaredNorm();
  }
  return total;
}

struct Instance {
  std::vector<Vec3> mu;
  std::vector<Quat> q;
  AnchorGraph graph;
  GaussianPixelMatchSet g2p;
  RigidGroupSet groups;
  Camera camera;
};

Instance random_instance(std::uint64_t seed, int n = 20, int anchors = 4) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.camera = simple_camera(100.0, 0.0, 0.0);
  for (int i = 0; i < n; ++i) {
    in.mu.push_back(random_vec(rng, -0.5, 0.5) + Vec3(0, 0, 3));
    in.q.push_back(random_quat(rng));
  }
  for (int a = 0; a < anchors; ++a) in.graph.positions.push_back(random_vec(rng, -0.5, 0.5) + Vec3(0, 0, 3));
  in.graph.reset_motion();
  in.graph.blend = compute_weights(in.mu, in.graph.positions, std::min(anchors, 3));
  in.graph.neighbors = anchor_neighbors(in.graph.positions, 2);
  for (int a = 0; a < anchors; ++a) {
    const Quat r = quat_from_axis_angle(random_vec(rng).normalized(), 0.4 * (rng() % 1000) / 1000.0);
    std::uniform_real_distribution<double> scale(0.7, 1.3);
    const double s = scale(rng);
    in.graph.rotations[a] = Quat{s * r.w, s * r.x, s * r.y, s * r.z};
    in.graph.translations[a] = 0.1 * random_vec(rng);
  }
  std::uniform_real_distribution<double> conf(0.2, 1.0);
  for (int i = 0; i < n; i += 2) {
    const Vec2 px = gsdeform::testing::oracle_project(in.camera, in.mu[i]);
    in.g2p.push_back({i, px + Vec2(random_vec(rng).head<2>() * 5.0), conf(rng)});
  }
  std::vector<int> labels(n, -1);
  for (int i = 0; i < n; ++i) labels[i] = i < 8 ? 0 : (i < 14 ? 1 : -1);
  in.groups = RigidGroupSet::from_labels(labels);
  return in;
}

double eval_total(const Instance& in, const AnchorGraph& g, const LossWeights& w, const GroupLossOptions& o) {
  return total_loss_and_grad(g, in.mu, in.q, in.g2p, in.groups, in.camera, w, o).total;
}

// Central differences over every raw anchor variable; returns max abs error
// relative to the largest gradient component.
double fd_relative_error(const Instance& in, const LossWeights& w, const GroupLossOptions& o) {
  const LossReport rep = total_loss_and_grad(in.graph, in.mu, in.q, in.g2p, in.groups, in.camera, w, o);
  const Eigen::VectorXd analytic = rep.flat_gradient();
  Eigen::VectorXd numeric(analytic.size());
  const double h = 1e-5;
  for (std::size_t a = 0; a < in.graph.anchor_count(); ++a) {
    for (int c = 0; c < 7; ++c) {
      AnchorGraph plus = in.graph, minus = in.graph;
      if (c < 4) {
        Eigen::Vector4d qp = plus.rotations[a].coeffs(), qm = minus.rotations[a].coeffs();
        qp[c] += h;
        qm[c] -= h;
        plus.rotations[a] = Quat::from_coeffs(qp);
        minus.rotations[a] = Quat::from_coeffs(qm);
      } else {
        plus.translations[a][c - 4] += h;
        minus.translations[a][c - 4] -= h;
      }
      numeric[7 * a + c] = (eval_total(in, plus, w, o) - eval_total(in, minus, w, o)) / (2 * h);
    }
  }
  return (numeric - analytic).cwiseAbs().maxCoeff() / std::max(analytic.cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace

TEST_CASE("loss_deform examples") {
  const Camera cam = simple_camera(100.0, 0.0, 0.0);
  DeformationState s;
  s.initial_positions = s.positions = {{0, 0, 2}};
  s.initial_rotations = s.rotations = {Quat::identity()};
  CHECK(loss_deform(s, {{0, {0, 0}, 1.0}}, cam) == 0.0);
  CHECK(loss_deform(s, {{0, {3, 4}, 1.0}}, cam) == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(loss_deform(s, {{0, {3, 4}, 0.5}}, cam) == doctest::Approx(12.5).epsilon(1e-12));

  SUBCASE("behind camera is skipped and counted") {
    s.positions = {{0, 0, -1}};
    int skipped = 0;
    CHECK(loss_deform(s, {{0, {3, 4}, 1.0}}, cam, &skipped) == 0.0);
    CHECK(skipped == 1);
  }
  SUBCASE("random matches equal loop sum") {
    std::mt19937_64 rng(2);
    DeformationState r;
    GaussianPixelMatchSet m;
    for (int i = 0; i < 10; ++i) {
      r.initial_positions.push_back(random_vec(rng) + Vec3(0, 0, 4));
      r.initial_rotations.push_back(Quat::identity());
      m.push_back({i, random_vec(rng).head<2>() * 50.0, 0.1 * (i + 1)});
    }
    r.positions = r.initial_positions;
    r.rotations = r.initial_rotations;
    const Camera c2 = simple_camera(300.0, 320.0, 240.0);
    CHECK(loss_deform(r, m, c2) == doctest::Approx(oracle_deform(r, m, c2)).epsilon(1e-12));
  }
}

TEST_CASE("loss_group examples") {
  std::mt19937_64 rng(4);
  DeformationState s;
  for (int i = 0; i < 5; ++i) {
    s.initial_positions.push_back(random_vec(rng));
    s.initial_rotations.push_back(Quat::identity());
  }
  s.positions = s.initial_positions;
  s.rotations = s.initial_rotations;
  const auto groups = RigidGroupSet::from_labels(std::vector<int>{0, 0, 0, 0, 0});
  CHECK(loss_group(s, groups) == doctest::Approx(0.0));

  s.positions[2] += Vec3(1, 0, 0);
  CHECK(oracle_group(s, groups) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(loss_group(s, groups) == doctest::Approx(8.0).epsilon(1e-12));

  SUBCASE("shared rigid motion cancels") {
    DeformationState r;
    const Quat qg = random_quat(rng);
    const Vec3 t = random_vec(rng);
    for (int i = 0; i < 30; ++i) {
      r.initial_positions.push_back(random_vec(rng));
      r.initial_rotations.push_back(random_quat(rng));
      r.positions.push_back(quat_to_rot(qg) * r.initial_positions.back() + t);
      r.rotations.push_back(quat_compose(qg, r.initial_rotations.back()));
    }
    const auto all = RigidGroupSet::from_labels(std::vector<int>(30, 0));
    CHECK(std::abs(loss_group(r, all)) < 1e-10);
  }
  SUBCASE("moments match the pair loop on random states") {
    for (int trial = 0; trial < 10; ++trial) {
      DeformationState r;
      std::vector<int> labels;
      for (int i = 0; i < 40; ++i) {
        r.initial_positions.push_back(random_vec(rng));
        r.initial_rotations.push_back(random_quat(rng));
        r.positions.push_back(random_vec(rng));
        r.rotations.push_back(random_quat(rng));
        labels.push_back(static_cast<int>(rng() % 4) - 1);
      }
      const auto gs = RigidGroupSet::from_labels(labels);
      CHECK(loss_group(r, gs) == doctest::Approx(oracle_group(r, gs)).epsilon(1e-10));
    }
  }
  SUBCASE("sampled estimate is unbiased") {
    DeformationState r;
    for (int i = 0; i < 100; ++i) {
      r.initial_positions.push_back(random_vec(rng));
      r.initial_rotations.push_back(random_quat(rng));
      r.positions.push_back(r.initial_positions.back() + 0.2 * random_vec(rng));
      r.rotations.push_back(quat_compose(quat_from_axis_angle(Vec3::UnitX(), 0.1), r.initial_rotations.back()));
    }
    const auto gs = RigidGroupSet::from_labels(std::vector<int>(100, 0));
    const double exact = loss_group(r, gs);
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) mean += loss_group(r, gs, {200, seed});
    mean /= 1000.0;
    CHECK(std::abs(mean - exact) / exact < 0.02);
    // Groups with few enough pairs stay exact.
    CHECK(loss_group(r, gs, {9900, 1}) == doctest::Approx(exact).epsilon(1e-12));
  }
}

TEST_CASE("loss_arap examples") {
  std::mt19937_64 rng(6);
  AnchorGraph g;
  for (int i = 0; i < 12; ++i) g.positions.push_back(random_vec(rng));
  g.reset_motion();
  g.neighbors = anchor_neighbors(g.positions, 4);
  CHECK(loss_arap(g) == 0.0);
  const Vec3 t = random_vec(rng);
  for (auto& x : g.translations) x = t;
  CHECK(loss_arap(g) < 1e-24);
  const Quat qr = random_quat(rng);
  for (std::size_t k = 0; k < g.anchor_count(); ++k) {
    g.rotations[k] = qr;
    g.translations[k] = quat_to_rot(qr) * g.positions[k] - g.positions[k];
  }
  CHECK(loss_arap(g) < 1e-20);
  g.translations[3] += Vec3(0.5, 0, 0);
  CHECK(loss_arap(g) > 0.1);
}

TEST_CASE("total loss null case and weighting") {
  Instance in = random_instance(9);
  in.graph.reset_motion();
  for (auto& m : in.g2p) m.target = gsdeform::testing::oracle_project(in.camera, in.mu[m.gaussian_id]);
  const LossReport rep = total_loss_and_grad(in.graph, in.mu, in.q, in.g2p, in.groups, in.camera, {});
  CHECK(rep.total < 1e-20);
  CHECK(rep.grad_norm() < 1e-8);

  Instance moved = random_instance(10);
  const DeformationState st = blend(moved.graph, moved.mu, moved.q);
  const LossReport only_deform =
      total_loss_and_grad(moved.graph, moved.mu, moved.q, moved.g2p, moved.groups, moved.camera, {1, 0, 0, 0});
  CHECK(only_deform.total == doctest::Approx(loss_deform(st, moved.g2p, moved.camera)).epsilon(1e-12));

  const LossWeights w{0.7, 1.3, 0.4, 0};
  const LossReport a = total_loss_and_grad(moved.graph, moved.mu, moved.q, moved.g2p, moved.groups, moved.camera, w);
  const LossReport b = total_loss_and_grad(moved.graph, moved.mu, moved.q, moved.g2p, moved.groups, moved.camera,
                                           {1.4, 2.6, 0.8, 0});
  CHECK(b.total == doctest::Approx(2 * a.total).epsilon(1e-12));
  CHECK(std::abs(a.total - (0.7 * a.deform + 1.3 * a.group + 0.4 * a.arap)) < 1e-9);
  CHECK(a.group == doctest::Approx(oracle_group(st, moved.groups)).epsilon(1e-9));
  CHECK(a.arap == doctest::Approx(loss_arap(moved.graph)).epsilon(1e-12));
}

TEST_CASE("gradient matches central differences") {
  double worst = 0.0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const Instance in = random_instance(seed);
    worst = std::max(worst, fd_relative_error(in, {}, {}));
    worst = std::max(worst, fd_relative_error(in, {0, 1, 0, 0}, {}));
    worst = std::max(worst, fd_relative_error(in, {0, 0, 1, 0}, {}));
  }
  CHECK(worst < 1e-4);

  SUBCASE("sampled group loss") {
    const Instance in = random_instance(77);
    CHECK(fd_relative_error(in, {0, 1, 0, 0}, {10, 3}) < 1e-4);
  }
}

TEST_CASE("rotation gradient on a matrix dot product") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const Quat q = random_quat(rng);
    Mat3 g = Mat3::Random();
    const Eigen::Vector4d an = rotation_matrix_grad_to_quat(q, g);
    for (int c = 0; c < 4; ++c) {
      Eigen::Vector4d p = q.coeffs(), m = q.coeffs();
      p[c] += 1e-6;
      m[c] -= 1e-6;
      // Unnormalized rotation formula so the derivative is the raw one.
      auto raw = [](const Eigen::Vector4d& v) {
        const double w = v[0], x = v[1], y = v[2], z = v[3];
        Mat3 r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y), 2 * (x * y + w * z),
            1 - 2 * (x * x + z * z), 2 * (y * z - w * x), 2 * (x * z - w * y), 2 * (y * z + w * x),
            1 - 2 * (x * x + y * y);
        return r;
      };
      const double fd = ((raw(p).cwiseProduct(g)).sum() - (raw(m).cwiseProduct(g)).sum()) / 2e-6;
      CHECK(an[c] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("non-finite input raises numerical failure") {
  Instance in = random_instance(5);
  in.graph.translations[0] = Vec3(std::nan(""), 0, 0);
  try {
    total_loss_and_grad(in.graph, in.mu, in.q, in.g2p, in.groups, in.camera, {});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumericalFailure);
  }
}
