#include "gsdeform/optimizer.hpp"

#include <cmath>

#include "gsdeform/error.hpp"

namespace gsdeform {
namespace {

struct Adam {
  Eigen::VectorXd m, v;
  int t = 0;

  explicit Adam(std::size_t anchors) : m(Eigen::VectorXd::Zero(7 * anchors)), v(Eigen::VectorXd::Zero(7 * anchors)) {}

  void update(AnchorGraph& g, const Eigen::VectorXd& grad, double lr_q, double lr_t, double b1, double b2,
              double eps) {
    ++t;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1 - std::pow(b1, t);
    const double c2 = 1 - std::pow(b2, t);
    for (std::size_t a = 0; a < g.anchor_count(); ++a) {
      Eigen::Vector4d step;
      for (int c = 0; c < 7; ++c) {
        const std::size_t i = 7 * a + c;
        const double s = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        if (c < 4) {
          step[c] = lr_q * s;
        } else {
          g.translations[a][c - 4] -= lr_t * s;
        }
      }
      const Eigen::Vector4d q = g.rotations[a].coeffs() - step;
      g.rotations[a] = q.norm() > 0 ? Quat::from_coeffs(q / q.norm()) : g.rotations[a];
    }
  }
};

void check_config(const OptimizeConfig& c) {
  if (!(c.lr_q > 0) || !(c.lr_t > 0)) throw Error(ErrorCode::kInvalidInput, "learning rates must be positive");
  if (c.iterations < 1) throw Error(ErrorCode::kInvalidInput, "iterations must be >= 1");
  if (c.refine_period < 1) throw Error(ErrorCode::kInvalidInput, "refine_period must be >= 1");
  if (!(c.lr_final_ratio > 0)) throw Error(ErrorCode::kInvalidInput, "lr_final_ratio must be positive");
  if (c.weights.rgb != 0.0) throw Error(ErrorCode::kInvalidInput, "photometric weight must be 0");
}

}  // namespace

std::string to_string(OptimizeStatus s) {
  switch (s) {
    case OptimizeStatus::kRunning: return "running";
    case OptimizeStatus::kCompleted: return "completed";
    case OptimizeStatus::kConverged: return "converged";
    case OptimizeStatus::kEarlyStopped: return "early-stopped";
    case OptimizeStatus::kNumericalFailure: return "numerical-failure";
  }
  return "unknown";
}

DeformationOptimizer::DeformationOptimizer(AnchorGraph graph, std::vector<Vec3> initial_positions,
                                           std::vector<Quat> initial_rotations, GaussianPixelMatchSet g2p,
                                           RigidGroupSet groups, Camera camera, OptimizeConfig config)
    : graph_(std::move(graph)),
      mu_(std::move(initial_positions)),
      q_(std::move(initial_rotations)),
      g2p_(std::move(g2p)),
      groups_(std::move(groups)),
      camera_(std::move(camera)),
      config_(std::move(config)) {
  check_config(config_);
  if (graph_.gaussian_count() != mu_.size() || q_.size() != mu_.size()) {
    throw Error(ErrorCode::kInvalidInput, "anchor graph, positions and rotations differ in size");
  }
  if (groups_.gaussian_count == 0) groups_.gaussian_count = mu_.size();
  if (groups_.gaussian_count != mu_.size() || !groups_.is_disjoint()) {
    throw Error(ErrorCode::kInvalidInput, "rigid groups do not fit the Gaussian set");
  }
  last_valid_ = graph_;
  m_ = Eigen::VectorXd::Zero(7 * graph_.anchor_count());
  v_ = m_;
}

void DeformationOptimizer::set_matches(GaussianPixelMatchSet g2p) {
  g2p_ = std::move(g2p);
  if (status_ != OptimizeStatus::kNumericalFailure) {
    status_ = OptimizeStatus::kRunning;
  }
  best_iteration_ = iteration_;
  best_total_ = 0.0;
}

void DeformationOptimizer::set_groups(RigidGroupSet groups) {
  if (groups.gaussian_count == 0) groups.gaussian_count = mu_.size();
  if (groups.gaussian_count != mu_.size() || !groups.is_disjoint()) {
    throw Error(ErrorCode::kInvalidInput, "rigid groups do not fit the Gaussian set");
  }
  groups_ = std::move(groups);
  best_iteration_ = iteration_;
}

DeformationState DeformationOptimizer::state() const { return blend(graph_, mu_, q_); }

void DeformationOptimizer::refine_now() {
  const DeformationState st = blend(graph_, mu_, q_);
  groups_ = refine_groups(groups_, st, config_.refinement);
  if (!groups_.is_disjoint()) {
    throw Error(ErrorCode::kNumericalFailure, "refinement produced overlapping groups");
  }
}

int DeformationOptimizer::step(int n) {
  if (status_ == OptimizeStatus::kNumericalFailure) return 0;
  if (status_ != OptimizeStatus::kRunning && iteration_ < config_.iterations) status_ = OptimizeStatus::kRunning;
  Adam adam(graph_.anchor_count());
  adam.m = m_;
  adam.v = v_;
  adam.t = iteration_;
  int done = 0;
  while (done < n && iteration_ < config_.iterations) {
    LossReport rep;
    try {
      rep = total_loss_and_grad(graph_, mu_, q_, g2p_, groups_, camera_, config_.weights, config_.group_loss);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumericalFailure && e.code() != ErrorCode::kDegenerateBlend) throw;
      graph_ = last_valid_;
      status_ = OptimizeStatus::kNumericalFailure;
      message_ = e.what();
      break;
    }
    last_valid_ = graph_;
    LossRecord rec{iteration_, rep.deform, rep.group, rep.arap, rep.total, rep.grad_norm(), 0};
    for (const auto& g : groups_.groups) rec.grouped += static_cast<int>(g.size());
    history_.push_back(rec);

    if (iteration_ == best_iteration_ || rep.total < best_total_ * (1.0 - config_.min_improvement)) {
      best_total_ = rep.total;
      best_iteration_ = iteration_;
    }
    if (rec.grad_norm < config_.grad_tolerance) {
      status_ = OptimizeStatus::kConverged;
      message_ = "gradient norm below tolerance";
      break;
    }
    if (config_.patience > 0 && iteration_ - best_iteration_ >= config_.patience) {
      status_ = OptimizeStatus::kEarlyStopped;
      message_ = "no improvement in " + std::to_string(config_.patience) + " steps";
      break;
    }

    const double progress = static_cast<double>(iteration_) / std::max(1, config_.iterations - 1);
    const double scale = std::pow(config_.lr_final_ratio, progress);
    adam.update(graph_, rep.flat_gradient(), config_.lr_q * scale, config_.lr_t * scale, config_.beta1,
                config_.beta2, config_.adam_epsilon);
    ++iteration_;
    ++done;
    if (config_.refine && iteration_ % config_.refine_period == 0 && !groups_.empty()) {
      refine_now();
      best_iteration_ = iteration_;
    }
  }
  m_ = adam.m;
  v_ = adam.v;
  if (status_ == OptimizeStatus::kRunning && iteration_ >= config_.iterations) status_ = OptimizeStatus::kCompleted;
  return done;
}

OptimizeResult optimize(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                        std::span<const Quat> initial_rotations, const GaussianPixelMatchSet& g2p,
                        const RigidGroupSet& groups, const Camera& camera, const OptimizeConfig& config) {
  if (g2p.empty()) throw Error(ErrorCode::kNoCorrespondence, "optimize needs at least one match");
  DeformationOptimizer opt(graph, {initial_positions.begin(), initial_positions.end()},
                           {initial_rotations.begin(), initial_rotations.end()}, g2p, groups, camera, config);
  opt.run();
  OptimizeResult res;
  res.graph = opt.graph();
  res.groups = opt.groups();
  res.history = opt.history();
  res.status = opt.status();
  res.message = opt.message();
  res.state = opt.state();
  return res;
}

double attraction_term(const AnchorGraph& graph, const AnchorGraph& target) {
  if (!graph.same_topology(target)) throw Error(ErrorCode::kInvalidInput, "anchor graphs differ in topology");
  double sum = 0.0;
  for (std::size_t a = 0; a < graph.anchor_count(); ++a) {
    sum += (quat_to_rot(graph.rotations[a]) - quat_to_rot(target.rotations[a])).norm();
    sum += (graph.translations[a] - target.translations[a]).norm();
  }
  return sum;
}

Trajectory interpolate(const AnchorGraph& from, const AnchorGraph& to, std::span<const Vec3> initial_positions,
                       std::span<const Quat> initial_rotations, const RigidGroupSet& groups,
                       const InterpolateConfig& config) {
  if (!from.same_topology(to)) throw Error(ErrorCode::kInvalidInput, "anchor graphs differ in topology");
  if (config.steps < 1) throw Error(ErrorCode::kInvalidInput, "interpolation needs >= 1 step");
  if (config.inner_iterations < 0 || config.lambda0 < 0 || config.decay < 0) {
    throw Error(ErrorCode::kInvalidInput, "invalid interpolation schedule");
  }
  Trajectory traj{from};
  AnchorGraph cur = from;
  const GaussianPixelMatchSet no_matches;
  const Camera unused;
  double lambda = config.lambda0;
  for (int s = 1; s <= config.steps; ++s) {
    const double alpha = 1.0 / (config.steps - s + 1);
    for (std::size_t a = 0; a < cur.anchor_count(); ++a) {
      if (s == config.steps) {
        cur.rotations[a] = to.rotations[a];
        cur.translations[a] = to.translations[a];
        continue;
      }
      const Quat c = normalized(cur.rotations[a]), t = normalized(to.rotations[a]);
      const Eigen::Quaterniond r =
          Eigen::Quaterniond(c.w, c.x, c.y, c.z).slerp(alpha, Eigen::Quaterniond(t.w, t.x, t.y, t.z));
      cur.rotations[a] = Quat{r.w(), r.x(), r.y(), r.z()};
      cur.translations[a] += alpha * (to.translations[a] - cur.translations[a]);
    }
    if (s < config.steps && lambda > 0 && config.inner_iterations > 0) {
      const LossWeights w{0.0, lambda * config.regularizer.group, lambda * config.regularizer.arap, 0.0};
      Adam adam(cur.anchor_count());
      for (int it = 0; it < config.inner_iterations; ++it) {
        const LossReport rep =
            total_loss_and_grad(cur, initial_positions, initial_rotations, no_matches, groups, unused, w);
        adam.update(cur, rep.flat_gradient(), config.lr_q, config.lr_t, 0.9, 0.999, 1e-8);
      }
    }
    traj.push_back(cur);
    lambda *= config.decay;
  }
  return traj;
}

}  // namespace gsdeform
