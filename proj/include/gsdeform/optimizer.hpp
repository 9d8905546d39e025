#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsdeform/anchor_graph.hpp"
#include "gsdeform/objective.hpp"
#include "gsdeform/rigid_segmentation.hpp"

namespace gsdeform {

struct OptimizeConfig {
  double lr_q = 0.05;
  double lr_t = 0.01;
  // Rates decay exponentially to lr * lr_final_ratio at the last iteration.
  double lr_final_ratio = 1.0;
  int iterations = 2000;
  int refine_period = 100;  // R_f
  bool refine = true;
  LossWeights weights;
  RefineParams refinement;
  GroupLossOptions group_loss;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Stop when the total has not improved by a relative `min_improvement`
  // for `patience` steps. The window restarts after each refinement.
  int patience = 0;  // 0 disables early stopping
  // Stop as converged once the gradient norm falls below this.
  double grad_tolerance = 1e-9;
  double min_improvement = 1e-6;
  std::uint64_t seed = 0;
};

struct LossRecord {
  int iteration = 0;
  double deform = 0.0;
  double group = 0.0;
  double arap = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  int grouped = 0;  // Gaussians in some rigid group

  bool operator==(const LossRecord&) const = default;
};

enum class OptimizeStatus { kRunning, kCompleted, kConverged, kEarlyStopped, kNumericalFailure };

std::string to_string(OptimizeStatus status);

/// Incremental optimizer over the anchor variables. Each step evaluates the
/// objective at the current graph, records it and applies one adaptive-moment
/// update; groups are refined every refine_period steps.
class DeformationOptimizer {
 public:
  DeformationOptimizer(AnchorGraph graph, std::vector<Vec3> initial_positions,
                       std::vector<Quat> initial_rotations, GaussianPixelMatchSet g2p,
                       RigidGroupSet groups, Camera camera, OptimizeConfig config);

  /// Runs up to `n` steps (bounded by config.iterations). Returns the number
  /// performed. Stops early on early-stop or numerical failure; after a
  /// failure the graph is rolled back to the last finite evaluation.
  int step(int n);
  int run() { return step(config_.iterations); }

  /// Replaces the matches driving L_deform. Adaptive moments are kept.
  void set_matches(GaussianPixelMatchSet g2p);
  /// Replaces the rigid groups; Adam moments and history are kept.
  void set_groups(RigidGroupSet groups);
  /// Extends the iteration budget, e.g. for open-ended interactive sessions.
  void set_iteration_budget(int iterations) { config_.iterations = iterations; }

  const AnchorGraph& graph() const { return graph_; }
  const RigidGroupSet& groups() const { return groups_; }
  const std::vector<LossRecord>& history() const { return history_; }
  OptimizeStatus status() const { return status_; }
  const std::string& message() const { return message_; }
  int iteration() const { return iteration_; }
  const OptimizeConfig& config() const { return config_; }
  DeformationState state() const;

 private:
  void refine_now();

  AnchorGraph graph_;
  AnchorGraph last_valid_;
  std::vector<Vec3> mu_;
  std::vector<Quat> q_;
  GaussianPixelMatchSet g2p_;
  RigidGroupSet groups_;
  Camera camera_;
  OptimizeConfig config_;
  Eigen::VectorXd m_, v_;
  std::vector<LossRecord> history_;
  OptimizeStatus status_ = OptimizeStatus::kRunning;
  std::string message_;
  int iteration_ = 0;
  double best_total_ = 0.0;
  int best_iteration_ = 0;
};

struct OptimizeResult {
  AnchorGraph graph;
  RigidGroupSet groups;
  std::vector<LossRecord> history;
  OptimizeStatus status = OptimizeStatus::kCompleted;
  std::string message;
  DeformationState state;
};

OptimizeResult optimize(const AnchorGraph& graph, std::span<const Vec3> initial_positions,
                        std::span<const Quat> initial_rotations, const GaussianPixelMatchSet& g2p,
                        const RigidGroupSet& groups, const Camera& camera, const OptimizeConfig& config);

struct InterpolateConfig {
  int steps = 10;          // S phases, S + 1 snapshots
  double lambda0 = 1.0;    // lambda_inter in the first phase
  double decay = 0.9;      // per-phase factor on lambda_inter
  int inner_iterations = 30;
  double lr_q = 0.002;
  double lr_t = 0.0005;
  LossWeights regularizer;  // group / arap weights inside lambda_inter (deform ignored)
};

/// Ordered anchor graphs from `from` (first) to `to` (last).
using Trajectory = std::vector<AnchorGraph>;

/// Each phase s moves every anchor a fraction 1/(S - s + 1) of the remaining
/// way to the target (geodesic on rotations, linear on translations), then
/// takes gradient steps on lambda_s (L_group + L_arap), lambda_s =
/// lambda0 * decay^(s-1). The last phase lands on the target exactly.
Trajectory interpolate(const AnchorGraph& from, const AnchorGraph& to, std::span<const Vec3> initial_positions,
                       std::span<const Quat> initial_rotations, const RigidGroupSet& groups,
                       const InterpolateConfig& config);

/// Sum over anchors of |R_k - Rhat_k|_F + |T_k - That_k|.
double attraction_term(const AnchorGraph& graph, const AnchorGraph& target);

}  // namespace gsdeform
