#include "gsdeform/deformation_state.hpp"

#include <map>

#include "gsdeform/error.hpp"

namespace gsdeform {

DeformationState DeformationState::at_rest(const GaussianSet& gaussians) {
  DeformationState s;
  s.initial_positions = gsdeform::positions(gaussians);
  s.initial_rotations.reserve(gaussians.size());
  for (const auto& g : gaussians) s.initial_rotations.push_back(normalized(g.q));
  s.positions = s.initial_positions;
  s.rotations = s.initial_rotations;
  return s;
}

GaussianSet DeformationState::apply_to(const GaussianSet& gaussians) const {
  if (gaussians.size() != size()) {
    throw Error(ErrorCode::kInvalidInput, "deformation state and Gaussian set differ in size");
  }
  GaussianSet out = gaussians;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mu = positions[i];
    out[i].q = rotations[i];
  }
  return out;
}

std::vector<int> RigidGroupSet::labels() const {
  std::vector<int> out(gaussian_count, -1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int id : groups[g]) out[static_cast<std::size_t>(id)] = static_cast<int>(g);
  }
  return out;
}

std::vector<int> RigidGroupSet::ungrouped() const {
  const auto lab = labels();
  std::vector<int> out;
  for (std::size_t i = 0; i < lab.size(); ++i) {
    if (lab[i] < 0) out.push_back(static_cast<int>(i));
  }
  return out;
}

bool RigidGroupSet::ids_valid() const {
  for (const auto& g : groups) {
    for (int id : g) {
      if (id < 0 || static_cast<std::size_t>(id) >= gaussian_count) return false;
    }
  }
  return true;
}

bool RigidGroupSet::is_disjoint() const {
  if (!ids_valid()) return false;
  std::vector<char> seen(gaussian_count, 0);
  for (const auto& g : groups) {
    for (int id : g) {
      if (seen[static_cast<std::size_t>(id)]) return false;
      seen[static_cast<std::size_t>(id)] = 1;
    }
  }
  return true;
}

RigidGroupSet RigidGroupSet::from_labels(std::span<const int> labels) {
  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) by_label[labels[i]].push_back(static_cast<int>(i));
  }
  RigidGroupSet set;
  set.gaussian_count = labels.size();
  for (auto& [label, members] : by_label) {
    set.groups.push_back(std::move(members));
    set.transforms.push_back(RigidTransform::identity());
  }
  return set;
}

}  // namespace gsdeform
