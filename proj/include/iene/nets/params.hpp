// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iene/ad/autodiff.hpp"

namespace iene::nets {

enum class OptimKind { kSgd, kAdam };

struct OptimSpec {
  OptimKind kind = OptimKind::kSgd;
  double lr = 0.01;
};

/// One named group of trainable arrays with its own optimizer state.
struct ParamGroup {
  std::string name;
  std::vector<Eigen::MatrixXd> arrays;
  OptimSpec optim;

  // Adam state, lazily sized.
  std::vector<Eigen::MatrixXd> moment1, moment2;
  std::int64_t step_count = 0;

  void reset_optimizer_state();
  /// Applies one optimizer step. `maximize` flips the gradient sign
  /// (gradient ascent for the adversarial player).
  void apply_gradients(const std::vector<Eigen::MatrixXd>& grads, bool maximize = false);
};

/// Insertion-ordered collection of parameter groups with named access.
class ParameterSet {
 public:
  ParamGroup& add_group(const std::string& name, OptimSpec optim);
  ParamGroup& group(const std::string& name);
  const ParamGroup& group(const std::string& name) const;
  bool has_group(const std::string& name) const;
  std::vector<std::string> group_names() const;
  std::size_t size() const { return groups_.size(); }
  ParamGroup& at(std::size_t i) { return groups_[i]; }
  const ParamGroup& at(std::size_t i) const { return groups_[i]; }

 private:
  std::vector<ParamGroup> groups_;
};

/// Binds parameter arrays to autodiff nodes for one objective evaluation.
/// The same array is always mapped to the same node, so a parameter reused
/// across several terms accumulates all of its gradient contributions.
/// Groups listed in `trainable` become leaves, everything else constants.
class Binder {
 public:
  Binder(ParameterSet& params, std::set<std::string> trainable)
      : params_(params), trainable_(std::move(trainable)) {}

  ad::Var operator()(const std::string& group, std::size_t index);

  /// Gradients for every array of `group` after backward(); zero for arrays
  /// that never participated in the objective.
  std::vector<Eigen::MatrixXd> grads(const std::string& group) const;

  ParameterSet& params() { return params_; }
  bool is_trainable(const std::string& group) const { return trainable_.count(group) > 0; }

 private:
  ParameterSet& params_;
  std::set<std::string> trainable_;
  std::map<std::pair<std::string, std::size_t>, ad::Var> bound_;
};

}  // namespace iene::nets
