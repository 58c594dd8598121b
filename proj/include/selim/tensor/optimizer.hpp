#pragma once

#include "selim/tensor/autograd.hpp"

#include <span>
#include <string>
#include <vector>

namespace selim::ad {

enum class Schedule { None, Cosine };

Schedule parse_schedule(const std::string& s);
std::string to_string(Schedule s);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Schedule schedule = Schedule::None;
  long total_steps = 1;
};

/// Learning rate after `step` scheduler steps: lr * 0.5 * (1 + cos(pi * step / total)).
double scheduled_lr(const AdamConfig& config, long step);

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  /// Applies one update using each parameter's accumulated gradient.
  /// Throws TrainingError when any gradient entry is not finite.
  void step(std::span<Parameter> params);

  long steps_taken() const { return step_; }
  double current_lr() const { return scheduled_lr(config_, step_); }

 private:
  AdamConfig config_;
  long step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace selim::ad
