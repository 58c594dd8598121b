#include "selim/tensor/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace selim::ad {

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "none" || s == "None" || s.empty()) return Schedule::None;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "none"; }

double scheduled_lr(const AdamConfig& config, long step) {
  if (config.schedule == Schedule::None) return config.lr;
  const double total = static_cast<double>(std::max(1L, config.total_steps));
  const double frac = std::min(1.0, static_cast<double>(step) / total);
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void Adam::step(std::span<Parameter> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
  for (const auto& p : params) {
    if (!p.grad.allFinite()) {
      std::ostringstream os;
      os << "non-finite gradient in parameter '" << p.name << "' at optimizer step " << step_
         << " (max |g| = " << p.grad.cwiseAbs().maxCoeff() << ")";
      throw TrainingError(os.str());
    }
  }
  const double lr = scheduled_lr(config_, step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * p.grad;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + config_.eps);
  }
}

}  // namespace selim::ad
