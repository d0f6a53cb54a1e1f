// SPDX-License-Identifier: Apache-2.0

#include "sslab/optim.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace sslab {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear_warmup_linear_decay;
  if (s == "tristage") return ScheduleKind::tristage;
  throw ConfigError("schedule kind must be 'linear' or 'tristage', got '" + s + "'");
}

const char* to_string(ScheduleKind kind) {
  return kind == ScheduleKind::tristage ? "tristage" : "linear";
}

LrSchedule LrSchedule::pretrain(long total_steps, long warmup_steps, double peak) {
  LrSchedule s;
  s.kind = ScheduleKind::linear_warmup_linear_decay;
  s.peak = peak;
  s.warmup_steps = warmup_steps;
  s.decay_steps = std::max(1L, total_steps - warmup_steps);
  return s;
}

LrSchedule LrSchedule::finetune(long warmup_steps, long hold_steps, long decay_steps, double peak,
                                double final_fraction) {
  LrSchedule s;
  s.kind = ScheduleKind::tristage;
  s.peak = peak;
  s.warmup_steps = warmup_steps;
  s.hold_steps = hold_steps;
  s.decay_steps = decay_steps;
  s.final_fraction = final_fraction;
  return s;
}

void LrSchedule::validate() const {
  if (!(peak > 0.0)) throw ConfigError("schedule.peak must be positive");
  if (warmup_steps < 0 || hold_steps < 0 || decay_steps < 0)
    throw ConfigError("schedule.warmup_steps/hold_steps/decay_steps must be non-negative");
  if (kind == ScheduleKind::tristage && !(final_fraction > 0.0 && final_fraction <= 1.0))
    throw ConfigError("schedule.final_fraction must lie in (0, 1] for tristage");
}

double lr_at(long step, const LrSchedule& sched) {
  if (step < 0) throw Error("negative step");
  const auto s = static_cast<double>(step);
  if (step < sched.warmup_steps) return sched.peak * s / static_cast<double>(sched.warmup_steps);

  const double after_warmup = s - static_cast<double>(sched.warmup_steps);
  if (sched.kind == ScheduleKind::linear_warmup_linear_decay) {
    if (sched.decay_steps == 0) return 0.0;
    return sched.peak * std::max(0.0, 1.0 - after_warmup / static_cast<double>(sched.decay_steps));
  }
  if (after_warmup <= static_cast<double>(sched.hold_steps)) return sched.peak;
  if (sched.decay_steps == 0) return sched.peak * sched.final_fraction;
  const double progress = std::min(1.0, (after_warmup - static_cast<double>(sched.hold_steps)) /
                                            static_cast<double>(sched.decay_steps));
  return sched.peak * std::pow(sched.final_fraction, progress);
}

void Adam::step(const ParamRefs& params, double lr) {
  for (const Param* p : params)
    if (!p->grad.allFinite()) throw Error("non-finite gradient in " + p->name);

  for (Param* p : params) {
    Slot& slot = slots_[p->name];
    if (slot.step == 0) {
      slot.m = Matrix::Zero(p->value.rows(), p->value.cols());
      slot.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    ++slot.step;
    slot.m = beta1_ * slot.m + (1.0 - beta1_) * p->grad;
    slot.v = beta2_ * slot.v + (1.0 - beta2_) * p->grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.step));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.step));
    p->value.array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + eps_);
  }
}

void Adam::save(std::ostream& os) const {
  io::put<double>(os, beta1_);
  io::put<double>(os, beta2_);
  io::put<double>(os, eps_);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(slots_.size()));
  for (const auto& [name, slot] : slots_) {
    io::put_string(os, name);
    io::put<std::int64_t>(os, slot.step);
    io::put_matrix(os, slot.m);
    io::put_matrix(os, slot.v);
  }
}

void Adam::load(std::istream& is) {
  beta1_ = io::get<double>(is);
  beta2_ = io::get<double>(is);
  eps_ = io::get<double>(is);
  slots_.clear();
  const auto n = io::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = io::get_string(is);
    Slot slot;
    slot.step = io::get<std::int64_t>(is);
    slot.m = io::get_matrix(is);
    slot.v = io::get_matrix(is);
    slots_.emplace(std::move(name), std::move(slot));
  }
}

}  // namespace sslab
