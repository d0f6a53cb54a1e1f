// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "sslab/common.hpp"

namespace sslab {

enum class ScheduleKind { linear_warmup_linear_decay, tristage };

ScheduleKind parse_schedule_kind(const std::string& s);
const char* to_string(ScheduleKind kind);

/// linear_warmup_linear_decay: 0 -> peak over warmup_steps, then linearly to
/// zero over decay_steps.
/// tristage: 0 -> peak over warmup_steps, constant for hold_steps, then
/// exponential decay reaching final_fraction * peak after decay_steps; flat
/// afterwards.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::linear_warmup_linear_decay;
  double peak = 5e-4;
  long warmup_steps = 32000;
  long hold_steps = 0;
  long decay_steps = 368000;
  double final_fraction = 0.0;

  static LrSchedule pretrain(long total_steps, long warmup_steps = 32000, double peak = 5e-4);
  static LrSchedule finetune(long warmup_steps = 8000, long hold_steps = 32000, long decay_steps = 40000,
                             double peak = 3e-5, double final_fraction = 0.05);

  void validate() const;
};

double lr_at(long step, const LrSchedule& sched);

/// Bias-corrected Adam, weight decay 0. Moments are keyed by parameter name
/// and carry their own step count, so parameters that join late (after a
/// freeze window) start their bias correction from one.
class Adam {
 public:
  struct Slot {
    Matrix m;
    Matrix v;
    long step = 0;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Throws "non-finite gradient" before touching any parameter.
  void step(const ParamRefs& params, double lr);

  const std::map<std::string, Slot>& slots() const { return slots_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  double beta1_, beta2_, eps_;
  std::map<std::string, Slot> slots_;
};

}  // namespace sslab
