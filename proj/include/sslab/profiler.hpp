// SPDX-License-Identifier: Apache-2.0
//
// Per-stage wall-clock accounting for training loops. A step is split into
// feature extraction, transformer encoding and loss calculation (forward
// only), backward, and "others" = step total minus everything above.
#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

namespace sslab {

enum class Stage { feature_extraction = 0, transformer_encoding = 1, loss_calculation = 2, others = 3 };

inline constexpr std::size_t kNumStages = 4;
inline constexpr std::array<Stage, kNumStages> kStages{Stage::feature_extraction, Stage::transformer_encoding,
                                                       Stage::loss_calculation, Stage::others};

const char* to_string(Stage stage);
/// Short display label ("front-end", "transformer", "loss", "others").
const char* label(Stage stage);

using StageSeconds = std::array<double, kNumStages>;

struct TimingReport {
  long steps = 0;
  int window_steps = 200;
  /// Seconds per `window_steps` updates, one entry per stage.
  StageSeconds seconds{};
  double backward_seconds = 0.0;   // per window, outside the four stages
  double step_seconds = 0.0;       // per window, wall time of whole steps
  double steps_per_second = 0.0;
  std::optional<StageSeconds> baseline;

  /// Report whose stage times are given directly (already per window).
  static TimingReport from_seconds(const StageSeconds& seconds, int window_steps = 200);

  double total() const;
  /// Stage share of the four-stage total; sums to one.
  StageSeconds proportions() const;
  /// (base - new) / base per stage; throws without a baseline.
  StageSeconds reductions() const;
  void attach_baseline(const TimingReport& base) { baseline = base.seconds; }

  nlohmann::json to_json() const;
  /// Aligned columns: stage, seconds/window, share, and reduction if a
  /// baseline is attached ("-" for others).
  std::string to_table(const std::string& title = "") const;
  std::string to_csv() const;
};

/// new / baseline; throws on a non-positive baseline.
double speedup_ratio(double baseline_steps_per_sec, double new_steps_per_sec);

/// Horizontal stacked-bar SVG of one or more reports' stage proportions.
void write_proportions_svg(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, TimingReport>>& reports);

class Profiler {
 public:
  using Clock = std::chrono::steady_clock;

  explicit Profiler(int window_steps = 200, bool enabled = true) : window_steps_(window_steps), enabled_(enabled) {}

  /// Runs fn and adds its duration to `stage`. Re-entering the same stage is
  /// counted once (outer scope); entering a different stage while one is
  /// open is a configuration error. Stage::others scopes are accepted but not
  /// recorded, since others is the residual.
  template <typename F>
  decltype(auto) scoped(Stage stage, F&& fn) {
    if (!enabled_) return std::forward<F>(fn)();
    ScopeGuard guard(*this, stage);
    return std::forward<F>(fn)();
  }

  template <typename F>
  decltype(auto) backward(F&& fn) {
    if (!enabled_) return std::forward<F>(fn)();
    BackwardGuard guard(*this);
    return std::forward<F>(fn)();
  }

  void begin_step();
  void end_step();

  /// Totals over every completed step, scaled to seconds per window.
  TimingReport report() const;
  void reset();

  long steps() const { return steps_; }
  bool enabled() const { return enabled_; }
  /// Raw stage seconds of the most recently completed step.
  const StageSeconds& last_step() const { return last_step_; }
  double last_backward() const { return last_backward_; }

 private:
  struct ScopeGuard {
    ScopeGuard(Profiler& p, Stage s);
    ~ScopeGuard();
    Profiler& prof;
    Stage stage;
    bool outer;
    Clock::time_point start;
  };
  struct BackwardGuard {
    explicit BackwardGuard(Profiler& p);
    ~BackwardGuard();
    Profiler& prof;
    bool outer;
    Clock::time_point start;
  };

  int window_steps_;
  bool enabled_;
  std::optional<Stage> active_;
  bool in_backward_ = false;
  bool in_step_ = false;
  Clock::time_point step_start_;
  StageSeconds current_{};
  double current_backward_ = 0.0;
  StageSeconds last_step_{};
  double last_backward_ = 0.0;

  long steps_ = 0;
  StageSeconds totals_{};
  double backward_total_ = 0.0;
  double step_total_ = 0.0;
};

}  // namespace sslab
