// SPDX-License-Identifier: Apache-2.0

#include "sslab/profiler.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sslab/common.hpp"

namespace sslab {

namespace {

double seconds_since(Profiler::Clock::time_point start) {
  return std::chrono::duration<double>(Profiler::Clock::now() - start).count();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::feature_extraction: return "feature_extraction";
    case Stage::transformer_encoding: return "transformer_encoding";
    case Stage::loss_calculation: return "loss_calculation";
    case Stage::others: return "others";
  }
  return "?";
}

const char* label(Stage stage) {
  switch (stage) {
    case Stage::feature_extraction: return "front-end";
    case Stage::transformer_encoding: return "transformer";
    case Stage::loss_calculation: return "loss";
    case Stage::others: return "others";
  }
  return "?";
}

TimingReport TimingReport::from_seconds(const StageSeconds& seconds, int window_steps) {
  TimingReport r;
  r.steps = window_steps;
  r.window_steps = window_steps;
  r.seconds = seconds;
  r.step_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0);
  return r;
}

double TimingReport::total() const { return std::accumulate(seconds.begin(), seconds.end(), 0.0); }

StageSeconds TimingReport::proportions() const {
  const double t = total();
  if (!(t > 0.0)) throw Error("cannot compute proportions of an empty report");
  StageSeconds p{};
  for (std::size_t i = 0; i < kNumStages; ++i) p[i] = seconds[i] / t;
  return p;
}

StageSeconds TimingReport::reductions() const {
  if (!baseline) throw Error("no baseline attached to the timing report");
  StageSeconds r{};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const double base = (*baseline)[i];
    r[i] = base > 0.0 ? (base - seconds[i]) / base : 0.0;
  }
  return r;
}

nlohmann::json TimingReport::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["window_steps"] = window_steps;
  j["steps_per_second"] = steps_per_second;
  j["backward_seconds"] = backward_seconds;
  j["step_seconds"] = step_seconds;
  const bool nonempty = total() > 0.0;
  const StageSeconds prop = nonempty ? proportions() : StageSeconds{};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const char* name = to_string(kStages[i]);
    j["seconds"][name] = seconds[i];
    j["proportions"][name] = prop[i];
  }
  if (baseline) {
    const StageSeconds red = reductions();
    for (std::size_t i = 0; i < kNumStages; ++i) {
      j["baseline_seconds"][to_string(kStages[i])] = (*baseline)[i];
      j["reductions"][to_string(kStages[i])] = red[i];
    }
  }
  return j;
}

std::string TimingReport::to_table(const std::string& title) const {
  std::ostringstream os;
  if (!title.empty()) os << title << '\n';
  os << pad("stage", 14, true) << pad("s/" + std::to_string(window_steps), 12) << pad("share", 9);
  if (baseline) os << pad("base", 12) << pad("reduction", 11);
  os << '\n';
  const bool nonempty = total() > 0.0;
  const StageSeconds prop = nonempty ? proportions() : StageSeconds{};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << pad(label(kStages[i]), 14, true) << pad(fixed(seconds[i], 3), 12) << pad(fixed(100.0 * prop[i], 1) + "%", 9);
    if (baseline) {
      os << pad(fixed((*baseline)[i], 3), 12);
      os << pad(kStages[i] == Stage::others ? "-" : fixed(100.0 * reductions()[i], 1) + "%", 11);
    }
    os << '\n';
  }
  os << pad("backward", 14, true) << pad(fixed(backward_seconds, 3), 12) << '\n';
  os << pad("steps/s", 14, true) << pad(fixed(steps_per_second, 2), 12) << '\n';
  return os.str();
}

std::string TimingReport::to_csv() const {
  std::ostringstream os;
  os << "stage,seconds_per_window,proportion";
  if (baseline) os << ",baseline_seconds,reduction";
  os << '\n';
  const bool nonempty = total() > 0.0;
  const StageSeconds prop = nonempty ? proportions() : StageSeconds{};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    os << to_string(kStages[i]) << ',' << seconds[i] << ',' << prop[i];
    if (baseline) os << ',' << (*baseline)[i] << ',' << reductions()[i];
    os << '\n';
  }
  return os.str();
}

double speedup_ratio(double baseline_steps_per_sec, double new_steps_per_sec) {
  if (!(baseline_steps_per_sec > 0.0)) throw Error("speedup ratio needs a positive baseline rate");
  if (!(new_steps_per_sec > 0.0)) throw Error("speedup ratio needs a positive rate");
  return new_steps_per_sec / baseline_steps_per_sec;
}

void write_proportions_svg(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, TimingReport>>& reports) {
  static constexpr std::array<const char*, kNumStages> kColors{"#4e79a7", "#f28e2b", "#e15759", "#bab0ac"};
  const int bar_h = 28, gap = 14, left = 120, width = 480, top = 40;
  const int height = top + static_cast<int>(reports.size()) * (bar_h + gap) + 40;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 20 << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t i = 0; i < kNumStages; ++i) {
    const int x = left + static_cast<int>(i) * 120;
    out << "  <rect x=\"" << x << "\" y=\"10\" width=\"12\" height=\"12\" fill=\"" << kColors[i] << "\"/>\n";
    out << "  <text x=\"" << x + 16 << "\" y=\"21\">" << label(kStages[i]) << "</text>\n";
  }
  int y = top;
  for (const auto& [name, report] : reports) {
    out << "  <text x=\"" << left - 8 << "\" y=\"" << y + bar_h / 2 + 4 << "\" text-anchor=\"end\">" << name
        << "</text>\n";
    const StageSeconds p = report.proportions();
    double x = left;
    for (std::size_t i = 0; i < kNumStages; ++i) {
      const double w = p[i] * width;
      out << "  <rect x=\"" << fixed(x, 2) << "\" y=\"" << y << "\" width=\"" << fixed(w, 2) << "\" height=\""
          << bar_h << "\" fill=\"" << kColors[i] << "\"><title>" << label(kStages[i]) << ' '
          << fixed(100.0 * p[i], 1) << "%</title></rect>\n";
      if (p[i] > 0.08)
        out << "  <text x=\"" << fixed(x + w / 2, 2) << "\" y=\"" << y + bar_h / 2 + 4
            << "\" text-anchor=\"middle\" fill=\"white\">" << fixed(100.0 * p[i], 1) << "%</text>\n";
      x += w;
    }
    y += bar_h + gap;
  }
  out << "</svg>\n";
}

Profiler::ScopeGuard::ScopeGuard(Profiler& p, Stage s) : prof(p), stage(s), outer(false) {
  if (prof.in_backward_) throw ConfigError(std::string("stage scope '") + to_string(s) + "' opened inside backward");
  if (prof.active_) {
    if (*prof.active_ != s)
      throw ConfigError(std::string("stage scope '") + to_string(s) + "' nested inside '" + to_string(*prof.active_) +
                        "'");
    return;
  }
  outer = true;
  prof.active_ = s;
  start = Clock::now();
}

Profiler::ScopeGuard::~ScopeGuard() {
  if (!outer) return;
  const double dt = seconds_since(start);
  if (stage != Stage::others) prof.current_[static_cast<std::size_t>(stage)] += dt;
  prof.active_.reset();
}

Profiler::BackwardGuard::BackwardGuard(Profiler& p) : prof(p), outer(false) {
  if (prof.active_)
    throw ConfigError(std::string("backward scope nested inside '") + to_string(*prof.active_) + "'");
  if (prof.in_backward_) return;
  outer = true;
  prof.in_backward_ = true;
  start = Clock::now();
}

Profiler::BackwardGuard::~BackwardGuard() {
  if (!outer) return;
  prof.current_backward_ += seconds_since(start);
  prof.in_backward_ = false;
}

void Profiler::begin_step() {
  if (!enabled_) return;
  current_ = {};
  current_backward_ = 0.0;
  in_step_ = true;
  step_start_ = Clock::now();
}

void Profiler::end_step() {
  if (!enabled_) return;
  if (!in_step_) throw Error("end_step without begin_step");
  const double total = seconds_since(step_start_);
  in_step_ = false;
  const double named = current_[0] + current_[1] + current_[2];
  current_[static_cast<std::size_t>(Stage::others)] = std::max(0.0, total - named - current_backward_);
  for (std::size_t i = 0; i < kNumStages; ++i) totals_[i] += current_[i];
  last_step_ = current_;
  last_backward_ = current_backward_;
  backward_total_ += current_backward_;
  step_total_ += total;
  ++steps_;
}

TimingReport Profiler::report() const {
  if (steps_ == 0) throw Error("empty window");
  TimingReport r;
  r.steps = steps_;
  r.window_steps = window_steps_;
  const double scale = static_cast<double>(window_steps_) / static_cast<double>(steps_);
  for (std::size_t i = 0; i < kNumStages; ++i) r.seconds[i] = totals_[i] * scale;
  r.backward_seconds = backward_total_ * scale;
  r.step_seconds = step_total_ * scale;
  r.steps_per_second = step_total_ > 0.0 ? static_cast<double>(steps_) / step_total_ : 0.0;
  return r;
}

void Profiler::reset() {
  steps_ = 0;
  totals_ = {};
  backward_total_ = 0.0;
  step_total_ = 0.0;
}

}  // namespace sslab
