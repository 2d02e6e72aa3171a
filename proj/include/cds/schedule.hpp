#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cds/rng.hpp"
#include "cds/tensor.hpp"

namespace cds {

enum class ScheduleKind { scaled_linear, cosine, linear };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

struct ScheduleParams {
  // scaled_linear: beta_t = (linspace(sqrt(beta_start), sqrt(beta_end)))^2
  double beta_start = 0.00085;
  double beta_end = 0.012;
  // cosine: offset s of the squared-cosine alpha-bar curve
  double cosine_offset = 0.008;
  // linear: alpha-bar (= a^2) interpolated linearly between the two endpoints
  double alpha_bar_start = 0.9999;
  double alpha_bar_end = 0.0001;
};

// Discrete signal/noise coefficients with a_t^2 + b_t^2 = 1.
class NoiseSchedule {
 public:
  ScheduleKind kind() const { return kind_; }
  int num_steps() const { return static_cast<int>(a_.size()); }
  double a(int t) const { return a_.at(static_cast<std::size_t>(t)); }
  double b(int t) const { return b_.at(static_cast<std::size_t>(t)); }
  const std::vector<double>& a_table() const { return a_; }
  const std::vector<double>& b_table() const { return b_; }

  friend NoiseSchedule make_schedule(ScheduleKind, int, const ScheduleParams&);

 private:
  ScheduleKind kind_ = ScheduleKind::scaled_linear;
  std::vector<double> a_;
  std::vector<double> b_;
};

struct TimestepRange {
  int t_min = 50;
  int t_max = 950;
};

NoiseSchedule make_schedule(ScheduleKind kind, int num_steps,
                            const ScheduleParams& params = {});

// Throws invalid_argument unless 0 <= t_min <= t_max < num_steps.
void validate(const TimestepRange& range, int num_steps);

// a_t * z0 + b_t * eps
Latent perturb(const Latent& z0, const Latent& eps, int t, const NoiseSchedule& sched);

int sample_timestep(Rng& rng, const TimestepRange& range);

// CSV with header "t,a_t,b_t" and one row per timestep.
std::string schedule_csv(const NoiseSchedule& sched);

}  // namespace cds
