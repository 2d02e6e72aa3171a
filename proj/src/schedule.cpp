#include "cds/schedule.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "cds/error.hpp"

namespace cds {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::scaled_linear: return "scaled_linear";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear: return "linear";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "scaled_linear") return ScheduleKind::scaled_linear;
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear") return ScheduleKind::linear;
  throw Error(ErrorCode::invalid_config, "invalid schedule kind '" + std::string(name) + "'");
}

namespace {

std::vector<double> alpha_bar_from_betas(const std::vector<double>& betas) {
  std::vector<double> alpha_bar(betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) {
      throw Error(ErrorCode::invalid_config,
                  fmt::format("beta[{}] = {} outside [0, 1)", i, betas[i]));
    }
    prod *= 1.0 - betas[i];
    alpha_bar[i] = prod;
  }
  return alpha_bar;
}

std::vector<double> scaled_linear_alpha_bar(int n, const ScheduleParams& p) {
  if (!(p.beta_start >= 0.0 && p.beta_end >= 0.0)) {
    throw Error(ErrorCode::invalid_config, "scaled_linear betas must be nonnegative");
  }
  const double lo = std::sqrt(p.beta_start);
  const double hi = std::sqrt(p.beta_end);
  std::vector<double> betas(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double r = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    betas[static_cast<std::size_t>(i)] = r * r;
  }
  return alpha_bar_from_betas(betas);
}

std::vector<double> cosine_alpha_bar(int n, const ScheduleParams& p) {
  if (!(p.cosine_offset > 0.0)) {
    throw Error(ErrorCode::invalid_config, "cosine offset must be positive");
  }
  auto f = [&](double u) {
    const double c = std::cos((u + p.cosine_offset) / (1.0 + p.cosine_offset) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t0 = static_cast<double>(i) / n;
    const double t1 = static_cast<double>(i + 1) / n;
    betas[static_cast<std::size_t>(i)] = std::min(1.0 - f(t1) / f(t0), 0.999);
  }
  return alpha_bar_from_betas(betas);
}

std::vector<double> linear_alpha_bar(int n, const ScheduleParams& p) {
  std::vector<double> alpha_bar(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    alpha_bar[static_cast<std::size_t>(i)] =
        p.alpha_bar_start +
        (p.alpha_bar_end - p.alpha_bar_start) * static_cast<double>(i) / (n - 1);
  }
  return alpha_bar;
}

}  // namespace

NoiseSchedule make_schedule(ScheduleKind kind, int num_steps, const ScheduleParams& params) {
  if (num_steps < 2) {
    throw Error(ErrorCode::invalid_config, "schedule needs at least 2 steps");
  }
  std::vector<double> alpha_bar;
  switch (kind) {
    case ScheduleKind::scaled_linear: alpha_bar = scaled_linear_alpha_bar(num_steps, params); break;
    case ScheduleKind::cosine: alpha_bar = cosine_alpha_bar(num_steps, params); break;
    case ScheduleKind::linear: alpha_bar = linear_alpha_bar(num_steps, params); break;
    default: throw Error(ErrorCode::invalid_config, "invalid schedule kind");
  }

  NoiseSchedule s;
  s.kind_ = kind;
  s.a_.resize(alpha_bar.size());
  s.b_.resize(alpha_bar.size());
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    const double ab = alpha_bar[i];
    if (!(ab >= 0.0 && ab <= 1.0)) {
      throw Error(ErrorCode::invalid_config,
                  fmt::format("alpha_bar[{}] = {} outside [0, 1]", i, ab));
    }
    if (i > 0 && ab > alpha_bar[i - 1]) {
      throw Error(ErrorCode::invalid_config,
                  fmt::format("non-monotone schedule: alpha_bar increases at t={}", i));
    }
    s.a_[i] = std::sqrt(ab);
    s.b_[i] = std::sqrt(1.0 - ab);
  }
  return s;
}

void validate(const TimestepRange& range, int num_steps) {
  if (range.t_min < 0 || range.t_max >= num_steps || range.t_min > range.t_max) {
    throw Error(ErrorCode::invalid_config,
                fmt::format("timestep range [{}, {}] invalid for {} steps", range.t_min,
                            range.t_max, num_steps));
  }
}

Latent perturb(const Latent& z0, const Latent& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "perturb");
  if (t < 0 || t >= sched.num_steps()) {
    throw Error(ErrorCode::out_of_range,
                fmt::format("timestep {} outside [0, {})", t, sched.num_steps()));
  }
  const double a = sched.a(t);
  const double b = sched.b(t);
  Latent out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

int sample_timestep(Rng& rng, const TimestepRange& range) {
  return static_cast<int>(rng.uniform_int(range.t_min, range.t_max));
}

std::string schedule_csv(const NoiseSchedule& sched) {
  std::string out = "t,a_t,b_t\n";
  for (int t = 0; t < sched.num_steps(); ++t) {
    out += fmt::format("{},{:.17g},{:.17g}\n", t, sched.a(t), sched.b(t));
  }
  return out;
}

}  // namespace cds
