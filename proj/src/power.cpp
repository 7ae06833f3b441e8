#include "tpi/power.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "tpi/errors.hpp"

namespace tpi {
namespace {

constexpr double kTinyNorm = 1e-300;
constexpr double kFixedPointTolerance = 1e-12;

void require_unit(const Vector& x, Index d, const char* what) {
  if (x.size() != d) {
    throw InvalidArgument(fmt::format("{}: start vector has length {}, expected {}", what, x.size(), d));
  }
  if (!(std::abs(x.norm() - 1.0) <= 1e-8)) {
    throw InvalidArgument(fmt::format("{}: start vector norm {:.17g} is not 1", what, x.norm()));
  }
}

bool reached_fixed_point(const Vector& next, const Vector& prev) {
  return std::min((next - prev).norm(), (next + prev).norm()) < kFixedPointTolerance;
}

double fixed_point_residual(const Tensor3& tensor, const Vector& x) {
  const Vector g = tensor.contract(Mode::first, x, x);
  const double n = g.norm();
  if (n < kTinyNorm) return std::numeric_limits<double>::infinity();
  return (g - n * x).norm() / n;
}

// Fills the optional per-step fields shared by every run flavour.
class StepRecorder {
 public:
  StepRecorder(const PowerConfig& config, const FactoredTensor3* ground_truth,
               const Tensor3& tensor, Mode mode)
      : level_(config.trace_level), target_(config.track_target.value_or(0)) {
    if (ground_truth != nullptr) {
      if (ground_truth->dim() != tensor.dim()) {
        throw InvalidArgument("ground truth dimension does not match the tensor");
      }
      if (target_ < 0 || target_ >= ground_truth->rank()) {
        throw InvalidArgument(fmt::format("track_target {} out of range for rank {}", target_,
                                          ground_truth->rank()));
      }
      truth_ = &ground_truth->components(mode);
    } else if (const auto* factored = dynamic_cast<const FactoredTensor3*>(&tensor)) {
      if (target_ < factored->rank()) factors_ = &factored->components(mode);
    }
  }

  bool tracking() const { return truth_ != nullptr; }

  std::optional<double> correlation(const Vector& x) const {
    if (truth_ == nullptr) return std::nullopt;
    return std::abs(truth_->col(target_).dot(x));
  }

  void record(IterationTrace& trace, int iteration, const Vector& x, std::optional<double> unnorm,
              std::optional<double> noise_norm = std::nullopt) const {
    if (level_ == TraceLevel::none) return;
    IterationStep step;
    step.iteration = iteration;
    step.unnormalized_norm = unnorm;
    step.target_correlation = correlation(x);
    step.noise_component_norm = noise_norm;
    if (level_ == TraceLevel::full) {
      step.x = x;
      const Matrix* a = truth_ != nullptr ? truth_ : factors_;
      if (a != nullptr) {
        step.y = a->transpose() * x;
        const Index k = step.y.size();
        step.w.resize(k - 1);
        for (Index j = 0, o = 0; j < k; ++j) {
          if (j == target_) continue;
          step.w(o++) = step.y(j) * step.y(j);
        }
      }
    }
    trace.steps.push_back(std::move(step));
  }

 private:
  TraceLevel level_;
  Index target_;
  const Matrix* truth_ = nullptr;
  const Matrix* factors_ = nullptr;
};

}  // namespace

std::string to_string(TraceLevel level) {
  switch (level) {
    case TraceLevel::none: return "none";
    case TraceLevel::norms: return "norms";
    case TraceLevel::full: return "full";
  }
  return "unknown";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::target_reached: return "target_reached";
    case StopReason::fixed_point: return "fixed_point";
  }
  return "unknown";
}

TraceLevel parse_trace_level(const std::string& text) {
  if (text == "none") return TraceLevel::none;
  if (text == "norms") return TraceLevel::norms;
  if (text == "full") return TraceLevel::full;
  throw InvalidArgument(fmt::format("unknown trace level '{}'", text));
}

int PowerConfig::default_iterations(Index d) {
  const double dd = static_cast<double>(std::max<Index>(d, 4));
  return static_cast<int>(std::ceil(4.0 * std::log2(std::log2(dd)))) + 10;
}

PowerConfig PowerConfig::for_dimension(Index d) {
  PowerConfig config;
  config.max_iters = default_iterations(d);
  return config;
}

void PowerConfig::validate() const {
  if (max_iters < 1) throw InvalidArgument(fmt::format("max_iters must be >= 1, got {}", max_iters));
  if (!(convergence_gamma > 0.0 && convergence_gamma < 1.0)) {
    throw InvalidArgument(fmt::format("convergence_gamma must lie in (0,1), got {}", convergence_gamma));
  }
}

PowerStep power_step(const Tensor3& tensor, const Vector& x) {
  require_unit(x, tensor.dim(), "power_step");
  Vector g = tensor.contract(Mode::first, x, x);
  const double n = g.norm();
  if (!(n >= kTinyNorm)) throw DegenerateIterate("power_step: T(I,x,x) vanished");
  g /= n;
  return {std::move(g), n};
}

IterationTrace run_power(const Tensor3& tensor, const Vector& x0, const PowerConfig& config,
                         const FactoredTensor3* ground_truth) {
  config.validate();
  require_unit(x0, tensor.dim(), "run_power");
  const StepRecorder recorder(config, ground_truth, tensor, Mode::first);

  IterationTrace trace;
  Vector x = x0;
  recorder.record(trace, 0, x, std::nullopt);
  for (int t = 1; t <= config.max_iters; ++t) {
    PowerStep step = power_step(tensor, x);
    trace.iterations = t;
    recorder.record(trace, t, step.x, step.unnormalized_norm);
    const auto corr = recorder.correlation(step.x);
    const bool fixed = reached_fixed_point(step.x, x);
    x = std::move(step.x);
    if (corr && *corr >= 1.0 - config.convergence_gamma) {
      trace.stop_reason = StopReason::target_reached;
      break;
    }
    if (fixed) {
      trace.stop_reason = StopReason::fixed_point;
      break;
    }
  }
  trace.final_correlation = recorder.correlation(x);
  trace.fixed_point_residual = fixed_point_residual(tensor, x);
  trace.final_x = std::move(x);
  return trace;
}

AsymmetricTrace run_power_asymmetric(const Tensor3& tensor, const Vector& x0, const Vector& y0,
                                     const Vector& z0, const PowerConfig& config,
                                     const FactoredTensor3* ground_truth) {
  config.validate();
  const Index d = tensor.dim();
  require_unit(x0, d, "run_power_asymmetric");
  require_unit(y0, d, "run_power_asymmetric");
  require_unit(z0, d, "run_power_asymmetric");
  const std::array<StepRecorder, 3> recorders = {
      StepRecorder(config, ground_truth, tensor, Mode::first),
      StepRecorder(config, ground_truth, tensor, Mode::second),
      StepRecorder(config, ground_truth, tensor, Mode::third)};

  AsymmetricTrace out;
  std::array<Vector, 3> x = {x0, y0, z0};
  for (int m = 0; m < 3; ++m) recorders[m].record(out.modes[m], 0, x[m], std::nullopt);

  auto normalized = [](Vector g, double& norm) {
    norm = g.norm();
    if (!(norm >= kTinyNorm)) throw DegenerateIterate("run_power_asymmetric: contraction vanished");
    return Vector(g / norm);
  };

  StopReason reason = StopReason::max_iterations;
  int iterations = 0;
  for (int t = 1; t <= config.max_iters; ++t) {
    std::array<double, 3> norms{};
    std::array<Vector, 3> next = {
        normalized(tensor.contract(Mode::first, x[1], x[2]), norms[0]),
        normalized(tensor.contract(Mode::second, x[0], x[2]), norms[1]),
        normalized(tensor.contract(Mode::third, x[0], x[1]), norms[2])};
    iterations = t;
    bool all_reached = recorders[0].tracking();
    bool all_fixed = true;
    for (int m = 0; m < 3; ++m) {
      recorders[m].record(out.modes[m], t, next[m], norms[m]);
      const auto corr = recorders[m].correlation(next[m]);
      all_reached = all_reached && corr && *corr >= 1.0 - config.convergence_gamma;
      all_fixed = all_fixed && reached_fixed_point(next[m], x[m]);
    }
    x = std::move(next);
    if (all_reached) {
      reason = StopReason::target_reached;
      break;
    }
    if (all_fixed) {
      reason = StopReason::fixed_point;
      break;
    }
  }

  const std::array<Vector, 3> residual_dirs = {
      tensor.contract(Mode::first, x[1], x[2]), tensor.contract(Mode::second, x[0], x[2]),
      tensor.contract(Mode::third, x[0], x[1])};
  for (int m = 0; m < 3; ++m) {
    auto& trace = out.modes[m];
    trace.iterations = iterations;
    trace.stop_reason = reason;
    trace.final_correlation = recorders[m].correlation(x[m]);
    const double n = residual_dirs[m].norm();
    trace.fixed_point_residual = n < kTinyNorm ? std::numeric_limits<double>::infinity()
                                               : (residual_dirs[m] - n * x[m]).norm() / n;
    trace.final_x = x[m];
  }
  return out;
}

IterationTrace run_power_with_shadow(const PerturbedTensor& perturbed, const Vector& x0,
                                     const PowerConfig& config,
                                     const FactoredTensor3* ground_truth) {
  config.validate();
  require_unit(x0, perturbed.dim(), "run_power_with_shadow");
  const FactoredTensor3& signal = perturbed.signal();
  const StepRecorder recorder(config, ground_truth != nullptr ? ground_truth : &signal, perturbed,
                              Mode::first);

  IterationTrace trace;
  Vector noisy = x0;   // x^_t, unit
  Vector shadow = x0;  // x_t, unit
  recorder.record(trace, 0, noisy, std::nullopt, 0.0);
  for (int t = 1; t <= config.max_iters; ++t) {
    const Vector signal_term = signal.contract(Mode::first, shadow, shadow);
    const Vector full = signal.contract(Mode::first, noisy, noisy) +
                        perturbed.noise().contract(Mode::first, noisy, noisy);
    const double z = full.norm();
    if (!(z >= kTinyNorm)) throw DegenerateIterate("run_power_with_shadow: T^(I,x,x) vanished");
    const double zs = signal_term.norm();
    if (!(zs >= kTinyNorm)) throw DegenerateIterate("run_power_with_shadow: T(I,x,x) vanished");
    Vector next = full / z;
    shadow = signal_term / zs;
    const double xi = (next - shadow).norm();
    trace.iterations = t;
    recorder.record(trace, t, next, z, xi);
    const auto corr = recorder.correlation(next);
    const bool fixed = reached_fixed_point(next, noisy);
    noisy = std::move(next);
    if (ground_truth != nullptr && corr && *corr >= 1.0 - config.convergence_gamma) {
      trace.stop_reason = StopReason::target_reached;
      break;
    }
    if (fixed) {
      trace.stop_reason = StopReason::fixed_point;
      break;
    }
  }
  trace.final_correlation = ground_truth != nullptr ? recorder.correlation(noisy) : std::nullopt;
  trace.fixed_point_residual = fixed_point_residual(perturbed, noisy);
  trace.final_x = std::move(noisy);
  return trace;
}

std::vector<double> rescaled_correlations(const IterationTrace& trace, Index d, Index k) {
  const double scale = static_cast<double>(d) / std::sqrt(static_cast<double>(k));
  std::vector<double> r;
  r.reserve(trace.steps.size());
  for (const auto& step : trace.steps) {
    if (!step.target_correlation) {
      throw InvalidArgument("rescaled_correlations: trace has no tracked correlations");
    }
    r.push_back(*step.target_correlation * scale);
  }
  return r;
}

bool quadratic_progress_holds(const IterationTrace& trace, Index d, Index k, double coefficient,
                              double saturation) {
  const std::vector<double> r = rescaled_correlations(trace, d, k);
  const double ceiling = saturation * static_cast<double>(d) / std::sqrt(static_cast<double>(k));
  for (std::size_t t = 0; t + 1 < r.size(); ++t) {
    if (r[t] <= ceiling && r[t + 1] < coefficient * r[t] * r[t]) return false;
  }
  return true;
}

double fit_noise_growth_constant(const IterationTrace& trace, Index d, double beta, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("fit_noise_growth_constant: eps must be positive");
  const double logd = std::log(static_cast<double>(d));
  double c = 0.0;
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& xi = trace.steps[s].noise_component_norm;
    if (!xi || *xi == 0.0) continue;
    const double growth = std::pow(static_cast<double>(d), beta * std::ldexp(1.0, static_cast<int>(s)));
    c = std::max(c, *xi / (growth * eps * logd));
  }
  return c;
}

namespace {

std::string json_number(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "null";
  return fmt::format("{:.17g}", *v);
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  return fmt::format("{:.17g}", *v);
}

}  // namespace

void write_trace_jsonl(std::ostream& out, const IterationTrace& trace) {
  for (const auto& step : trace.steps) {
    out << fmt::format(R"({{"iteration":{},"correlation":{},"unnorm_norm":{},"noise_norm":{}}})",
                       step.iteration, json_number(step.target_correlation),
                       json_number(step.unnormalized_norm), json_number(step.noise_component_norm))
        << '\n';
  }
}

void write_trace_csv(std::ostream& out, const IterationTrace& trace) {
  out << "iteration,correlation,unnorm_norm,noise_norm\n";
  for (const auto& step : trace.steps) {
    out << step.iteration << ',' << csv_number(step.target_correlation) << ','
        << csv_number(step.unnormalized_norm) << ',' << csv_number(step.noise_component_norm) << '\n';
  }
}

}  // namespace tpi
