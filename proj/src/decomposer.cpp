#include "tpi/decomposer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include <fmt/format.h>

#include "tpi/errors.hpp"
#include "tpi/parallel.hpp"

namespace tpi {

void ClusterConfig::validate() const {
  if (!(nu > 0.0 && nu <= 1.0)) throw InvalidArgument(fmt::format("nu must lie in (0,1], got {}", nu));
  if (refine_iters < 0) throw InvalidArgument("refine_iters must be >= 0");
  if (max_components < 0) throw InvalidArgument("max_components must be >= 0");
}

double estimate_weight(const Tensor3& tensor, const Vector& x) { return contract_scalar(tensor, x, x, x); }

namespace {

struct StartResult {
  Vector x;
  int iterations = 0;
  bool degenerate = false;
};

struct Refinement {
  Vector x;
  int iterations = 0;
  std::vector<double> scores;
  double residual = 0.0;
};

// N plain power steps from x, recording |T(x,x,x)| along the way.
std::optional<Refinement> refine(const Tensor3& tensor, const Vector& start, int steps) {
  Refinement out;
  out.x = start;
  out.scores.push_back(std::abs(estimate_weight(tensor, out.x)));
  try {
    for (int t = 0; t < steps; ++t) {
      PowerStep step = power_step(tensor, out.x);
      const bool fixed = std::min((step.x - out.x).norm(), (step.x + out.x).norm()) < 1e-12;
      out.x = std::move(step.x);
      ++out.iterations;
      out.scores.push_back(std::abs(estimate_weight(tensor, out.x)));
      if (fixed) break;
    }
  } catch (const DegenerateIterate&) {
    return std::nullopt;
  }
  const Vector g = tensor.contract(Mode::first, out.x, out.x);
  const double n = g.norm();
  out.residual = n > 0.0 ? (g - n * out.x).norm() / n : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace

DecompositionResult decompose(const Tensor3& tensor, const Matrix& inits, const PowerConfig& power,
                              const ClusterConfig& cluster, unsigned threads) {
  power.validate();
  cluster.validate();
  if (inits.cols() == 0) throw InvalidArgument("decompose: no initialization vectors");
  if (inits.rows() != tensor.dim()) {
    throw InvalidArgument(fmt::format("decompose: inits have dimension {}, tensor has {}", inits.rows(),
                                      tensor.dim()));
  }

  PowerConfig start_config = power;
  start_config.trace_level = TraceLevel::none;
  start_config.track_target.reset();
  const auto m = static_cast<std::size_t>(inits.cols());
  std::vector<StartResult> starts(m);
  parallel_for(m, threads, [&](std::size_t i) {
    try {
      IterationTrace trace = run_power(tensor, inits.col(static_cast<Index>(i)), start_config);
      starts[i].x = std::move(trace.final_x);
      starts[i].iterations = trace.iterations;
    } catch (const DegenerateIterate&) {
      starts[i].degenerate = true;
    }
  });

  DecompositionResult result;
  std::vector<Index> pool;
  std::vector<double> scores(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (starts[i].degenerate) {
      ++result.degenerate_starts;
      continue;
    }
    pool.push_back(static_cast<Index>(i));
    scores[i] = std::abs(estimate_weight(tensor, starts[i].x));
  }

  const int refine_steps = cluster.refine_iters > 0 ? cluster.refine_iters : power.max_iters;
  const double cut = cluster.nu / 2.0;
  std::vector<Vector> emitted;
  std::vector<double> weights;

  while (!pool.empty()) {
    if (cluster.max_components > 0 && static_cast<Index>(emitted.size()) >= cluster.max_components) break;
    // Strict '>' keeps the lowest pool index on ties.
    std::size_t best = 0;
    for (std::size_t p = 1; p < pool.size(); ++p) {
      if (scores[static_cast<std::size_t>(pool[p])] > scores[static_cast<std::size_t>(pool[best])]) best = p;
    }
    const Index chosen = pool[best];
    const StartResult& start = starts[static_cast<std::size_t>(chosen)];
    auto refined = refine(tensor, start.x, refine_steps);
    if (!refined) {
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      ++result.degenerate_starts;
      continue;
    }

    Vector xhat = std::move(refined->x);
    double value = estimate_weight(tensor, xhat);
    if (value < 0.0) {
      xhat = -xhat;
      value = -value;
    }

    Index absorbed = 0;
    std::vector<Index> survivors;
    survivors.reserve(pool.size());
    for (Index idx : pool) {
      const Vector& x = starts[static_cast<std::size_t>(idx)].x;
      if (idx == chosen || std::abs(x.dot(xhat)) > cut) {
        ++absorbed;
      } else {
        survivors.push_back(idx);
      }
    }
    pool = std::move(survivors);

    const bool duplicate = std::any_of(emitted.begin(), emitted.end(),
                                       [&](const Vector& e) { return std::abs(e.dot(xhat)) >= cut; });
    if (duplicate) {
      ++result.duplicates_dropped;
      continue;
    }

    EstimateDiagnostics diag;
    diag.final_score = value;
    diag.iterations = start.iterations + refined->iterations;
    diag.refine_scores = std::move(refined->scores);
    diag.monotone = diag.refine_scores.back() >= diag.refine_scores.front() - 1e-9;
    diag.fixed_point_residual = refined->residual;
    diag.source_init = chosen;
    result.diagnostics.push_back(std::move(diag));
    result.cluster_sizes.push_back(absorbed);
    weights.push_back(value);
    emitted.push_back(std::move(xhat));
  }

  result.estimates.resize(tensor.dim(), static_cast<Index>(emitted.size()));
  result.weights.resize(static_cast<Index>(emitted.size()));
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    result.estimates.col(static_cast<Index>(i)) = emitted[i];
    result.weights(static_cast<Index>(i)) = weights[i];
  }
  return result;
}

Vector refit_weights(const Tensor3& tensor, const Matrix& estimates) {
  const Index m = estimates.cols();
  if (m == 0) return Vector();
  const Matrix inner = estimates.transpose() * estimates;
  const Matrix gram = inner.array().cube().matrix();
  Vector rhs(m);
  for (Index i = 0; i < m; ++i) rhs(i) = estimate_weight(tensor, estimates.col(i));
  return gram.completeOrthogonalDecomposition().solve(rhs);
}

// ---------------------------------------------------------------------------
// Matching

Index MatchReport::matched() const {
  return static_cast<Index>(std::count_if(permutation.begin(), permutation.end(),
                                          [](const auto& p) { return p.has_value(); }));
}

Index MatchReport::recovered(double threshold) const {
  Index count = 0;
  std::size_t c = 0;
  for (const auto& p : permutation) {
    if (!p) continue;
    if (per_component_correlations[c++] >= threshold) ++count;
  }
  return count;
}

namespace {

// Minimum-cost perfect assignment on an n x n cost matrix (Kuhn-Munkres with
// potentials).  Returns the column assigned to every row.
std::vector<Index> hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> row_to_col(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

MatchReport finish_report(const Matrix& estimates, const Matrix& truth,
                          const std::vector<std::optional<Index>>& assignment, bool optimal) {
  MatchReport report;
  report.optimal = optimal;
  report.permutation = assignment;
  report.signs.assign(assignment.size(), 1);
  std::vector<char> hit(static_cast<std::size_t>(truth.cols()), 0);
  double sq = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (!assignment[i]) continue;
    const Index j = *assignment[i];
    hit[static_cast<std::size_t>(j)] = 1;
    const double c = estimates.col(static_cast<Index>(i)).dot(truth.col(j));
    const int s = c < 0.0 ? -1 : 1;
    report.signs[i] = s;
    report.per_component_correlations.push_back(std::abs(c));
    sq += (s * estimates.col(static_cast<Index>(i)) - truth.col(j)).squaredNorm();
  }
  report.frobenius_error = std::sqrt(sq);
  for (Index j = 0; j < truth.cols(); ++j) {
    if (!hit[static_cast<std::size_t>(j)]) report.missed.push_back(j);
  }
  return report;
}

void check_match_inputs(const Matrix& estimates, const Matrix& truth) {
  if (estimates.cols() == 0) throw InvalidArgument("match_and_score: no estimates");
  if (estimates.rows() != truth.rows()) throw InvalidArgument("match_and_score: dimension mismatch");
}

}  // namespace

MatchReport match_greedy(const Matrix& estimates, const Matrix& truth) {
  check_match_inputs(estimates, truth);
  const Matrix corr = (estimates.transpose() * truth).cwiseAbs();
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(corr.size()));
  for (Index i = 0; i < corr.rows(); ++i)
    for (Index j = 0; j < corr.cols(); ++j) pairs.emplace_back(i, j);
  std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
    return corr(a.first, a.second) > corr(b.first, b.second);
  });
  std::vector<std::optional<Index>> assignment(static_cast<std::size_t>(estimates.cols()));
  std::vector<char> taken(static_cast<std::size_t>(truth.cols()), 0);
  for (const auto& [i, j] : pairs) {
    if (assignment[static_cast<std::size_t>(i)] || taken[static_cast<std::size_t>(j)]) continue;
    assignment[static_cast<std::size_t>(i)] = j;
    taken[static_cast<std::size_t>(j)] = 1;
  }
  return finish_report(estimates, truth, assignment, false);
}

MatchReport match_and_score(const Matrix& estimates, const Matrix& truth, Index optimal_limit) {
  check_match_inputs(estimates, truth);
  const Index m = estimates.cols();
  const Index k = truth.cols();
  const Index n = std::max(m, k);
  if (n > optimal_limit) return match_greedy(estimates, truth);
  // Padding rows/columns cost 1, i.e. zero gain.
  Matrix cost = Matrix::Ones(n, n);
  cost.topLeftCorner(m, k) = Matrix::Ones(m, k) - (estimates.transpose() * truth).cwiseAbs();
  const std::vector<Index> row_to_col = hungarian(cost);
  std::vector<std::optional<Index>> assignment(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    const Index j = row_to_col[static_cast<std::size_t>(i)];
    if (j >= 0 && j < k) assignment[static_cast<std::size_t>(i)] = j;
  }
  return finish_report(estimates, truth, assignment, true);
}

// ---------------------------------------------------------------------------
// Multiview learning

TensorSource parse_tensor_source(const std::string& text) {
  if (text == "exact-tensor") return TensorSource::exact_tensor;
  if (text == "empirical-tensor") return TensorSource::empirical_tensor;
  if (text == "implicit-samples") return TensorSource::implicit_samples;
  throw InvalidArgument(fmt::format("unknown tensor source '{}'", text));
}

std::string to_string(TensorSource source) {
  switch (source) {
    case TensorSource::exact_tensor: return "exact-tensor";
    case TensorSource::empirical_tensor: return "empirical-tensor";
    case TensorSource::implicit_samples: return "implicit-samples";
  }
  return "unknown";
}

Matrix sample_inits(const SampleBatch& batch, Index max_inits) {
  batch.validate();
  const Matrix& z1 = batch.views[0];
  const Index limit = max_inits > 0 ? std::min(max_inits, z1.cols()) : z1.cols();
  Matrix inits(z1.rows(), limit);
  Index used = 0;
  for (Index tau = 0; tau < z1.cols() && used < limit; ++tau) {
    const double n = z1.col(tau).norm();
    if (n == 0.0) continue;
    inits.col(used++) = z1.col(tau) / n;
  }
  inits.conservativeResize(Eigen::NoChange, used);
  return inits;
}

DecompositionResult learn_multiview(const SampleBatch& batch, TensorSource source,
                                    const LearnConfig& config, const MixtureModel* model) {
  batch.validate();
  const Matrix inits = sample_inits(batch, config.max_inits);
  if (inits.cols() == 0) throw InvalidArgument("learn_multiview: every view-1 sample is zero");
  switch (source) {
    case TensorSource::exact_tensor: {
      if (model == nullptr) throw InvalidArgument("learn_multiview: exact-tensor source needs the model");
      if (model->dim() != batch.dim()) throw InvalidArgument("learn_multiview: model/batch dimension mismatch");
      const FactoredTensor3 tensor = model->population_tensor();
      return decompose(tensor, inits, config.power, config.cluster, config.threads);
    }
    case TensorSource::empirical_tensor: {
      const DenseTensor3 tensor = empirical_third_moment(batch);
      return decompose(tensor, inits, config.power, config.cluster, config.threads);
    }
    case TensorSource::implicit_samples: {
      const SampleMomentTensor tensor(batch);
      return decompose(tensor, inits, config.power, config.cluster, config.threads);
    }
  }
  throw InvalidArgument("learn_multiview: unknown tensor source");
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const DecompositionResult& result) {
  nlohmann::json estimates = nlohmann::json::array();
  for (Index i = 0; i < result.size(); ++i) {
    const auto& diag = result.diagnostics[static_cast<std::size_t>(i)];
    estimates.push_back({{"weight", result.weights(i)},
                         {"score", diag.final_score},
                         {"cluster_size", result.cluster_sizes[static_cast<std::size_t>(i)]},
                         {"iterations", diag.iterations},
                         {"monotone", diag.monotone},
                         {"fixed_point_residual", diag.fixed_point_residual},
                         {"source_init", diag.source_init}});
  }
  return {{"estimates", estimates},
          {"duplicates_dropped", result.duplicates_dropped},
          {"degenerate_starts", result.degenerate_starts}};
}

nlohmann::json to_json(const MatchReport& report) {
  nlohmann::json perm = nlohmann::json::array();
  for (const auto& p : report.permutation) perm.push_back(p ? nlohmann::json(*p) : nlohmann::json());
  return {{"frobenius_error", report.frobenius_error},
          {"per_component_correlations", report.per_component_correlations},
          {"permutation", perm},
          {"signs", report.signs},
          {"missed", report.missed},
          {"optimal", report.optimal}};
}

}  // namespace tpi
