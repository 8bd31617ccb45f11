#include "tipsfuse/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::ot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_measure(const char* what, std::span<const double> m, std::size_t n) {
  if (m.size() != n) {
    throw ShapeError(std::string(what) + ": length " + std::to_string(m.size()) + ", expected " +
                     std::to_string(n));
  }
  double s = 0.0;
  for (double v : m) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) + ": entries must be finite and >= 0");
    }
    s += v;
  }
  if (std::fabs(s - 1.0) > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": mass " + std::to_string(s) + " != 1");
  }
}

void check_problem(const Matrix& cost, std::span<const double> mu, std::span<const double> nu) {
  if (cost.rows() == 0 || cost.cols() == 0) throw ShapeError("ot: empty cost matrix");
  if (first_non_finite(cost) != cost.size()) throw NumericError("ot: non-finite cost entry");
  check_measure("source marginal", mu, cost.rows());
  check_measure("target marginal", nu, cost.cols());
}

double log_or_neg_inf(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

// log(sum_k exp(x_k)) over a strided sequence.
template <typename Get>
double logsumexp(std::size_t n, Get get) {
  double m = kNegInf;
  for (std::size_t k = 0; k < n; ++k) m = std::max(m, get(k));
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(get(k) - m);
  return m + std::log(s);
}

double marginal_violation(const Matrix& t, std::span<const double> mu,
                          std::span<const double> nu) {
  double v = 0.0;
  std::vector<double> col(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      r += t(i, j);
      col[j] += t(i, j);
    }
    v += std::fabs(r - mu[i]);
  }
  for (std::size_t j = 0; j < t.cols(); ++j) v += std::fabs(col[j] - nu[j]);
  return v;
}

Matrix plan_from_potentials(const Matrix& cost, const std::vector<double>& f,
                            const std::vector<double>& g, double eps) {
  Matrix t(cost.rows(), cost.cols());
  for (std::size_t i = 0; i < cost.rows(); ++i)
    for (std::size_t j = 0; j < cost.cols(); ++j) {
      const double e = f[i] + g[j] - cost(i, j);
      t(i, j) = (f[i] == kNegInf || g[j] == kNegInf) ? 0.0 : std::exp(e / eps);
    }
  return t;
}

// Projects a nonnegative matrix onto the transport polytope while staying
// close to it: scale down over-full rows, then columns, then spread the
// remaining deficit as a rank-one correction.
void round_to_feasible(Matrix& t, std::span<const double> mu, std::span<const double> nu) {
  const std::size_t n = t.rows(), m = t.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += t(i, j);
    if (r > mu[i] && r > 0.0) {
      const double s = mu[i] / r;
      for (std::size_t j = 0; j < m; ++j) t(i, j) *= s;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += t(i, j);
    if (c > nu[j] && c > 0.0) {
      const double s = nu[j] / c;
      for (std::size_t i = 0; i < n; ++i) t(i, j) *= s;
    }
  }
  std::vector<double> er(n), ec(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += t(i, j);
    er[i] = std::max(0.0, mu[i] - r);
    total += er[i];
  }
  for (std::size_t j = 0; j < m; ++j) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += t(i, j);
    ec[j] = std::max(0.0, nu[j] - c);
  }
  if (total <= 0.0) return;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t(i, j) += er[i] * ec[j] / total;
}

double frobenius(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<double> uniform_marginal(std::size_t n) {
  if (n == 0) throw ShapeError("uniform_marginal: empty support");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

Matrix cost_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("cost_matrix: feature dims " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += (ar[k] - br[k]) * (ar[k] - br[k]);
      c(i, j) = std::sqrt(s);
    }
  }
  return c;
}

TransportPlan sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                       const OtConfig& config) {
  check_problem(cost, mu, nu);
  if (!(config.epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be > 0");
  if (config.max_iters < 1) throw std::invalid_argument("sinkhorn: max_iters must be >= 1");

  const std::size_t n = cost.rows(), m = cost.cols();
  const double eps = config.epsilon;
  std::vector<double> log_mu(n), log_nu(m);
  for (std::size_t i = 0; i < n; ++i) log_mu[i] = log_or_neg_inf(mu[i]);
  for (std::size_t j = 0; j < m; ++j) log_nu[j] = log_or_neg_inf(nu[j]);

  std::vector<double> f(n, 0.0), g(m, 0.0);
  TransportPlan out;
  out.source.assign(mu.begin(), mu.end());
  out.target.assign(nu.begin(), nu.end());

  Matrix t;
  for (int it = 1; it <= config.max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      if (log_mu[i] == kNegInf) {
        f[i] = kNegInf;
        continue;
      }
      const double lse =
          logsumexp(m, [&](std::size_t j) { return g[j] == kNegInf ? kNegInf : (g[j] - cost(i, j)) / eps; });
      f[i] = eps * (log_mu[i] - lse);
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (log_nu[j] == kNegInf) {
        g[j] = kNegInf;
        continue;
      }
      const double lse =
          logsumexp(n, [&](std::size_t i) { return f[i] == kNegInf ? kNegInf : (f[i] - cost(i, j)) / eps; });
      g[j] = eps * (log_nu[j] - lse);
    }
    t = plan_from_potentials(cost, f, g, eps);
    const double viol = marginal_violation(t, mu, nu);
    out.violation_history.push_back(viol);
    out.iterations = it;
    if (viol < config.tol) break;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (mu[i] <= 0.0) continue;
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) r += t(i, j);
    if (!(r > 0.0)) {
      throw NumericError("sinkhorn: kernel row " + std::to_string(i) +
                         " underflowed to zero; increase epsilon (now " + std::to_string(eps) + ")");
    }
  }
  round_to_feasible(t, mu, nu);
  out.plan = std::move(t);
  out.cost = frobenius(out.plan, cost);
  return out;
}

ad::Tensor ot_aggregate(const TransportPlan& t, const ad::Tensor& features) {
  if (t.rows() != features.rows()) {
    throw ShapeError("ot_aggregate: plan " + t.plan.shape_string() + " vs features " +
                     features.value().shape_string());
  }
  Matrix weights = t.plan.transposed();
  const double m = static_cast<double>(t.cols());
  for (auto& w : weights.values()) w *= m;
  return ad::matmul(features.tape()->constant(std::move(weights)), features);
}

Matrix ot_aggregate(const TransportPlan& t, const Matrix& features) {
  if (t.rows() != features.rows()) {
    throw ShapeError("ot_aggregate: plan " + t.plan.shape_string() + " vs features " +
                     features.shape_string());
  }
  Matrix out = matmul_tn(t.plan, features);
  const double m = static_cast<double>(t.cols());
  for (auto& v : out.values()) v *= m;
  return out;
}

// ---------------------------------------------------------------------------
// Exact solvers

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

void check_lp_size(const Matrix& cost) {
  if (cost.rows() * cost.cols() > 64) {
    throw std::invalid_argument("lp_oracle: " + cost.shape_string() +
                                " exceeds the desk-scale bound N*M <= 64");
  }
}

// Flows on a spanning tree of the bipartite graph are unique; recover them by
// repeatedly peeling leaves. Returns false when a flow is negative.
bool solve_tree(const std::vector<std::size_t>& cells, std::size_t n, std::size_t m,
                std::span<const double> mu, std::span<const double> nu, Matrix& plan) {
  const std::size_t nodes = n + m;
  std::vector<double> residual(nodes);
  for (std::size_t i = 0; i < n; ++i) residual[i] = mu[i];
  for (std::size_t j = 0; j < m; ++j) residual[n + j] = nu[j];
  std::vector<int> degree(nodes, 0);
  for (std::size_t c : cells) {
    ++degree[c / m];
    ++degree[n + c % m];
  }
  std::vector<bool> used(cells.size(), false);
  plan.fill(0.0);
  for (std::size_t done = 0; done < cells.size(); ++done) {
    std::size_t pick = cells.size();
    bool leaf_is_row = false;
    for (std::size_t e = 0; e < cells.size() && pick == cells.size(); ++e) {
      if (used[e]) continue;
      const std::size_t r = cells[e] / m, c = n + cells[e] % m;
      if (degree[r] == 1) {
        pick = e;
        leaf_is_row = true;
      } else if (degree[c] == 1) {
        pick = e;
        leaf_is_row = false;
      }
    }
    if (pick == cells.size()) return false;
    const std::size_t r = cells[pick] / m, c = n + cells[pick] % m;
    const double flow = leaf_is_row ? residual[r] : residual[c];
    if (flow < -1e-12) return false;
    plan(r, c - n) = std::max(0.0, flow);
    residual[r] -= flow;
    residual[c] -= flow;
    --degree[r];
    --degree[c];
    used[pick] = true;
  }
  return true;
}

}  // namespace

LpSolution lp_enumerate_bases(const Matrix& cost, std::span<const double> mu,
                              std::span<const double> nu) {
  check_problem(cost, mu, nu);
  check_lp_size(cost);
  const std::size_t n = cost.rows(), m = cost.cols(), cells = n * m, k = n + m - 1;
  std::vector<std::size_t> pick(k);
  std::iota(pick.begin(), pick.end(), 0);
  LpSolution best;
  best.cost = std::numeric_limits<double>::infinity();
  Matrix plan(n, m);
  while (true) {
    UnionFind uf(n + m);
    bool tree = true;
    for (std::size_t c : pick) {
      if (!uf.unite(c / m, n + c % m)) {
        tree = false;
        break;
      }
    }
    if (tree && solve_tree(pick, n, m, mu, nu, plan)) {
      const double c = frobenius(plan, cost);
      if (c < best.cost) {
        best.cost = c;
        best.plan = plan;
      }
    }
    // Next k-combination of [0, cells).
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == cells - k + i - 1) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
  return best;
}

LpSolution lp_min_cost_flow(const Matrix& cost, std::span<const double> mu,
                            std::span<const double> nu) {
  check_problem(cost, mu, nu);
  check_lp_size(cost);
  const std::size_t n = cost.rows(), m = cost.cols();
  // Nodes: 0 = source, 1..n rows, n+1..n+m cols, n+m+1 = sink.
  struct Edge {
    std::size_t to;
    double cap;
    double cost;
    std::size_t rev;
  };
  const std::size_t nodes = n + m + 2, src = 0, snk = n + m + 1;
  std::vector<std::vector<Edge>> graph(nodes);
  auto add_edge = [&](std::size_t a, std::size_t b, double cap, double c) {
    graph[a].push_back({b, cap, c, graph[b].size()});
    graph[b].push_back({a, 0.0, -c, graph[a].size() - 1});
  };
  for (std::size_t i = 0; i < n; ++i) add_edge(src, 1 + i, mu[i], 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) add_edge(1 + i, 1 + n + j, 2.0, cost(i, j));
  for (std::size_t j = 0; j < m; ++j) add_edge(1 + n + j, snk, nu[j], 0.0);

  constexpr double kCapEps = 1e-15;
  double shipped = 0.0;
  while (shipped < 1.0 - 1e-12) {
    std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> prev_node(nodes, nodes), prev_edge(nodes, 0);
    dist[src] = 0.0;
    for (std::size_t round = 0; round < nodes; ++round) {
      bool changed = false;
      for (std::size_t u = 0; u < nodes; ++u) {
        if (dist[u] == std::numeric_limits<double>::infinity()) continue;
        for (std::size_t e = 0; e < graph[u].size(); ++e) {
          const Edge& ed = graph[u][e];
          if (ed.cap <= kCapEps) continue;
          const double nd = dist[u] + ed.cost;
          if (nd < dist[ed.to] - 1e-15) {
            dist[ed.to] = nd;
            prev_node[ed.to] = u;
            prev_edge[ed.to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (prev_node[snk] == nodes) break;
    double push = std::numeric_limits<double>::infinity();
    for (std::size_t v = snk; v != src; v = prev_node[v]) {
      push = std::min(push, graph[prev_node[v]][prev_edge[v]].cap);
    }
    for (std::size_t v = snk; v != src; v = prev_node[v]) {
      Edge& ed = graph[prev_node[v]][prev_edge[v]];
      ed.cap -= push;
      graph[v][ed.rev].cap += push;
    }
    shipped += push;
  }

  LpSolution out;
  out.plan = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (const Edge& ed : graph[1 + i])
      if (ed.to >= 1 + n && ed.to <= n + m) out.plan(i, ed.to - 1 - n) = 2.0 - ed.cap;
  out.cost = frobenius(out.plan, cost);
  return out;
}

LpSolution lp_oracle(const Matrix& cost, std::span<const double> mu, std::span<const double> nu) {
  check_lp_size(cost);
  const std::size_t cells = cost.rows() * cost.cols();
  if (binomial(cells, cost.rows() + cost.cols() - 1) <= 3e6) {
    return lp_enumerate_bases(cost, mu, nu);
  }
  return lp_min_cost_flow(cost, mu, nu);
}

}  // namespace tipsfuse::ot
