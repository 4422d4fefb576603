#pragma once

// Evaluation metrics for per-point affordance maps (aIOU, AUC, SIM, MAE), the
// per-affordance report, and a PCA projection for feature inspection.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hammer/errors.hpp"

namespace hammer {

inline constexpr int kIouThresholdCount = 19;

/// Threshold t_k = k / 20 for k = 1..19.
inline double iou_threshold(int k) { return static_cast<double>(k) / 20.0; }

namespace detail {

inline void require_same_length(std::span<const double> p, std::span<const double> y, const char* op) {
  if (p.size() != y.size()) throw DimensionError(detail::concat(op, ": ", p.size(), " predictions vs ", y.size(), " targets"));
  if (p.empty()) throw ContractError(std::string(op) + ": empty input");
}

}  // namespace detail

/// Mean IOU over thresholds {0.05, ..., 0.95}; predictions binarized with a
/// strict p > t, ground truth at y > 0. nullopt when the ground truth has no
/// positive point.
inline std::optional<double> aiou(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "aiou");
  std::size_t positives = 0;
  for (double v : y) positives += v > 0.0;
  if (positives == 0) return std::nullopt;
  double total = 0.0;
  for (int k = 1; k <= kIouThresholdCount; ++k) {
    const double t = iou_threshold(k);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool pred = p[i] > t, gt = y[i] > 0.0;
      tp += pred && gt;
      fp += pred && !gt;
      fn += !pred && gt;
    }
    const std::size_t uni = tp + fp + fn;
    total += uni == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(uni);
  }
  return total / kIouThresholdCount;
}

/// ROC area via the Mann-Whitney statistic, ties counted as one half.
/// nullopt when the binarized ground truth has a single class.
inline std::optional<double> auc(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "auc");
  std::vector<std::pair<double, bool>> s;
  s.reserve(p.size());
  std::size_t npos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.emplace_back(p[i], y[i] > 0.0);
    npos += y[i] > 0.0;
  }
  const std::size_t nneg = p.size() - npos;
  if (npos == 0 || nneg == 0) return std::nullopt;
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the count of (positive > negative) pairs plus ties, kept integral.
  std::size_t twice = 0, neg_below = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i, pos_here = 0, neg_here = 0;
    while (j < s.size() && s[j].first == s[i].first) {
      (s[j].second ? pos_here : neg_here) += 1;
      ++j;
    }
    twice += pos_here * (2 * neg_below + neg_here);
    neg_below += neg_here;
    i = j;
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

/// Sum of pointwise minima after normalizing both inputs to unit sum.
/// nullopt when either input sums to zero.
inline std::optional<double> sim(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "sim");
  double sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sy += y[i];
  }
  if (!(sp > 0.0) || !(sy > 0.0)) return std::nullopt;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i] / sp, y[i] / sy);
  return s;
}

inline double mae(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

struct SampleMetrics {
  std::string id;
  std::string affordance;
  std::optional<double> aiou, auc, sim;
  double mae = 0.0;
};

inline SampleMetrics evaluate_sample(std::string id, std::string affordance, std::span<const double> p,
                                     std::span<const double> y) {
  SampleMetrics m;
  m.id = std::move(id);
  m.affordance = std::move(affordance);
  m.aiou = hammer::aiou(p, y);
  m.auc = hammer::auc(p, y);
  m.sim = hammer::sim(p, y);
  m.mae = hammer::mae(p, y);
  return m;
}

struct MetricSummary {
  double aiou = 0, auc = 0, sim = 0, mae = 0;
  std::size_t n_aiou = 0, n_auc = 0, n_sim = 0, n_mae = 0;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;  // sorted by id
  std::map<std::string, MetricSummary> per_affordance;
  MetricSummary overall;
  std::map<std::string, std::size_t> skipped;  // reason -> count
};

namespace detail {

struct Accumulator {
  double aiou = 0, auc = 0, sim = 0, mae = 0;
  std::size_t n_aiou = 0, n_auc = 0, n_sim = 0, n_mae = 0;

  void add(const SampleMetrics& m) {
    if (m.aiou) aiou += *m.aiou, ++n_aiou;
    if (m.auc) auc += *m.auc, ++n_auc;
    if (m.sim) sim += *m.sim, ++n_sim;
    mae += m.mae;
    ++n_mae;
  }
  MetricSummary summary() const {
    auto avg = [](double s, std::size_t n) { return n ? s / static_cast<double>(n) : 0.0; };
    return {avg(aiou, n_aiou), avg(auc, n_auc), avg(sim, n_sim), avg(mae, n_mae), n_aiou, n_auc, n_sim, n_mae};
  }
};

}  // namespace detail

/// Merges per-sample results; the outcome does not depend on input order.
inline MetricReport build_report(std::vector<SampleMetrics> samples) {
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  MetricReport r;
  detail::Accumulator all;
  std::map<std::string, detail::Accumulator> groups;
  for (const auto& m : samples) {
    all.add(m);
    groups[m.affordance].add(m);
    if (!m.aiou) ++r.skipped["aiou: all-zero ground truth"];
    if (!m.auc) ++r.skipped["auc: single-class ground truth"];
    if (!m.sim) ++r.skipped["sim: zero-sum prediction or ground truth"];
  }
  r.overall = all.summary();
  for (const auto& [k, acc] : groups) r.per_affordance[k] = acc.summary();
  r.samples = std::move(samples);
  return r;
}

inline nlohmann::json metric_constants_json() {
  std::vector<double> th;
  for (int k = 1; k <= kIouThresholdCount; ++k) th.push_back(iou_threshold(k));
  return {{"iou_thresholds", th},
          {"prediction_binarization", "p > t"},
          {"ground_truth_binarization", "y > 0"},
          {"auc", "Mann-Whitney, ties count 1/2, binarized ground truth"},
          {"degenerate_samples", "skipped per metric, counted in 'skipped'"}};
}

inline nlohmann::json to_json(const MetricSummary& s) {
  return {{"aiou", s.aiou}, {"auc", s.auc}, {"sim", s.sim}, {"mae", s.mae},
          {"count", {{"aiou", s.n_aiou}, {"auc", s.n_auc}, {"sim", s.n_sim}, {"mae", s.n_mae}}}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& m : r.samples) {
    samples.push_back({{"id", m.id}, {"affordance", m.affordance}, {"aiou", opt(m.aiou)}, {"auc", opt(m.auc)},
                       {"sim", opt(m.sim)}, {"mae", m.mae}});
  }
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [k, s] : r.per_affordance) per[k] = to_json(s);
  return {{"constants", metric_constants_json()}, {"overall", to_json(r.overall)}, {"per_affordance", per},
          {"skipped", r.skipped}, {"samples", samples}};
}

/// Aligned text table, one row per affordance plus the overall mean.
/// aIOU and AUC are printed in percent.
inline std::string to_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "affordance" << std::right << std::setw(8) << "aIOU" << std::setw(8) << "AUC"
     << std::setw(8) << "SIM" << std::setw(8) << "MAE" << std::setw(6) << "n" << "\n";
  auto line = [&](const std::string& name, const MetricSummary& s) {
    os << std::left << std::setw(16) << name << std::right << std::fixed << std::setprecision(2) << std::setw(8)
       << 100.0 * s.aiou << std::setw(8) << 100.0 * s.auc << std::setprecision(3) << std::setw(8) << s.sim
       << std::setw(8) << s.mae << std::setw(6) << s.n_mae << "\n";
  };
  for (const auto& [k, s] : r.per_affordance) line(k, s);
  line("overall", r.overall);
  for (const auto& [reason, n] : r.skipped) os << "skipped " << n << " (" << reason << ")\n";
  return os.str();
}

struct PcaResult {
  std::size_t rows = 0, k = 0;
  std::vector<double> projection;  // rows x k
  std::vector<double> explained_variance;  // per component
  bool rank_deficient = false;
};

/// Projects centered rows onto the top-k principal directions. Each direction
/// is signed so that its largest-magnitude entry is positive; directions with
/// no variance are zero-filled and flagged.
inline PcaResult pca_project(std::span<const double> features, std::size_t rows, std::size_t cols, std::size_t k = 3) {
  if (features.size() != rows * cols) throw DimensionError("pca_project: buffer does not match rows x cols");
  if (rows <= k) throw ContractError(detail::concat("pca_project: need more than k=", k, " rows, got ", rows));
  if (k == 0) throw ContractError("pca_project: k must be positive");
  Eigen::MatrixXd x(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features[i * cols + j];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(rows - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd values = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd vectors = eig.eigenvectors();
  const double top = std::max(values.size() ? values(values.size() - 1) : 0.0, 0.0);
  const double tol = std::max(top, 1.0) * 1e-12 * static_cast<double>(cols);

  PcaResult out;
  out.rows = rows;
  out.k = k;
  out.projection.assign(rows * k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const auto idx = static_cast<Eigen::Index>(cols) - 1 - static_cast<Eigen::Index>(c);
    if (idx < 0 || values(idx) <= tol) {
      out.rank_deficient = true;
      out.explained_variance.push_back(0.0);
      continue;
    }
    Eigen::VectorXd dir = vectors.col(idx);
    Eigen::Index arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir(arg) < 0) dir = -dir;
    const Eigen::VectorXd proj = x * dir;
    for (std::size_t i = 0; i < rows; ++i) out.projection[i * k + c] = proj(static_cast<Eigen::Index>(i));
    out.explained_variance.push_back(values(idx));
  }
  return out;
}

}  // namespace hammer
