#pragma once

// Accuracy and cost families, plus the synthetic datasets backing the empirical family.

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ifl/errors.hpp"
#include "ifl/numeric.hpp"
#include "json.hpp"

namespace ifl {

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

/// c(s) = sum_k coefficients[k] * s^(k+1). Nonnegative coefficients and no constant
/// term make every instance convex, nondecreasing on [0, inf) and zero at the origin.
class CostModel {
 public:
  enum class Kind { Linear, Polynomial };

  static CostModel linear(double c) { return CostModel(Kind::Linear, {c}); }
  static CostModel polynomial(Vec coefficients) { return CostModel(Kind::Polynomial, std::move(coefficients)); }

  Kind kind() const { return kind_; }
  const Vec& coefficients() const { return coeffs_; }

  double value(double s) const {
    double acc = 0.0;
    double power = s;
    for (double c : coeffs_) {
      acc += c * power;
      power *= s;
    }
    return acc;
  }

  double derivative(double s) const {
    double acc = 0.0;
    double power = 1.0;
    for (std::size_t k = 0; k < coeffs_.size(); ++k) {
      acc += static_cast<double>(k + 1) * coeffs_[k] * power;
      power *= s;
    }
    return acc;
  }

  double second_derivative(double s) const {
    double acc = 0.0;
    double power = 1.0;
    for (std::size_t k = 1; k < coeffs_.size(); ++k) {
      acc += static_cast<double>((k + 1) * k) * coeffs_[k] * power;
      power *= s;
    }
    return acc;
  }

  /// zeta for this agent: sup of c' on [0, s_max], attained at s_max by convexity.
  double max_derivative(double s_max) const { return derivative(s_max); }

  nlohmann::json describe() const {
    return {{"kind", kind_ == Kind::Linear ? "linear" : "polynomial"}, {"coefficients", coeffs_}};
  }

  bool operator==(const CostModel&) const = default;

 private:
  CostModel(Kind kind, Vec coeffs) : kind_(kind), coeffs_(std::move(coeffs)) {
    if (coeffs_.empty()) throw ConfigError("cost model needs at least one coefficient");
    if (kind_ == Kind::Linear && coeffs_.size() != 1) throw ConfigError("linear cost takes exactly one coefficient");
    for (double c : coeffs_)
      if (!std::isfinite(c) || c < 0.0) throw ConfigError("cost coefficients must be finite and nonnegative");
  }

  Kind kind_;
  Vec coeffs_;
};

inline void check_in_box(double s, double s_max) {
  if (!(s >= -1e-12 && s <= s_max + 1e-12))
    throw ConfigError("contribution " + format_double(s) + " outside [0, " + format_double(s_max) + "]");
}

inline double cost_eval(const CostModel& cm, double s, double s_max) {
  check_in_box(s, s_max);
  return cm.value(s);
}

inline double cost_deriv(const CostModel& cm, double s, double s_max) {
  check_in_box(s, s_max);
  return cm.derivative(s);
}

// ---------------------------------------------------------------------------
// Accuracy families
// ---------------------------------------------------------------------------

/// a_i(w, s) for every agent of a game. Implementations are immutable and safe to share.
class AccuracyModel {
 public:
  virtual ~AccuracyModel() = default;

  virtual std::string family() const = 0;
  virtual std::size_t agent_count() const = 0;
  virtual std::size_t dim() const = 0;

  virtual double value(std::size_t i, std::span<const double> w, std::span<const double> s) const = 0;

  /// Parameter direction agent i reports to the center. For closed-form families this is
  /// grad_w a_i; the empirical family returns its local training direction instead.
  virtual Vec grad_w(std::size_t i, std::span<const double> w, std::span<const double> s) const = 0;

  /// d a_i / d s_i.
  virtual double d_own(std::size_t i, std::span<const double> w, std::span<const double> s) const = 0;

  /// tau with d_own >= -tau everywhere, or nullopt when no finite bound exists.
  virtual std::optional<double> own_derivative_floor() const = 0;

  /// Canonical description used for digests and manifests.
  virtual nlohmann::json describe() const = 0;
};

/// a_i(w, s) = r_i - ||w - theta||^2 / (sigma0 + sum_j s_j).
class QuadraticAccuracy final : public AccuracyModel {
 public:
  QuadraticAccuracy(Vec theta, Vec r, double sigma0 = 1e-6)
      : theta_(std::move(theta)), r_(std::move(r)), sigma0_(sigma0) {
    if (theta_.empty()) throw ConfigError("quadratic accuracy needs a nonempty theta");
    if (r_.empty()) throw ConfigError("quadratic accuracy needs at least one agent offset");
    if (!(sigma0_ >= 0.0) || !std::isfinite(sigma0_)) throw ConfigError("sigma0 must be finite and >= 0");
    if (!all_finite(theta_) || !all_finite(r_)) throw ConfigError("quadratic accuracy parameters must be finite");
  }

  const Vec& theta() const { return theta_; }
  const Vec& offsets() const { return r_; }
  double sigma0() const { return sigma0_; }

  std::string family() const override { return "quadratic"; }
  std::size_t agent_count() const override { return r_.size(); }
  std::size_t dim() const override { return theta_.size(); }

  /// sigma0 + sum(s), rejecting the singular case.
  double denominator(std::span<const double> s) const {
    double total = sigma0_;
    for (double x : s) total += x;
    if (!(total > 0.0)) throw SingularDenominator("quadratic accuracy: sigma0 + sum(s) <= 0");
    return total;
  }

  double value(std::size_t i, std::span<const double> w, std::span<const double> s) const override {
    return r_[i] - squared_distance(w, theta_) / denominator(s);
  }

  Vec grad_w(std::size_t, std::span<const double> w, std::span<const double> s) const override {
    const double denom = denominator(s);
    Vec g(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) g[k] = 2.0 * (theta_[k] - w[k]) / denom;
    return g;
  }

  double d_own(std::size_t, std::span<const double> w, std::span<const double> s) const override {
    const double denom = denominator(s);
    return squared_distance(w, theta_) / (denom * denom);
  }

  std::optional<double> own_derivative_floor() const override { return 0.0; }

  nlohmann::json describe() const override {
    return {{"family", family()}, {"theta", theta_}, {"r", r_}, {"sigma0", sigma0_}};
  }

 private:
  Vec theta_;
  Vec r_;
  double sigma0_;
};

inline double quad_accuracy(const QuadraticAccuracy& qa, std::size_t i, std::span<const double> w,
                            std::span<const double> s) {
  return qa.value(i, w, s);
}
inline Vec quad_grad_w(const QuadraticAccuracy& qa, std::size_t i, std::span<const double> w,
                       std::span<const double> s) {
  return qa.grad_w(i, w, s);
}
inline double quad_dsi(const QuadraticAccuracy& qa, std::size_t i, std::span<const double> w,
                       std::span<const double> s) {
  return qa.d_own(i, w, s);
}

/// Jointly quadratic game with constant second derivatives:
///   a_i = r_i + q_i s_i - (alpha/2) s_i^2 + rho s_i sum_{j!=i} s_j + kappa s_i <v, w>
///         - (curvature/2) ||w - theta||^2
/// Its Hessian blocks are known in closed form, which makes it the reference instance for
/// the contraction analysis of the simultaneous dynamics.
class CoupledQuadraticAccuracy final : public AccuracyModel {
 public:
  struct Params {
    Vec r;
    Vec q;
    double alpha = 1.0;
    double rho = 0.0;
    double kappa = 0.0;
    Vec direction;  // v
    Vec theta;
    double curvature = 1.0;
  };

  explicit CoupledQuadraticAccuracy(Params p) : p_(std::move(p)) {
    if (p_.r.empty() || p_.q.size() != p_.r.size()) throw ConfigError("coupled accuracy: r and q must have length n");
    if (p_.theta.empty() || p_.direction.size() != p_.theta.size())
      throw ConfigError("coupled accuracy: theta and direction must have length m");
  }

  const Params& params() const { return p_; }

  std::string family() const override { return "coupled"; }
  std::size_t agent_count() const override { return p_.r.size(); }
  std::size_t dim() const override { return p_.theta.size(); }

  double value(std::size_t i, std::span<const double> w, std::span<const double> s) const override {
    const double others = sum_others(i, s);
    return p_.r[i] + p_.q[i] * s[i] - 0.5 * p_.alpha * s[i] * s[i] + p_.rho * s[i] * others +
           p_.kappa * s[i] * dot(p_.direction, w) - 0.5 * p_.curvature * squared_distance(w, p_.theta);
  }

  Vec grad_w(std::size_t i, std::span<const double> w, std::span<const double> s) const override {
    Vec g(w.size());
    for (std::size_t k = 0; k < w.size(); ++k)
      g[k] = p_.kappa * s[i] * p_.direction[k] - p_.curvature * (w[k] - p_.theta[k]);
    return g;
  }

  double d_own(std::size_t i, std::span<const double> w, std::span<const double> s) const override {
    return p_.q[i] - p_.alpha * s[i] + p_.rho * sum_others(i, s) + p_.kappa * dot(p_.direction, w);
  }

  std::optional<double> own_derivative_floor() const override { return std::nullopt; }

  nlohmann::json describe() const override {
    return {{"family", family()}, {"r", p_.r},         {"q", p_.q},         {"alpha", p_.alpha},
            {"rho", p_.rho},      {"kappa", p_.kappa}, {"direction", p_.direction},
            {"theta", p_.theta},  {"curvature", p_.curvature}};
  }

 private:
  static double sum_others(std::size_t i, std::span<const double> s) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (j != i) acc += s[j];
    return acc;
  }

  Params p_;
};

// ---------------------------------------------------------------------------
// Synthetic data and the empirical (linear softmax classifier) family
// ---------------------------------------------------------------------------

struct SyntheticDataset {
  std::size_t cols = 0;
  Vec features;  // row-major, rows() x cols
  std::vector<int> labels;
  std::uint64_t seed = 0;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t k) const { return {features.data() + k * cols, cols}; }

  bool operator==(const SyntheticDataset&) const = default;
};

struct SyntheticSplit {
  std::vector<SyntheticDataset> train;
  std::vector<SyntheticDataset> test;
};

/// Gaussian class blobs (unit covariance) around means of length `separation`. Every agent
/// draws from the same distribution. Output depends only on the arguments.
inline SyntheticSplit synth_dataset(std::uint64_t seed, std::size_t n_agents, std::size_t per_agent_size,
                                    std::size_t d, std::size_t classes, double separation,
                                    std::size_t test_size = 64) {
  if (n_agents < 1 || per_agent_size < 1 || test_size < 1 || d < 1)
    throw ConfigError("synthetic data: sizes must be >= 1");
  if (classes < 2) throw ConfigError("synthetic data: need at least 2 classes");
  if (!(separation > 0.0)) throw ConfigError("synthetic data: separation must be > 0");

  Rng rng(seed);
  std::vector<Vec> means(classes, Vec(d, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    if (classes <= d) {
      means[c][c] = separation;
    } else {
      for (auto& x : means[c]) x = rng.normal();
      const double len = norm2(means[c]);
      for (auto& x : means[c]) x *= separation / len;
    }
  }

  auto draw = [&](std::size_t count) {
    SyntheticDataset ds;
    ds.cols = d;
    ds.seed = seed;
    ds.features.reserve(count * d);
    ds.labels.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const auto label = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(classes) - 1));
      ds.labels.push_back(static_cast<int>(label));
      for (std::size_t j = 0; j < d; ++j) ds.features.push_back(means[label][j] + rng.normal());
    }
    return ds;
  };

  SyntheticSplit split;
  for (std::size_t i = 0; i < n_agents; ++i) {
    split.train.push_back(draw(per_agent_size));
    split.test.push_back(draw(test_size));
  }
  return split;
}

inline void write_dataset_csv(std::ostream& out, const SyntheticDataset& ds) {
  for (std::size_t j = 0; j < ds.cols; ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t k = 0; k < ds.rows(); ++k) {
    for (double x : ds.row(k)) out << format_double(x) << ',';
    out << ds.labels[k] << '\n';
  }
}

inline SyntheticDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset csv: missing header");
  std::size_t columns = 1;
  for (char ch : line) columns += ch == ',' ? 1 : 0;
  if (columns < 2 || line.substr(line.rfind(',') + 1) != "label")
    throw ConfigError("dataset csv: header must end with 'label'");
  SyntheticDataset ds;
  ds.cols = columns - 1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(fields, cell, ',')) {
      if (count < ds.cols) {
        ds.features.push_back(parse_double(cell));
      } else {
        ds.labels.push_back(static_cast<int>(parse_double(cell)));
      }
      ++count;
    }
    if (count != columns) throw ConfigError("dataset csv: wrong field count on line " + std::to_string(line_no));
  }
  return ds;
}

/// Multinomial logistic regression. Parameters are laid out class-major, each class
/// holding `features` weights followed by a bias.
struct LinearClassifierShape {
  std::size_t features = 0;
  std::size_t classes = 0;

  std::size_t dim() const { return classes * (features + 1); }
  bool operator==(const LinearClassifierShape&) const = default;
};

namespace detail {

inline void logits(const LinearClassifierShape& shape, std::span<const double> w, std::span<const double> x,
                   Vec& out) {
  out.assign(shape.classes, 0.0);
  const std::size_t stride = shape.features + 1;
  for (std::size_t c = 0; c < shape.classes; ++c) {
    double z = w[c * stride + shape.features];
    for (std::size_t j = 0; j < shape.features; ++j) z += w[c * stride + j] * x[j];
    out[c] = z;
  }
}

inline double log_sum_exp(const Vec& z) {
  const double top = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - top);
  return top + std::log(acc);
}

}  // namespace detail

/// Mean cross-entropy over the first `count` rows.
inline double cross_entropy(const LinearClassifierShape& shape, std::span<const double> w,
                            const SyntheticDataset& ds, std::size_t count) {
  if (w.size() != shape.dim()) throw ConfigError("classifier parameters have the wrong dimension");
  if (count == 0) return 0.0;
  Vec z;
  double total = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    detail::logits(shape, w, ds.row(k), z);
    total += detail::log_sum_exp(z) - z[static_cast<std::size_t>(ds.labels[k])];
  }
  return total / static_cast<double>(count);
}

inline Vec cross_entropy_gradient(const LinearClassifierShape& shape, std::span<const double> w,
                                  const SyntheticDataset& ds, std::size_t count) {
  if (w.size() != shape.dim()) throw ConfigError("classifier parameters have the wrong dimension");
  Vec grad(shape.dim(), 0.0);
  if (count == 0) return grad;
  const std::size_t stride = shape.features + 1;
  Vec z;
  for (std::size_t k = 0; k < count; ++k) {
    const auto x = ds.row(k);
    detail::logits(shape, w, x, z);
    const double lse = detail::log_sum_exp(z);
    for (std::size_t c = 0; c < shape.classes; ++c) {
      const double residual = std::exp(z[c] - lse) - (static_cast<std::size_t>(ds.labels[k]) == c ? 1.0 : 0.0);
      for (std::size_t j = 0; j < shape.features; ++j) grad[c * stride + j] += residual * x[j];
      grad[c * stride + shape.features] += residual;
    }
  }
  for (auto& g : grad) g /= static_cast<double>(count);
  return grad;
}

/// Training-set accuracy (fraction of correctly classified rows), a test helper more than a model quantity.
inline double classification_rate(const LinearClassifierShape& shape, std::span<const double> w,
                                  const SyntheticDataset& ds) {
  Vec z;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ds.rows(); ++k) {
    detail::logits(shape, w, ds.row(k), z);
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    hits += best == static_cast<std::size_t>(ds.labels[k]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.rows());
}

struct LocalStep {
  Vec w;
  bool degenerate = false;  // no samples selected; w returned unchanged
};

/// a_i(w, s) = r_i - CE(w; test set of agent i). The test loss does not depend on s, so
/// d a_i / d s_i is 0 here; contributions matter through the training prefix that
/// grad_w (and local_training_step) uses: the first ceil(s_i) rows of agent i's train set.
class EmpiricalAccuracy final : public AccuracyModel {
 public:
  struct GeneratorParams {
    std::uint64_t seed = 0;
    std::size_t per_agent_size = 0;
    std::size_t test_size = 64;
    double separation = 1.0;

    bool operator==(const GeneratorParams&) const = default;
  };

  EmpiricalAccuracy(std::vector<SyntheticDataset> train, std::vector<SyntheticDataset> test, Vec r,
                    LinearClassifierShape shape, std::optional<GeneratorParams> generator = std::nullopt)
      : train_(std::move(train)), test_(std::move(test)), r_(std::move(r)), shape_(shape),
        generator_(std::move(generator)) {
    if (train_.empty() || train_.size() != test_.size() || train_.size() != r_.size())
      throw ConfigError("empirical accuracy: train, test and r need one entry per agent");
    for (std::size_t i = 0; i < train_.size(); ++i) {
      if (test_[i].rows() == 0) throw ConfigError("empirical accuracy: empty test set");
      if (train_[i].cols != shape_.features || test_[i].cols != shape_.features)
        throw ConfigError("empirical accuracy: feature width does not match the classifier");
    }
  }

  /// Builds the family from freshly generated synthetic data; r defaults to ln(classes).
  static std::shared_ptr<const EmpiricalAccuracy> generate(std::size_t n_agents, LinearClassifierShape shape,
                                                           GeneratorParams gen, std::optional<Vec> r = {}) {
    auto split = synth_dataset(gen.seed, n_agents, gen.per_agent_size, shape.features, shape.classes,
                               gen.separation, gen.test_size);
    Vec offsets = r ? *r : Vec(n_agents, std::log(static_cast<double>(shape.classes)));
    return std::make_shared<EmpiricalAccuracy>(std::move(split.train), std::move(split.test), std::move(offsets),
                                               shape, gen);
  }

  const LinearClassifierShape& shape() const { return shape_; }
  const SyntheticDataset& train_set(std::size_t i) const { return train_.at(i); }
  const SyntheticDataset& test_set(std::size_t i) const { return test_.at(i); }

  std::size_t prefix_size(std::size_t i, double s_i) const {
    if (!(s_i > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(std::ceil(s_i)), train_[i].rows());
  }

  /// L_i(w): cross-entropy on agent i's held-out set.
  double test_loss(std::size_t i, std::span<const double> w) const {
    return cross_entropy(shape_, w, test_[i], test_[i].rows());
  }

  double train_loss(std::size_t i, std::span<const double> w, double s_i) const {
    return cross_entropy(shape_, w, train_[i], prefix_size(i, s_i));
  }

  std::string family() const override { return "empirical"; }
  std::size_t agent_count() const override { return train_.size(); }
  std::size_t dim() const override { return shape_.dim(); }

  double value(std::size_t i, std::span<const double> w, std::span<const double>) const override {
    return r_[i] - test_loss(i, w);
  }

  Vec grad_w(std::size_t i, std::span<const double> w, std::span<const double> s) const override {
    Vec g = cross_entropy_gradient(shape_, w, train_[i], prefix_size(i, s[i]));
    for (auto& x : g) x = -x;
    return g;
  }

  double d_own(std::size_t, std::span<const double>, std::span<const double>) const override { return 0.0; }

  std::optional<double> own_derivative_floor() const override { return 0.0; }

  nlohmann::json describe() const override {
    nlohmann::json j = {{"family", family()},
                        {"r", r_},
                        {"features", shape_.features},
                        {"classes", shape_.classes}};
    if (generator_) {
      j["generator"] = {{"seed", generator_->seed},
                        {"per_agent_size", generator_->per_agent_size},
                        {"test_size", generator_->test_size},
                        {"separation", generator_->separation}};
    } else {
      std::size_t rows = 0;
      for (const auto& ds : train_) rows += ds.rows();
      j["train_rows"] = rows;
    }
    return j;
  }

 private:
  std::vector<SyntheticDataset> train_;
  std::vector<SyntheticDataset> test_;
  Vec r_;
  LinearClassifierShape shape_;
  std::optional<GeneratorParams> generator_;
};

inline double empirical_accuracy(const EmpiricalAccuracy& ea, std::size_t i, std::span<const double> w,
                                 std::span<const double> s) {
  return ea.value(i, w, s);
}

/// One gradient-descent step on the cross-entropy of agent i's first ceil(s_i) training rows.
inline LocalStep local_training_step(const EmpiricalAccuracy& ea, std::size_t i, std::span<const double> w,
                                     double s_i, double learn_rate) {
  LocalStep step{Vec(w.begin(), w.end()), false};
  const std::size_t count = ea.prefix_size(i, s_i);
  if (count == 0) {
    step.degenerate = true;
    return step;
  }
  const Vec grad = cross_entropy_gradient(ea.shape(), w, ea.train_set(i), count);
  for (std::size_t k = 0; k < grad.size(); ++k) step.w[k] -= learn_rate * grad[k];
  return step;
}

}  // namespace ifl
