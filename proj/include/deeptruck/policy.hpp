#pragma once

// Gaussian MLP policy: tanh hidden layers, a linear mean head and a
// state-independent log standard deviation per action channel.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "deeptruck/cacc_env.hpp"
#include "deeptruck/checkpoint.hpp"
#include "deeptruck/params.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

inline constexpr Index kActionDim = 2;
inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyArch {
  std::vector<Index> hidden{25, 25, 25};
};

/// Fixed affine maps: obs_n = (obs - obs_offset) / obs_scale and
/// mean = action_offset + action_scale * head.
struct PolicyScaling {
  VectorXd obs_offset;
  VectorXd obs_scale;
  VectorXd action_offset;
  VectorXd action_scale;

  static PolicyScaling identity(Index obs_dim) {
    return {VectorXd::Zero(obs_dim), VectorXd::Ones(obs_dim), VectorXd::Zero(kActionDim),
            VectorXd::Ones(kActionDim)};
  }

  bool operator==(const PolicyScaling& o) const {
    return obs_offset == o.obs_offset && obs_scale == o.obs_scale && action_offset == o.action_offset &&
           action_scale == o.action_scale;
  }
};

/// Scaling derived from the environment's initialization ranges. Speeds share
/// one map and the two gap channels share another.
inline PolicyScaling scaling_for(const CaccConfig& c, double engine_offset = 10.0, double engine_scale = 50.0,
                                 double brake_offset = 0.0, double brake_scale = 50.0, double gap_scale = 0.0) {
  PolicyScaling s = PolicyScaling::identity(c.obs_dim());
  const double v_lo = c.v_leader_min - c.speed_error_range;
  const double v_hi = c.v_leader_max + c.speed_error_range;
  const double g_lo = v_lo * c.tg_min - c.position_error_range;
  const double g_hi = v_hi * c.tg_max + c.position_error_range;
  const double v_mid = 0.5 * (v_lo + v_hi), v_half = std::max(0.5 * (v_hi - v_lo), 1e-6);
  const double g_mid = 0.5 * (g_lo + g_hi);
  const double g_half = gap_scale > 0.0 ? gap_scale : std::max(0.5 * (g_hi - g_lo), 1e-6);
  s.obs_offset.head(4) << v_mid, v_mid, g_mid, g_mid;
  s.obs_scale.head(4) << v_half, v_half, g_half, g_half;
  if (c.obs_dim() == 5) {
    s.obs_offset(4) = 0.5 * (c.grade_min + c.grade_max);
    s.obs_scale(4) = std::max(0.5 * (c.grade_max - c.grade_min), 1.0);
  }
  s.action_offset << engine_offset, brake_offset;
  s.action_scale << engine_scale, brake_scale;
  return s;
}

class PolicyParams {
 public:
  PolicyParams() = default;

  PolicyParams(Index obs_dim, PolicyArch arch, PolicyScaling scaling)
      : obs_dim_(obs_dim), arch_(std::move(arch)), scaling_(std::move(scaling)) {
    if (obs_dim_ <= 0) throw Error(ErrorKind::InvalidInput, "policy: observation dimension must be positive");
    if (scaling_.obs_offset.size() != obs_dim_ || scaling_.obs_scale.size() != obs_dim_ ||
        scaling_.action_offset.size() != kActionDim || scaling_.action_scale.size() != kActionDim)
      throw Error(ErrorKind::Shape, "policy: scaling does not match dimensions");
    if (!(scaling_.obs_scale.array() > 0.0).all())
      throw Error(ErrorKind::InvalidInput, "policy: observation scales must be positive");
    Index in = obs_dim_;
    for (std::size_t l = 0; l < arch_.hidden.size(); ++l) {
      if (arch_.hidden[l] <= 0) throw Error(ErrorKind::InvalidInput, "policy: layer width must be positive");
      layout_.add("policy.W" + std::to_string(l), arch_.hidden[l], in);
      layout_.add("policy.b" + std::to_string(l), arch_.hidden[l], 1);
      in = arch_.hidden[l];
    }
    layout_.add("policy.head.W", kActionDim, in);
    layout_.add("policy.head.b", kActionDim, 1);
    layout_.add("policy.log_std", kActionDim, 1);
    theta_ = VectorXd::Zero(layout_.size());
  }

  Index obs_dim() const { return obs_dim_; }
  const PolicyArch& arch() const { return arch_; }
  const PolicyScaling& scaling() const { return scaling_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t layers() const { return arch_.hidden.size() + 1; }  // hidden layers plus head

  VectorXd& theta() { return theta_; }
  const VectorXd& theta() const { return theta_; }

  Eigen::Map<const MatrixXd> W(std::size_t l) const { return view(theta_, layout_[2 * l]); }
  Eigen::Map<const MatrixXd> b(std::size_t l) const { return view(theta_, layout_[2 * l + 1]); }
  Eigen::Map<MatrixXd> W(std::size_t l) { return view(theta_, layout_[2 * l]); }
  Eigen::Map<MatrixXd> b(std::size_t l) { return view(theta_, layout_[2 * l + 1]); }
  const TensorBlock& log_std_block() const { return layout_[2 * layers()]; }
  VectorXd log_std() const { return view(theta_, log_std_block()).col(0); }

  void set_log_std(const VectorXd& ls) { view(theta_, log_std_block()) = ls; }

  void clamp_log_std() {
    auto m = view(theta_, log_std_block());
    m = m.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  /// Uniform(+-1/sqrt(fan_in)) hidden weights, a head scaled by `head_gain`,
  /// zero biases and a constant initial log standard deviation.
  void initialize(Rng& rng, double init_log_std, double head_gain = 0.01) {
    theta_.setZero();
    for (std::size_t l = 0; l < layers(); ++l) {
      auto w = W(l);
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      const double gain = l + 1 == layers() ? head_gain : 1.0;
      for (Index j = 0; j < w.cols(); ++j)
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = gain * uniform(rng, -bound, bound);
    }
    set_log_std(VectorXd::Constant(kActionDim, init_log_std));
    clamp_log_std();
  }

  bool operator==(const PolicyParams& o) const {
    return obs_dim_ == o.obs_dim_ && arch_.hidden == o.arch_.hidden && scaling_ == o.scaling_ &&
           layout_ == o.layout_ && theta_ == o.theta_;
  }

 private:
  Index obs_dim_ = 0;
  PolicyArch arch_;
  PolicyScaling scaling_;
  ParamLayout layout_;
  VectorXd theta_;
};

struct PolicyOutput {
  VectorXd mean;
  VectorXd std;
};

/// Mean actions for the columns of `obs`. acts[0] is the normalized input and
/// acts[l + 1] the tanh output of hidden layer l.
inline MatrixXd policy_mean_batch(const PolicyParams& p, const MatrixXd& obs, std::vector<MatrixXd>& acts) {
  if (obs.rows() != p.obs_dim())
    throw Error(ErrorKind::Shape, "policy expects " + std::to_string(p.obs_dim()) + "-dim observations, got " +
                                      std::to_string(obs.rows()));
  const PolicyScaling& s = p.scaling();
  acts.clear();
  acts.push_back(((obs.colwise() - s.obs_offset).array().colwise() / s.obs_scale.array()).matrix());
  const std::size_t hidden = p.layers() - 1;
  for (std::size_t l = 0; l < hidden; ++l) {
    MatrixXd z = p.W(l) * acts.back();
    z.colwise() += p.b(l).col(0);
    acts.push_back(z.array().tanh().matrix());
  }
  MatrixXd head = p.W(hidden) * acts.back();
  head.colwise() += p.b(hidden).col(0);
  return ((head.array().colwise() * s.action_scale.array()).colwise() + s.action_offset.array()).matrix();
}

inline PolicyOutput policy_forward(const VectorXd& obs, const PolicyParams& p) {
  std::vector<MatrixXd> acts;
  const MatrixXd m = policy_mean_batch(p, obs, acts);
  return {m.col(0), p.log_std().array().exp().matrix()};
}

inline VectorXd sample_action(const VectorXd& mean, const VectorXd& std, Rng& rng) {
  VectorXd a(mean.size());
  for (Index i = 0; i < mean.size(); ++i) {
    if (!(std(i) > 0.0)) throw Error(ErrorKind::InvalidInput, "sample_action: std must be positive");
    a(i) = normal(rng, mean(i), std(i));
  }
  return a;
}

inline double log_prob(const VectorXd& action, const VectorXd& mean, const VectorXd& std) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (Index i = 0; i < mean.size(); ++i) {
    const double z = (action(i) - mean(i)) / std(i);
    lp += -0.5 * z * z - std::log(std(i)) - half_log_2pi;
  }
  return lp;
}

/// Sum over columns t of weight(t) * d log pi(actions_t | obs_t) / d theta.
inline VectorXd log_prob_gradient(const PolicyParams& p, const MatrixXd& obs, const MatrixXd& actions,
                                  const VectorXd& weights) {
  const Index T = obs.cols();
  if (actions.rows() != kActionDim || actions.cols() != T || weights.size() != T)
    throw Error(ErrorKind::Shape, "log_prob_gradient: batch shapes disagree");
  std::vector<MatrixXd> acts;
  const MatrixXd mean = policy_mean_batch(p, obs, acts);
  const Eigen::ArrayXd inv_var = (-2.0 * p.log_std().array()).exp();
  VectorXd grad = VectorXd::Zero(p.layout().size());

  // d log pi / d mean and d log pi / d log_std, weighted per column.
  const Eigen::ArrayXXd diff = (actions - mean).array();
  MatrixXd d_mean = (diff.colwise() * inv_var).matrix();
  d_mean = d_mean * weights.asDiagonal();
  const Eigen::ArrayXXd z2 = diff.square().colwise() * inv_var;
  view(grad, p.log_std_block()) = ((z2 - 1.0).matrix() * weights);

  MatrixXd delta = (d_mean.array().colwise() * p.scaling().action_scale.array()).matrix();
  for (std::size_t l = p.layers(); l-- > 0;) {
    view(grad, p.layout()[2 * l]) = delta * acts[l].transpose();
    view(grad, p.layout()[2 * l + 1]) = delta.rowwise().sum();
    if (l == 0) break;
    delta = ((p.W(l).transpose() * delta).array() * (1.0 - acts[l].array().square())).matrix();
  }
  return grad;
}

inline Container to_container(const PolicyParams& p, const CaccConfig* env = nullptr) {
  Container c;
  c.kind = "policy";
  c.meta["obs_dim"] = std::to_string(p.obs_dim());
  std::string hidden;
  for (std::size_t i = 0; i < p.arch().hidden.size(); ++i)
    hidden += (i ? "," : "") + std::to_string(p.arch().hidden[i]);
  c.meta["hidden"] = hidden;
  c.meta["activation"] = "tanh";
  c.meta["action_order"] = "E_cmd,B_cmd";
  if (env) c.meta["grade_mode"] = to_string(env->grade_mode);
  c.add("norm.obs_offset", MatrixXd(p.scaling().obs_offset));
  c.add("norm.obs_scale", MatrixXd(p.scaling().obs_scale));
  c.add("norm.action_offset", MatrixXd(p.scaling().action_offset));
  c.add("norm.action_scale", MatrixXd(p.scaling().action_scale));
  for (const auto& blk : p.layout().blocks()) c.add(blk.name, view(p.theta(), blk));
  return c;
}

inline PolicyParams policy_from_container(const Container& c) {
  if (c.kind != "policy") throw Error(ErrorKind::Parse, "checkpoint holds '" + c.kind + "', not a policy");
  PolicyArch arch;
  arch.hidden.clear();
  for (const auto& h : split(c.get("hidden"), ',')) arch.hidden.push_back(parse_int(h));
  PolicyScaling s;
  s.obs_offset = c.matrix("norm.obs_offset").col(0);
  s.obs_scale = c.matrix("norm.obs_scale").col(0);
  s.action_offset = c.matrix("norm.action_offset").col(0);
  s.action_scale = c.matrix("norm.action_scale").col(0);
  PolicyParams p(parse_int(c.get("obs_dim")), arch, s);
  for (const auto& blk : p.layout().blocks()) {
    const MatrixXd m = c.matrix(blk.name);
    if (m.rows() != blk.rows || m.cols() != blk.cols)
      throw Error(ErrorKind::Shape, "tensor '" + blk.name + "' has the wrong shape");
    view(p.theta(), blk) = m;
  }
  if (!p.theta().allFinite()) throw Error(ErrorKind::InvalidInput, "checkpoint holds non-finite weights");
  return p;
}

inline void save_policy(const std::filesystem::path& path, const PolicyParams& p, const CaccConfig* env = nullptr) {
  save_container(path, to_container(p, env));
}

inline PolicyParams load_policy(const std::filesystem::path& path) {
  return policy_from_container(load_container(path));
}

/// Policy callable for rollouts: samples when `stochastic`, otherwise the mean.
inline PolicyFn as_policy_fn(const PolicyParams& p, bool stochastic) {
  return [&p, stochastic](const VectorXd& obs, Rng& rng) {
    const PolicyOutput out = policy_forward(obs, p);
    const VectorXd a = stochastic ? sample_action(out.mean, out.std, rng) : out.mean;
    return Action{a(0), a(1)};
  };
}

}  // namespace deeptruck
