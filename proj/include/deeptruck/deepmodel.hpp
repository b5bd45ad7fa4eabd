#pragma once

// Recurrent replica of a truck's longitudinal response.
//
// A single-layer LSTM consumes the normalized (u, w, y) of the current step
// and updates the hidden state; a tanh MLP decodes the state into normalized
// acceleration and fuel rate, and the speed channel is produced by the
// kinematic constraint v(k+1) = v(k) + a(k+1) dt. The decoder's own speed
// output exists but is never used.
//
// Two evaluation forms share the same cell:
//  * training form: the LSTM sees measured y(k) at every step;
//  * deployment form: the LSTM sees its own previous prediction.
//
// Output channel order is (a, v, f_rate) everywhere in this file.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deeptruck/episode.hpp"
#include "deeptruck/error.hpp"
#include "deeptruck/params.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

inline constexpr Index kOutA = 0;
inline constexpr Index kOutV = 1;
inline constexpr Index kOutF = 2;
inline constexpr Index kYDim = 3;

struct IoSpec {
  Index u_dim = 2;
  Index w_dim = 1;
  Index y_dim = kYDim;
  double dt = 0.1;
  // input channels in order E_cmd, B_cmd, [theta_rdg], a, v, f_rate
  std::vector<std::string> names{"E_cmd", "B_cmd", "theta_rdg", "a", "v", "f_rate"};
  std::vector<std::string> units{"%", "%", "%", "m/s^2", "m/s", "cm^3/s"};
  VectorXd input_offset;
  VectorXd input_scale;
  // outputs (a, v, f_rate)
  VectorXd output_offset;
  VectorXd output_scale;

  Index input_dim() const { return u_dim + w_dim + y_dim; }
  Index y_input_begin() const { return u_dim + w_dim; }

  static IoSpec identity(Index w_dim, double dt) {
    IoSpec io;
    io.w_dim = w_dim;
    io.dt = dt;
    if (w_dim == 0) {
      io.names = {"E_cmd", "B_cmd", "a", "v", "f_rate"};
      io.units = {"%", "%", "m/s^2", "m/s", "cm^3/s"};
    }
    io.input_offset = VectorXd::Zero(io.input_dim());
    io.input_scale = VectorXd::Ones(io.input_dim());
    io.output_offset = VectorXd::Zero(kYDim);
    io.output_scale = VectorXd::Ones(kYDim);
    return io;
  }

  void validate() const {
    if (u_dim != 2 || y_dim != kYDim || (w_dim != 0 && w_dim != 1))
      throw Error(ErrorKind::Shape, "io spec: expected u_dim=2, w_dim in {0,1}, y_dim=3");
    if (input_offset.size() != input_dim() || input_scale.size() != input_dim() ||
        output_offset.size() != kYDim || output_scale.size() != kYDim)
      throw Error(ErrorKind::Shape, "io spec: normalization size mismatch");
    if ((input_scale.array() <= 0.0).any() || (output_scale.array() <= 0.0).any())
      throw Error(ErrorKind::InvalidInput, "io spec: normalization scales must be positive");
    if (!(dt > 0.0)) throw Error(ErrorKind::InvalidInput, "io spec: dt must be positive");
  }

  double normalize_output(Index ch, double y) const { return (y - output_offset[ch]) / output_scale[ch]; }
  double denormalize_output(Index ch, double z) const { return z * output_scale[ch] + output_offset[ch]; }

  bool operator==(const IoSpec& o) const {
    return u_dim == o.u_dim && w_dim == o.w_dim && y_dim == o.y_dim && dt == o.dt && names == o.names &&
           units == o.units && input_offset == o.input_offset && input_scale == o.input_scale &&
           output_offset == o.output_offset && output_scale == o.output_scale;
  }
};

/// Per-channel mean/std normalization fitted on a set of episodes.
inline IoSpec fit_io_spec(const std::vector<Episode>& episodes, bool use_grade) {
  if (episodes.empty()) throw Error(ErrorKind::InvalidInput, "fit_io_spec: no episodes");
  IoSpec io = IoSpec::identity(use_grade ? 1 : 0, episodes.front().dt);
  const Index n_in = io.input_dim();
  VectorXd sum = VectorXd::Zero(n_in), sq = VectorXd::Zero(n_in);
  double count = 0.0;
  for (const auto& ep : episodes) {
    if (use_grade && !ep.has_grade()) throw Error(ErrorKind::InvalidInput, "fit_io_spec: episode lacks grade");
    for (std::size_t k = 0; k < ep.size(); ++k) {
      VectorXd row(n_in);
      Index j = 0;
      row[j++] = ep.engine_cmd[k];
      row[j++] = ep.brake_cmd[k];
      if (use_grade) row[j++] = ep.grade[k];
      row[j++] = ep.a[k];
      row[j++] = ep.v[k];
      row[j++] = ep.f_rate[k];
      sum += row;
      sq += row.cwiseProduct(row);
      count += 1.0;
    }
  }
  const VectorXd mean = sum / count;
  VectorXd var = sq / count - mean.cwiseProduct(mean);
  for (Index i = 0; i < n_in; ++i) io.input_scale[i] = std::sqrt(std::max(var[i], 0.0));
  for (Index i = 0; i < n_in; ++i)
    if (!(io.input_scale[i] > 1e-9)) io.input_scale[i] = 1.0;
  io.input_offset = mean;
  const Index yb = io.y_input_begin();
  io.output_offset = io.input_offset.segment(yb, kYDim);
  io.output_scale = io.input_scale.segment(yb, kYDim);
  return io;
}

struct ModelArch {
  Index hidden = 64;
  std::vector<Index> decoder_hidden{64, 64};

  bool operator==(const ModelArch&) const = default;
};

struct HiddenState {
  VectorXd cell;
  VectorXd hidden;

  static HiddenState zeros(Index h) { return {VectorXd::Zero(h), VectorXd::Zero(h)}; }
};

/// Parameters of the cell and decoder plus the normalization they were trained with.
class DeepModelParams {
 public:
  DeepModelParams() = default;

  DeepModelParams(IoSpec io, ModelArch arch) : io_(std::move(io)), arch_(std::move(arch)) {
    io_.validate();
    if (arch_.hidden < 1) throw Error(ErrorKind::Shape, "deep model: hidden size must be >= 1");
    const Index h = arch_.hidden;
    layout_.add("lstm.W", 4 * h, io_.input_dim() + h);
    layout_.add("lstm.b", 4 * h, 1);
    Index fan_in = h;
    for (std::size_t l = 0; l < arch_.decoder_hidden.size(); ++l) {
      layout_.add("decoder.W" + std::to_string(l), arch_.decoder_hidden[l], fan_in);
      layout_.add("decoder.b" + std::to_string(l), arch_.decoder_hidden[l], 1);
      fan_in = arch_.decoder_hidden[l];
    }
    const std::size_t l = arch_.decoder_hidden.size();
    layout_.add("decoder.W" + std::to_string(l), kYDim, fan_in);
    layout_.add("decoder.b" + std::to_string(l), kYDim, 1);
    theta_ = VectorXd::Zero(layout_.size());
  }

  const IoSpec& io() const { return io_; }
  const ModelArch& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  Index hidden() const { return arch_.hidden; }
  std::size_t decoder_layers() const { return arch_.decoder_hidden.size() + 1; }

  VectorXd& theta() { return theta_; }
  const VectorXd& theta() const { return theta_; }
  Index size() const { return theta_.size(); }

  Eigen::Map<const MatrixXd> lstm_W() const { return view(theta_, layout_[0]); }
  Eigen::Map<const MatrixXd> lstm_b() const { return view(theta_, layout_[1]); }
  Eigen::Map<const MatrixXd> dec_W(std::size_t l) const { return view(theta_, layout_[2 + 2 * l]); }
  Eigen::Map<const MatrixXd> dec_b(std::size_t l) const { return view(theta_, layout_[3 + 2 * l]); }

  static std::size_t lstm_W_index() { return 0; }
  static std::size_t lstm_b_index() { return 1; }
  static std::size_t dec_W_index(std::size_t l) { return 2 + 2 * l; }
  static std::size_t dec_b_index(std::size_t l) { return 3 + 2 * l; }

  /// 4h(h + in) + 4h + decoder weights and biases.
  Index expected_parameter_count() const {
    const Index h = arch_.hidden;
    Index n = 4 * h * (h + io_.input_dim()) + 4 * h;
    Index fan_in = h;
    for (Index width : arch_.decoder_hidden) {
      n += width * fan_in + width;
      fan_in = width;
    }
    return n + kYDim * fan_in + kYDim;
  }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias +1.
  void initialize(Rng& rng) {
    const Index h = arch_.hidden;
    for (std::size_t i = 0; i < layout_.blocks().size(); ++i) {
      const auto& blk = layout_[i];
      auto m = view(theta_, blk);
      if (blk.cols == 1) {
        m.setZero();
        continue;
      }
      const double bound = 1.0 / std::sqrt(static_cast<double>(blk.cols));
      for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) m(r, c) = uniform(rng, -bound, bound);
    }
    view(theta_, layout_[1]).block(h, 0, h, 1).setConstant(1.0);
  }

  bool operator==(const DeepModelParams& o) const {
    return io_ == o.io_ && arch_ == o.arch_ && layout_ == o.layout_ && theta_ == o.theta_;
  }

 private:
  IoSpec io_;
  ModelArch arch_;
  ParamLayout layout_;
  VectorXd theta_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

/// Gate pre-activations -> activations in place; row blocks are (i, f, o, g).
inline void activate_gates(MatrixXd& z, Index h) {
  z.topRows(3 * h) = (1.0 + (-z.topRows(3 * h).array()).exp()).inverse().matrix();
  z.bottomRows(h) = z.bottomRows(h).array().tanh().matrix();
}

}  // namespace detail

/// Batched cell update on normalized inputs (columns are independent samples).
/// `gates` receives the activated (i, f, o, g) block.
inline void lstm_forward_batch(const DeepModelParams& p, const MatrixXd& input, const MatrixXd& h_prev,
                               const MatrixXd& c_prev, MatrixXd& gates, MatrixXd& c, MatrixXd& tanh_c,
                               MatrixXd& h) {
  const Index hs = p.hidden();
  const Index n_in = p.io().input_dim();
  const auto W = p.lstm_W();
  gates.noalias() = W.leftCols(n_in) * input;
  gates.noalias() += W.rightCols(hs) * h_prev;
  gates.colwise() += p.lstm_b().col(0);
  detail::activate_gates(gates, hs);
  c = gates.middleRows(hs, hs).cwiseProduct(c_prev) + gates.topRows(hs).cwiseProduct(gates.bottomRows(hs));
  tanh_c = c.array().tanh().matrix();
  h = gates.middleRows(2 * hs, hs).cwiseProduct(tanh_c);
}

/// Decoder MLP on a batch of hidden states. `acts[l]` receives hidden layer l
/// activations; returns the normalized (a, v, f) head outputs.
inline MatrixXd decoder_forward_batch(const DeepModelParams& p, const MatrixXd& h, std::vector<MatrixXd>& acts) {
  const std::size_t hidden_layers = p.decoder_layers() - 1;
  acts.resize(hidden_layers);
  const MatrixXd* in = &h;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    acts[l].noalias() = p.dec_W(l) * (*in);
    acts[l].colwise() += p.dec_b(l).col(0);
    acts[l] = acts[l].array().tanh().matrix();
    in = &acts[l];
  }
  MatrixXd out = p.dec_W(hidden_layers) * (*in);
  out.colwise() += p.dec_b(hidden_layers).col(0);
  return out;
}

/// Constraint model: de-normalize the head, integrate speed from the previous
/// speed, clamp fuel rate at zero. `prev_v` holds one speed per column.
inline MatrixXd constrain_outputs(const IoSpec& io, const MatrixXd& head, const Eigen::RowVectorXd& prev_v) {
  MatrixXd y(kYDim, head.cols());
  y.row(kOutA) = head.row(kOutA).array() * io.output_scale[kOutA] + io.output_offset[kOutA];
  y.row(kOutV) = prev_v + y.row(kOutA) * io.dt;
  y.row(kOutF) = (head.row(kOutF).array() * io.output_scale[kOutF] + io.output_offset[kOutF]).max(0.0);
  return y;
}

/// Normalized LSTM input column from raw (u, w, y).
inline VectorXd make_input(const IoSpec& io, const VectorXd& u, const VectorXd& w, const VectorXd& y) {
  if (u.size() != io.u_dim || w.size() != io.w_dim || y.size() != kYDim)
    throw Error(ErrorKind::Shape, "model input dimensions do not match io spec");
  VectorXd x(io.input_dim());
  x << u, w, y;
  return ((x - io.input_offset).array() / io.input_scale.array()).matrix();
}

inline HiddenState lstm_step(const HiddenState& x, const VectorXd& u, const VectorXd& w, const VectorXd& y_in,
                             const DeepModelParams& p) {
  if (!u.allFinite() || !w.allFinite() || !y_in.allFinite() || !x.cell.allFinite() || !x.hidden.allFinite())
    throw Error(ErrorKind::InvalidInput, "lstm_step: non-finite input");
  const MatrixXd input = make_input(p.io(), u, w, y_in);
  MatrixXd gates, c, tanh_c, h;
  lstm_forward_batch(p, input, x.hidden, x.cell, gates, c, tanh_c, h);
  return HiddenState{c.col(0), h.col(0)};
}

/// y(k+1) from the state after the cell update and the speed at step k.
inline VectorXd decode(const HiddenState& x, const VectorXd& prev_y, const DeepModelParams& p) {
  std::vector<MatrixXd> acts;
  const MatrixXd head = decoder_forward_batch(p, x.hidden, acts);
  Eigen::RowVectorXd prev_v(1);
  prev_v[0] = prev_y[kOutV];
  return constrain_outputs(p.io(), head, prev_v).col(0);
}

inline VectorXd episode_u(const Episode& ep, std::size_t k) {
  VectorXd u(2);
  u << ep.engine_cmd[k], ep.brake_cmd[k];
  return u;
}

inline VectorXd episode_w(const Episode& ep, std::size_t k, Index w_dim) {
  VectorXd w(w_dim);
  if (w_dim == 1) {
    if (!ep.has_grade()) throw Error(ErrorKind::Shape, "model expects a grade channel the episode lacks");
    w[0] = ep.grade[k];
  }
  return w;
}

inline VectorXd episode_y(const Episode& ep, std::size_t k) {
  VectorXd y(kYDim);
  y << ep.a[k], ep.v[k], ep.f_rate[k];
  return y;
}

/// Teacher-forced predictions for steps k0+1 .. k0+K (3 x K, rows a, v, f).
inline MatrixXd forward_training(const DeepModelParams& p, const Episode& ep, std::size_t k0, std::size_t K) {
  if (K == 0 || k0 + K + 1 > ep.size()) throw Error(ErrorKind::InvalidInput, "forward_training: slice out of range");
  HiddenState x = HiddenState::zeros(p.hidden());
  MatrixXd out(kYDim, static_cast<Index>(K));
  for (std::size_t j = 0; j < K; ++j) {
    const std::size_t k = k0 + j;
    const VectorXd y_k = episode_y(ep, k);
    x = lstm_step(x, episode_u(ep, k), episode_w(ep, k, p.io().w_dim), y_k, p);
    out.col(static_cast<Index>(j)) = decode(x, y_k, p);
  }
  return out;
}

/// Closed-loop state of a deployed model: hidden state plus the last prediction.
struct DeploymentState {
  HiddenState x;
  VectorXd y;  // (a, v, f_rate)

  static DeploymentState start(const DeepModelParams& p, const VectorXd& y0) {
    return DeploymentState{HiddenState::zeros(p.hidden()), y0};
  }
};

/// One closed-loop step; throws DivergenceError carrying `step` on a non-finite result.
inline DeploymentState deploy_step(const DeploymentState& s, const VectorXd& u, const VectorXd& w,
                                   const DeepModelParams& p, long step = 0) {
  if (!u.allFinite() || !w.allFinite()) throw Error(ErrorKind::InvalidInput, "deploy_step: non-finite input");
  DeploymentState next;
  const MatrixXd input = make_input(p.io(), u, w, s.y);
  MatrixXd gates, c, tanh_c, h;
  lstm_forward_batch(p, input, s.x.hidden, s.x.cell, gates, c, tanh_c, h);
  next.x = HiddenState{c.col(0), h.col(0)};
  next.y = decode(next.x, s.y, p);
  if (!next.y.allFinite() || !next.x.cell.allFinite() || !next.x.hidden.allFinite())
    throw DivergenceError(step, "deployment rollout produced a non-finite value");
  return next;
}

/// Closed-loop rollout (3 x (N+1)); column 0 is y0, column k the prediction for step k.
inline MatrixXd forward_deployment(const DeepModelParams& p, const MatrixXd& u, const MatrixXd& w,
                                   const VectorXd& y0, std::size_t steps) {
  const auto N = static_cast<Index>(steps);
  if (u.rows() != p.io().u_dim || w.rows() != p.io().w_dim || u.cols() < N || (p.io().w_dim > 0 && w.cols() < N))
    throw Error(ErrorKind::Shape, "forward_deployment: input series too short or wrong width");
  if (y0.size() != kYDim) throw Error(ErrorKind::Shape, "forward_deployment: y0 must have 3 entries");
  MatrixXd out(kYDim, N + 1);
  out.col(0) = y0;
  DeploymentState s = DeploymentState::start(p, y0);
  VectorXd w_k(p.io().w_dim);
  for (Index k = 0; k < N; ++k) {
    if (p.io().w_dim > 0) w_k = w.col(k);
    s = deploy_step(s, u.col(k), w_k, p, static_cast<long>(k));
    out.col(k + 1) = s.y;
  }
  return out;
}

/// Input series of an episode window as (u, w) matrices.
inline std::pair<MatrixXd, MatrixXd> episode_inputs(const Episode& ep, std::size_t k0, std::size_t n, Index w_dim) {
  MatrixXd u(2, static_cast<Index>(n)), w(w_dim, static_cast<Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    u.col(static_cast<Index>(j)) = episode_u(ep, k0 + j);
    if (w_dim > 0) w.col(static_cast<Index>(j)) = episode_w(ep, k0 + j, w_dim);
  }
  return {u, w};
}

/// Deployment rollout of many windows at once (columns); same arithmetic as
/// forward_deployment up to summation order. Returns one 3 x (N+1) matrix per window.
inline std::vector<MatrixXd> forward_deployment_batch(const DeepModelParams& p, const std::vector<const Episode*>& eps,
                                                      const std::vector<std::size_t>& starts, std::size_t steps) {
  const Index B = static_cast<Index>(eps.size());
  const IoSpec& io = p.io();
  const Index n_in = io.input_dim();
  const Index hs = p.hidden();
  std::vector<MatrixXd> out(eps.size(), MatrixXd(kYDim, static_cast<Index>(steps) + 1));
  MatrixXd y(kYDim, B);
  for (Index b = 0; b < B; ++b) {
    if (starts[b] + steps >= eps[b]->size())
      throw Error(ErrorKind::InvalidInput, "forward_deployment_batch: window out of range");
    y.col(b) = episode_y(*eps[b], starts[b]);
    out[b].col(0) = y.col(b);
  }
  MatrixXd h = MatrixXd::Zero(hs, B), c = MatrixXd::Zero(hs, B);
  MatrixXd input(n_in, B), gates, c_next, tanh_c, h_next;
  std::vector<MatrixXd> acts;
  for (std::size_t j = 0; j < steps; ++j) {
    for (Index b = 0; b < B; ++b) {
      const std::size_t k = starts[b] + j;
      const Episode& ep = *eps[b];
      input(0, b) = ep.engine_cmd[k];
      input(1, b) = ep.brake_cmd[k];
      if (io.w_dim == 1) input(2, b) = ep.grade[k];
    }
    input.bottomRows(kYDim) = y;
    input = ((input.colwise() - io.input_offset).array().colwise() / io.input_scale.array()).matrix();
    lstm_forward_batch(p, input, h, c, gates, c_next, tanh_c, h_next);
    h.swap(h_next);
    c.swap(c_next);
    const MatrixXd head = decoder_forward_batch(p, h, acts);
    y = constrain_outputs(io, head, y.row(kOutV));
    if (!y.allFinite()) throw DivergenceError(static_cast<long>(j), "batched deployment rollout diverged");
    for (Index b = 0; b < B; ++b) out[b].col(static_cast<Index>(j) + 1) = y.col(b);
  }
  return out;
}

}  // namespace deeptruck
