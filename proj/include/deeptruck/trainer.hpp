#pragma once

// K-step unfolded, teacher-forced training of the deep model with
// mini-batch Adagrad and hand-written backpropagation through time.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <sstream>
#include <vector>

#include "deeptruck/config.hpp"
#include "deeptruck/deepmodel.hpp"
#include "deeptruck/episode.hpp"
#include "deeptruck/error.hpp"
#include "deeptruck/optim.hpp"
#include "deeptruck/rng.hpp"

namespace deeptruck {

/// K consecutive teacher-forced steps of one episode starting at k0.
struct Slice {
  const Episode* episode = nullptr;
  std::size_t k0 = 0;
};

struct TrainConfig {
  std::size_t K = 64;                  // unroll length
  std::size_t M = 32;                  // slices per gradient estimate
  std::size_t N = 10;                  // mini-batches per epoch
  std::size_t epochs = 600;
  double learning_rate = 0.05;
  double adagrad_epsilon = 1e-8;
  std::optional<double> gradient_clip_norm = 5.0;
  std::uint64_t seed = 1;              // parameter init and slice sampling
  std::uint64_t split_seed = 7;        // train/validation split
  double validation_fraction = 0.2;
  std::size_t validation_slices = 64;  // teacher-forced loss
  std::size_t validation_rollouts = 32;
  std::size_t deploy_horizon = 400;    // 40 s at 10 Hz
  bool use_grade = true;
  ModelArch arch;

  void validate() const {
    if (K < 1 || M < 1 || N < 1) throw Error(ErrorKind::InvalidInput, "train: K, M and N must be >= 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::InvalidInput, "train: learning rate must be >= 0");
    if (!(adagrad_epsilon > 0.0)) throw Error(ErrorKind::InvalidInput, "train: epsilon must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw Error(ErrorKind::InvalidInput, "train: validation fraction must lie in (0, 1)");
  }

  static TrainConfig from_config(const Config& c) {
    TrainConfig t;
    t.K = static_cast<std::size_t>(c.get_int("K", static_cast<long long>(t.K)));
    t.M = static_cast<std::size_t>(c.get_int("M", static_cast<long long>(t.M)));
    t.N = static_cast<std::size_t>(c.get_int("N", static_cast<long long>(t.N)));
    t.epochs = static_cast<std::size_t>(c.get_int("epochs", static_cast<long long>(t.epochs)));
    t.learning_rate = c.get_double("learning_rate", t.learning_rate);
    t.adagrad_epsilon = c.get_double("adagrad_epsilon", t.adagrad_epsilon);
    if (c.has("gradient_clip_norm")) {
      const auto v = c.get_string("gradient_clip_norm", "");
      if (v == "none") t.gradient_clip_norm.reset();
      else t.gradient_clip_norm = parse_double(v, "gradient_clip_norm");
    }
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(t.seed)));
    t.split_seed = static_cast<std::uint64_t>(c.get_int("split_seed", static_cast<long long>(t.split_seed)));
    t.validation_fraction = c.get_double("validation_fraction", t.validation_fraction);
    t.validation_slices = static_cast<std::size_t>(c.get_int("validation_slices", static_cast<long long>(t.validation_slices)));
    t.validation_rollouts =
        static_cast<std::size_t>(c.get_int("validation_rollouts", static_cast<long long>(t.validation_rollouts)));
    t.deploy_horizon = static_cast<std::size_t>(c.get_int("deploy_horizon", static_cast<long long>(t.deploy_horizon)));
    t.use_grade = c.get_bool("use_grade", t.use_grade);
    t.arch.hidden = c.get_int("hidden", t.arch.hidden);
    if (c.has("decoder_hidden")) {
      t.arch.decoder_hidden.clear();
      for (double d : c.get_doubles("decoder_hidden", {})) t.arch.decoder_hidden.push_back(static_cast<Index>(d));
    }
    t.validate();
    return t;
  }

  AdagradConfig optimizer() const { return AdagradConfig{learning_rate, adagrad_epsilon, gradient_clip_norm}; }

  std::string to_text() const {
    std::ostringstream o;
    std::string dec;
    for (std::size_t i = 0; i < arch.decoder_hidden.size(); ++i)
      dec += (i ? ", " : "") + std::to_string(arch.decoder_hidden[i]);
    o << "K = " << K << "\n"
      << "M = " << M << "\n"
      << "N = " << N << "\n"
      << "epochs = " << epochs << "\n"
      << "learning_rate = " << format_double(learning_rate) << "\n"
      << "adagrad_epsilon = " << format_double(adagrad_epsilon) << "\n"
      << "gradient_clip_norm = " << (gradient_clip_norm ? format_double(*gradient_clip_norm) : "none") << "\n"
      << "seed = " << seed << "\n"
      << "split_seed = " << split_seed << "\n"
      << "validation_fraction = " << format_double(validation_fraction) << "\n"
      << "validation_slices = " << validation_slices << "\n"
      << "validation_rollouts = " << validation_rollouts << "\n"
      << "deploy_horizon = " << deploy_horizon << "\n"
      << "use_grade = " << (use_grade ? "true" : "false") << "\n"
      << "hidden = " << arch.hidden << "\n"
      << "decoder_hidden = " << dec << "\n";
    return o.str();
  }
};

struct LossBreakdown {
  double total = 0.0;  // sum over samples, steps and channels
  double a = 0.0;      // per-channel means over samples and steps
  double v = 0.0;
  double f_rate = 0.0;
};

namespace detail {

/// Activations of a K-step teacher-forced pass over B slices, kept for the backward pass.
struct UnrolledTrace {
  std::vector<MatrixXd> input;                 // K x (in, B)
  std::vector<MatrixXd> gates;                 // K x (4h, B)
  std::vector<MatrixXd> c;                     // K+1, c[0] = 0
  std::vector<MatrixXd> h;                     // K+1, h[0] = 0
  std::vector<MatrixXd> tanh_c;                // K
  std::vector<std::vector<MatrixXd>> dec_act;  // K x hidden layers
  std::vector<MatrixXd> head;                  // K x (3, B), normalized decoder outputs
  std::vector<MatrixXd> y_hat;                 // K x (3, B)
  std::vector<MatrixXd> y_true;                // K x (3, B), targets y(k+1)
};

inline void check_slices(const std::vector<Slice>& batch, std::size_t K, const IoSpec& io) {
  if (batch.empty()) throw Error(ErrorKind::InvalidInput, "empty batch");
  for (const auto& s : batch) {
    if (!s.episode || s.k0 + K + 1 > s.episode->size())
      throw Error(ErrorKind::InvalidInput, "slice out of range");
    if (io.w_dim == 1 && !s.episode->has_grade())
      throw Error(ErrorKind::Shape, "model expects a grade channel the episode lacks");
  }
}

inline UnrolledTrace unroll(const DeepModelParams& p, const std::vector<Slice>& batch, std::size_t K) {
  const IoSpec& io = p.io();
  check_slices(batch, K, io);
  const Index B = static_cast<Index>(batch.size());
  const Index hs = p.hidden();
  UnrolledTrace tr;
  tr.input.resize(K);
  tr.gates.resize(K);
  tr.c.assign(K + 1, MatrixXd::Zero(hs, B));
  tr.h.assign(K + 1, MatrixXd::Zero(hs, B));
  tr.tanh_c.resize(K);
  tr.dec_act.resize(K);
  tr.head.resize(K);
  tr.y_hat.resize(K);
  tr.y_true.resize(K);
  Eigen::RowVectorXd prev_v(B);
  for (std::size_t j = 0; j < K; ++j) {
    MatrixXd& in = tr.input[j];
    in.resize(io.input_dim(), B);
    MatrixXd& target = tr.y_true[j];
    target.resize(kYDim, B);
    for (Index b = 0; b < B; ++b) {
      const Episode& ep = *batch[b].episode;
      const std::size_t k = batch[b].k0 + j;
      Index r = 0;
      in(r++, b) = ep.engine_cmd[k];
      in(r++, b) = ep.brake_cmd[k];
      if (io.w_dim == 1) in(r++, b) = ep.grade[k];
      in(r++, b) = ep.a[k];
      in(r++, b) = ep.v[k];
      in(r++, b) = ep.f_rate[k];
      prev_v[b] = ep.v[k];
      target(kOutA, b) = ep.a[k + 1];
      target(kOutV, b) = ep.v[k + 1];
      target(kOutF, b) = ep.f_rate[k + 1];
    }
    in = ((in.colwise() - io.input_offset).array().colwise() / io.input_scale.array()).matrix();
    lstm_forward_batch(p, in, tr.h[j], tr.c[j], tr.gates[j], tr.c[j + 1], tr.tanh_c[j], tr.h[j + 1]);
    tr.head[j] = decoder_forward_batch(p, tr.h[j + 1], tr.dec_act[j]);
    tr.y_hat[j] = constrain_outputs(io, tr.head[j], prev_v);
  }
  return tr;
}

inline LossBreakdown trace_loss(const UnrolledTrace& tr) {
  LossBreakdown L;
  double n = 0.0;
  for (std::size_t j = 0; j < tr.y_hat.size(); ++j) {
    const MatrixXd e = tr.y_hat[j] - tr.y_true[j];
    L.a += e.row(kOutA).squaredNorm();
    L.v += e.row(kOutV).squaredNorm();
    L.f_rate += e.row(kOutF).squaredNorm();
    n += static_cast<double>(e.cols());
  }
  L.total = L.a + L.v + L.f_rate;
  L.a /= n;
  L.v /= n;
  L.f_rate /= n;
  return L;
}

}  // namespace detail

/// Sum of squared output errors over all slices, steps and channels.
inline double loss_kstep(const DeepModelParams& p, const std::vector<Slice>& batch, std::size_t K,
                         LossBreakdown* breakdown = nullptr) {
  const LossBreakdown L = detail::trace_loss(detail::unroll(p, batch, K));
  if (breakdown) *breakdown = L;
  return L.total;
}

/// Exact gradient of loss_kstep by reverse accumulation through the unrolled graph.
inline VectorXd backprop_kstep(const DeepModelParams& p, const std::vector<Slice>& batch, std::size_t K,
                               double* loss_out = nullptr) {
  const auto tr = detail::unroll(p, batch, K);
  if (loss_out) *loss_out = detail::trace_loss(tr).total;

  const IoSpec& io = p.io();
  const Index hs = p.hidden();
  const Index n_in = io.input_dim();
  const Index B = static_cast<Index>(batch.size());
  const std::size_t L = p.decoder_layers();
  const auto& layout = p.layout();

  VectorXd grad = VectorXd::Zero(p.size());
  auto gW = view(grad, layout[DeepModelParams::lstm_W_index()]);
  auto gb = view(grad, layout[DeepModelParams::lstm_b_index()]);
  const auto W = p.lstm_W();

  MatrixXd dh_next = MatrixXd::Zero(hs, B);
  MatrixXd dc_next = MatrixXd::Zero(hs, B);
  MatrixXd dz(4 * hs, B);

  for (std::size_t jj = K; jj-- > 0;) {
    // output layer: d loss / d head
    const MatrixXd err = tr.y_hat[jj] - tr.y_true[jj];
    MatrixXd dhead = MatrixXd::Zero(kYDim, B);
    dhead.row(kOutA) = (2.0 * err.row(kOutA) + 2.0 * io.dt * err.row(kOutV)) * io.output_scale[kOutA];
    for (Index b = 0; b < B; ++b)
      if (tr.y_hat[jj](kOutF, b) > 0.0) dhead(kOutF, b) = 2.0 * err(kOutF, b) * io.output_scale[kOutF];

    // decoder, top to bottom
    MatrixXd delta = dhead;
    for (std::size_t l = L; l-- > 0;) {
      const MatrixXd& below = (l == 0) ? tr.h[jj + 1] : tr.dec_act[jj][l - 1];
      view(grad, layout[DeepModelParams::dec_W_index(l)]).noalias() += delta * below.transpose();
      view(grad, layout[DeepModelParams::dec_b_index(l)]).col(0) += delta.rowwise().sum();
      MatrixXd d_below = p.dec_W(l).transpose() * delta;
      if (l > 0) d_below.array() *= (1.0 - tr.dec_act[jj][l - 1].array().square());
      delta.swap(d_below);
    }

    // cell
    const MatrixXd dh = delta + dh_next;
    const MatrixXd& g = tr.gates[jj];
    const auto gi = g.topRows(hs).array();
    const auto gf = g.middleRows(hs, hs).array();
    const auto go = g.middleRows(2 * hs, hs).array();
    const auto gg = g.bottomRows(hs).array();
    const auto tc = tr.tanh_c[jj].array();
    const MatrixXd dc = (dh.array() * go * (1.0 - tc.square()) + dc_next.array()).matrix();
    dz.topRows(hs) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
    dz.middleRows(hs, hs) = (dc.array() * tr.c[jj].array() * gf * (1.0 - gf)).matrix();
    dz.middleRows(2 * hs, hs) = (dh.array() * tc * go * (1.0 - go)).matrix();
    dz.bottomRows(hs) = (dc.array() * gi * (1.0 - gg.square())).matrix();
    dc_next = (dc.array() * gf).matrix();

    gW.leftCols(n_in).noalias() += dz * tr.input[jj].transpose();
    gW.rightCols(hs).noalias() += dz * tr.h[jj].transpose();
    gb.col(0) += dz.rowwise().sum();
    dh_next.noalias() = W.rightCols(hs).transpose() * dz;
  }
  return grad;
}

/// Valid slice starts of a dataset, sampled uniformly over (episode, k0) pairs.
class SliceSampler {
 public:
  SliceSampler(const std::vector<const Episode*>& episodes, std::size_t K) : K_(K) {
    for (const Episode* ep : episodes) {
      if (ep->size() < K + 1) continue;
      episodes_.push_back(ep);
      const std::size_t n = ep->size() - K;  // k0 in [0, size - K - 1]
      cumulative_.push_back((cumulative_.empty() ? 0 : cumulative_.back()) + n);
    }
    if (episodes_.empty()) throw Error(ErrorKind::InvalidInput, "no episode is long enough for K-step slices");
  }

  std::size_t total() const { return cumulative_.back(); }

  Slice sample(Rng& rng) const {
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, total() - 1)(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), idx);
    const std::size_t e = static_cast<std::size_t>(it - cumulative_.begin());
    const std::size_t before = e == 0 ? 0 : cumulative_[e - 1];
    return Slice{episodes_[e], idx - before};
  }

  std::vector<Slice> batch(std::size_t M, Rng& rng) const {
    std::vector<Slice> out(M);
    for (auto& s : out) s = sample(rng);
    return out;
  }

 private:
  std::size_t K_;
  std::vector<const Episode*> episodes_;
  std::vector<std::size_t> cumulative_;
};

struct LearningCurvePoint {
  std::size_t epoch = 0;
  double train_form_loss = 0.0;   // mean per step and sample, teacher-forced, held-out slices
  double deploy_form_loss = 0.0;  // mean per step and rollout, closed-loop, held-out windows
};

struct TrainResult {
  DeepModelParams best;
  DeepModelParams final;
  std::vector<LearningCurvePoint> curve;
  std::size_t best_epoch = 0;
};

struct DatasetSplit {
  std::vector<const Episode*> train;
  std::vector<const Episode*> validation;
};

/// Shuffled episode-level split; at least one episode lands on each side.
inline DatasetSplit split_dataset(const std::vector<Episode>& episodes, double validation_fraction,
                                  std::uint64_t seed) {
  if (episodes.size() < 2) throw Error(ErrorKind::InvalidInput, "need at least two episodes to split");
  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(episodes.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, episodes.size() - 1);
  DatasetSplit s;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? s.validation : s.train).push_back(&episodes[order[i]]);
  return s;
}

/// Fixed evaluation windows of `length + 1` samples drawn from `episodes`.
inline std::vector<Slice> fixed_windows(const std::vector<const Episode*>& episodes, std::size_t length,
                                        std::size_t count, std::uint64_t seed) {
  std::vector<const Episode*> usable;
  for (const Episode* e : episodes)
    if (e->size() >= length + 1) usable.push_back(e);
  if (usable.empty()) return {};
  SliceSampler sampler(usable, length);
  Rng rng(splitmix64(seed ^ 0x77696e646f77ULL));
  return sampler.batch(count, rng);
}

/// Mean over windows and steps of the squared closed-loop prediction error.
inline double deployment_form_loss(const DeepModelParams& p, const std::vector<Slice>& windows, std::size_t horizon) {
  if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<const Episode*> eps;
  std::vector<std::size_t> starts;
  for (const auto& w : windows) {
    eps.push_back(w.episode);
    starts.push_back(w.k0);
  }
  const auto rollouts = forward_deployment_batch(p, eps, starts, horizon);
  double sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Episode& ep = *eps[i];
    for (std::size_t j = 1; j <= horizon; ++j) {
      const std::size_t k = starts[i] + j;
      const double ea = rollouts[i](kOutA, j) - ep.a[k];
      const double ev = rollouts[i](kOutV, j) - ep.v[k];
      const double ef = rollouts[i](kOutF, j) - ep.f_rate[k];
      sum += ea * ea + ev * ev + ef * ef;
    }
  }
  return sum / static_cast<double>(windows.size() * horizon);
}

inline double training_form_loss(const DeepModelParams& p, const std::vector<Slice>& slices, std::size_t K) {
  if (slices.empty()) return std::numeric_limits<double>::quiet_NaN();
  return loss_kstep(p, slices, K) / static_cast<double>(slices.size() * K);
}

using EpochCallback = std::function<void(const LearningCurvePoint&)>;

/// Trains from `init` on a train/validation split of `dataset`. The returned
/// curve has one row per epoch plus a row 0 for the initial parameters; the
/// best checkpoint minimizes the deployment-form validation loss.
inline TrainResult train(const DeepModelParams& init, const std::vector<Episode>& dataset, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const DatasetSplit split = split_dataset(dataset, cfg.validation_fraction, cfg.split_seed);
  const SliceSampler sampler(split.train, cfg.K);
  const auto val_slices = fixed_windows(split.validation, cfg.K, cfg.validation_slices, cfg.split_seed);
  const auto val_windows = fixed_windows(split.validation, cfg.deploy_horizon, cfg.validation_rollouts, cfg.split_seed + 1);

  TrainResult result;
  DeepModelParams params = init;
  AdagradState opt(params.size());
  const AdagradConfig opt_cfg = cfg.optimizer();
  Rng rng = stream_rng(cfg.seed, 0, 0x747261696eULL);
  const double per_batch = static_cast<double>(cfg.M * cfg.K);

  auto evaluate = [&](std::size_t epoch) {
    LearningCurvePoint pt;
    pt.epoch = epoch;
    pt.train_form_loss = training_form_loss(params, val_slices, cfg.K);
    try {
      pt.deploy_form_loss = deployment_form_loss(params, val_windows, cfg.deploy_horizon);
    } catch (const DivergenceError&) {
      pt.deploy_form_loss = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(pt.train_form_loss)) throw DivergenceError(static_cast<long>(epoch), "training diverged");
    return pt;
  };

  auto record = [&](const LearningCurvePoint& pt) {
    result.curve.push_back(pt);
    if (result.curve.size() == 1 || pt.deploy_form_loss < result.curve[result.best_epoch].deploy_form_loss) {
      result.best = params;
      result.best_epoch = result.curve.size() - 1;
    }
    if (on_epoch) on_epoch(pt);
  };

  record(evaluate(0));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t n = 0; n < cfg.N; ++n) {
      const auto batch = sampler.batch(cfg.M, rng);
      double loss = 0.0;
      VectorXd grad = backprop_kstep(params, batch, cfg.K, &loss);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw DivergenceError(static_cast<long>(epoch), "non-finite loss or gradient during training");
      grad /= per_batch;
      adagrad_update(params.theta(), grad, opt, opt_cfg);
    }
    record(evaluate(epoch));
  }
  result.final = params;
  return result;
}

}  // namespace deeptruck
