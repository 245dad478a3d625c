#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluidsense/control.hpp"
#include "fluidsense/energy.hpp"
#include "fluidsense/expert.hpp"
#include "fluidsense/numerics/log.hpp"
#include "fluidsense/numerics/random.hpp"

// Conditional DDPM over port logits: schedule, MLP denoiser, training and
// energy-guided reverse sampling.
namespace fluidsense::diffusion {

/// Arrays are indexed by timestep t = 1..T; entry 0 holds the t = 0
/// convention (alpha_bar_0 = 1, beta = 0).
struct NoiseSchedule {
  int steps = 0;
  double beta_first = 0.0;
  double beta_last = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> beta_tilde;
};

inline NoiseSchedule build_schedule(int steps, double beta_1, double beta_T) {
  if (steps < 2) throw ConfigError("build_schedule: T must be >= 2");
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0)) {
    throw ConfigError("build_schedule: need 0 < beta_1 <= beta_T < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta_first = beta_1;
  s.beta_last = beta_T;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.beta_tilde.assign(n, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.beta[i] = t == steps ? beta_T : beta_1 + (beta_T - beta_1) * static_cast<double>(t - 1) / (steps - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
    s.beta_tilde[i] = s.beta[i] * (1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]);
  }
  return s;
}

struct ForwardDraw {
  RealVector z_t;
  RealVector eps;
};

/// z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps.
inline ForwardDraw forward_sample(const NoiseSchedule& s, const RealVector& z0, int t, numerics::RngStream& rng) {
  if (t < 1 || t > s.steps) throw ConfigError("forward_sample: t outside [1, T]");
  ForwardDraw d;
  d.eps = numerics::sample_standard_normal(rng, z0.size());
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  d.z_t = std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * d.eps;
  return d;
}

/// [sin(t w_j), cos(t w_j)] for j < dim/2 with w_j geometric from 1 down to 1e-4.
inline std::vector<double> time_embedding(double t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time_embedding: dimension must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int j = 0; j < half; ++j) {
    const double w = half == 1 ? 1.0 : std::pow(1e-4, static_cast<double>(j) / (half - 1));
    out[static_cast<std::size_t>(j)] = std::sin(t * w);
    out[static_cast<std::size_t>(half + j)] = std::cos(t * w);
  }
  return out;
}

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> w;  // out x in
  Vector<Scalar> b;
};

template <typename Scalar>
struct ForwardTrace {
  std::vector<Matrix<Scalar>> inputs;  // input to each layer
  std::vector<Matrix<Scalar>> pre;     // pre-activation of each layer
};

template <typename Scalar>
struct LayerGrads {
  std::vector<Matrix<Scalar>> dw;
  std::vector<Vector<Scalar>> db;
};

template <typename Scalar>
inline Scalar silu(Scalar x) {
  return x / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
inline Scalar silu_grad(Scalar x) {
  const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

/// MLP eps(z_t, t, c) over the column-stacked input [z_t; c; embed(t)]:
/// SiLU hidden layers, linear output. Columns are batch entries.
template <typename Scalar>
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(int num_ports, int context_len, std::vector<int> hidden, int time_embed_dim)
      : num_ports_(num_ports), context_len_(context_len), time_embed_dim_(time_embed_dim), hidden_(std::move(hidden)) {
    if (num_ports < 1 || context_len < 0) throw ConfigError("Denoiser: invalid input sizes");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ConfigError("Denoiser: time_embed_dim must be even");
    std::vector<int> sizes{input_dim()};
    for (int h : hidden_) {
      if (h < 1) throw ConfigError("Denoiser: hidden sizes must be positive");
      sizes.push_back(h);
    }
    sizes.push_back(num_ports);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      layers_.push_back({Matrix<Scalar>::Zero(sizes[l + 1], sizes[l]), Vector<Scalar>::Zero(sizes[l + 1])});
    }
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init_uniform(numerics::RngStream& rng) {
    for (DenseLayer<Scalar>& layer : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.w.cols()));
      for (Eigen::Index j = 0; j < layer.w.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
          layer.w(i, j) = static_cast<Scalar>(bound * (2.0 * rng.uniform() - 1.0));
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = static_cast<Scalar>(bound * (2.0 * rng.uniform() - 1.0));
    }
  }

  int num_ports() const noexcept { return num_ports_; }
  int context_len() const noexcept { return context_len_; }
  int time_embed_dim() const noexcept { return time_embed_dim_; }
  int input_dim() const noexcept { return num_ports_ + context_len_ + time_embed_dim_; }
  const std::vector<int>& hidden() const noexcept { return hidden_; }
  std::vector<DenseLayer<Scalar>>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const noexcept { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  /// Input matrix for a batch sharing one timestep.
  Matrix<Scalar> assemble_input(const Matrix<Scalar>& z, const Matrix<Scalar>& c, int t) const {
    check_shapes(z, c);
    const std::vector<double> emb = time_embedding(t, time_embed_dim_);
    Matrix<Scalar> x(input_dim(), z.cols());
    x.topRows(num_ports_) = z;
    x.middleRows(num_ports_, context_len_) = c.cols() == 1 ? Matrix<Scalar>(c.replicate(1, z.cols())) : c;
    for (int j = 0; j < time_embed_dim_; ++j) {
      x.row(num_ports_ + context_len_ + j).setConstant(static_cast<Scalar>(emb[static_cast<std::size_t>(j)]));
    }
    return x;
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, ForwardTrace<Scalar>* trace = nullptr) const {
    if (x.rows() != input_dim()) throw ConfigError("denoiser_forward: input has wrong dimension");
    if (trace) {
      trace->inputs.clear();
      trace->pre.clear();
    }
    Matrix<Scalar> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix<Scalar> a = layers_[l].w * h;
      a.colwise() += layers_[l].b;
      if (trace) {
        trace->inputs.push_back(h);
        trace->pre.push_back(a);
      }
      if (l + 1 < layers_.size()) {
        h = a.unaryExpr([](Scalar v) { return silu(v); });
      } else {
        h = std::move(a);
      }
    }
    return h;
  }

  /// eps for one latent vector.
  Vector<Scalar> operator()(const Vector<Scalar>& z, int t, const Vector<Scalar>& c) const {
    return forward(assemble_input(z, c, t)).col(0);
  }

  /// Reverse pass for upstream gradient d_out (K x B). Fills parameter
  /// gradients and/or the gradient with respect to the input matrix.
  void backward(const ForwardTrace<Scalar>& trace, const Matrix<Scalar>& d_out, LayerGrads<Scalar>* grads,
                Matrix<Scalar>* d_input) const {
    if (grads) {
      grads->dw.resize(layers_.size());
      grads->db.resize(layers_.size());
    }
    Matrix<Scalar> delta = d_out;  // gradient w.r.t. pre-activation of layer l
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (grads) {
        grads->dw[l].noalias() = delta * trace.inputs[l].transpose();
        grads->db[l] = delta.rowwise().sum();
      }
      if (l == 0 && !d_input) break;
      Matrix<Scalar> d_h = layers_[l].w.transpose() * delta;
      if (l == 0) {
        *d_input = std::move(d_h);
        break;
      }
      delta = d_h.cwiseProduct(trace.pre[l - 1].unaryExpr([](Scalar v) { return silu_grad(v); }));
    }
  }

  template <typename Other>
  Denoiser<Other> cast() const {
    Denoiser<Other> out(num_ports_, context_len_, hidden_, time_embed_dim_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.layers()[l].w = layers_[l].w.template cast<Other>();
      out.layers()[l].b = layers_[l].b.template cast<Other>();
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& l : layers_) {
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    }
    return true;
  }

 private:
  void check_shapes(const Matrix<Scalar>& z, const Matrix<Scalar>& c) const {
    if (z.rows() != num_ports_) throw ConfigError("denoiser_forward: latent length does not match K");
    if (c.rows() != context_len_) throw ConfigError("denoiser_forward: context length mismatch");
    if (c.cols() != 1 && c.cols() != z.cols()) throw ConfigError("denoiser_forward: context batch mismatch");
  }

  int num_ports_ = 0;
  int context_len_ = 0;
  int time_embed_dim_ = 0;
  std::vector<int> hidden_;
  std::vector<DenseLayer<Scalar>> layers_;
};

/// z0_hat = (z_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
inline RealVector predict_z0_hat(const NoiseSchedule& s, const RealVector& z_t, int t, const RealVector& eps) {
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  return (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

template <typename Scalar>
RealVector predict_z0_hat(const NoiseSchedule& s, const Denoiser<Scalar>& net, const RealVector& z_t, int t,
                          const RealVector& c) {
  if (t < 1 || t > s.steps) throw ConfigError("predict_z0_hat: t outside [1, T]");
  const Vector<Scalar> eps = net(z_t.cast<Scalar>(), t, c.cast<Scalar>());
  return predict_z0_hat(s, z_t, t, RealVector(eps.template cast<double>()));
}

/// mu = (z_t - beta_t / sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_t).
inline RealVector reverse_mean(const NoiseSchedule& s, const RealVector& z_t, int t, const RealVector& eps) {
  const auto i = static_cast<std::size_t>(t);
  return (z_t - s.beta[i] / std::sqrt(1.0 - s.alpha_bar[i]) * eps) / std::sqrt(s.alpha[i]);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-4;
  int batch = 256;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainResult {
  Denoiser<float> model;
  std::vector<double> loss_trace;  // mean per-coordinate MSE per epoch
};

template <typename Scalar>
class Adam {
 public:
  Adam(const Denoiser<Scalar>& net, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& l : net.layers()) {
      mw_.push_back(Matrix<Scalar>::Zero(l.w.rows(), l.w.cols()));
      vw_.push_back(Matrix<Scalar>::Zero(l.w.rows(), l.w.cols()));
      mb_.push_back(Vector<Scalar>::Zero(l.b.size()));
      vb_.push_back(Vector<Scalar>::Zero(l.b.size()));
    }
  }

  void step(Denoiser<Scalar>& net, const LayerGrads<Scalar>& g) {
    ++t_;
    const auto b1 = static_cast<Scalar>(cfg_.adam_beta1);
    const auto b2 = static_cast<Scalar>(cfg_.adam_beta2);
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    const auto step_size = static_cast<Scalar>(cfg_.lr * std::sqrt(c2) / c1);
    const auto eps = static_cast<Scalar>(cfg_.adam_eps * std::sqrt(c2));
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      update(net.layers()[l].w, mw_[l], vw_[l], g.dw[l], b1, b2, step_size, eps);
      update(net.layers()[l].b, mb_[l], vb_[l], g.db[l], b1, b2, step_size, eps);
    }
  }

 private:
  template <typename P, typename M>
  static void update(P& param, M& m, M& v, const M& grad, Scalar b1, Scalar b2, Scalar step_size, Scalar eps) {
    m = b1 * m + (Scalar(1) - b1) * grad;
    v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
    param.array() -= step_size * m.array() / (v.array().sqrt() + eps);
  }

  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Matrix<Scalar>> mw_, vw_;
  std::vector<Vector<Scalar>> mb_, vb_;
};

/// Column-major float copies of the dataset.
struct TrainingTensors {
  Matrix<float> z0;       // K x N
  Matrix<float> context;  // C x N
};

inline TrainingTensors to_tensors(const expert::ExpertDataset& ds) {
  TrainingTensors t;
  const auto n = static_cast<Eigen::Index>(ds.samples.size());
  t.z0.resize(ds.header.num_ports, n);
  t.context.resize(ds.header.context_len, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t.z0.col(i) = ds.samples[static_cast<std::size_t>(i)].z0.cast<float>();
    t.context.col(i) = ds.samples[static_cast<std::size_t>(i)].context.cast<float>();
  }
  return t;
}

/// One noisy batch: input matrix and the target noise.
struct NoisyBatch {
  Matrix<float> x;
  Matrix<float> eps;
};

inline NoisyBatch make_noisy_batch(const Denoiser<float>& net, const NoiseSchedule& s, const TrainingTensors& data,
                                   std::span<const std::size_t> idx, const Matrix<float>& embed_table,
                                   numerics::RngStream& rng) {
  const int k = net.num_ports();
  const int c = net.context_len();
  const auto b = static_cast<Eigen::Index>(idx.size());
  NoisyBatch out;
  out.x.resize(net.input_dim(), b);
  out.eps.resize(k, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto col = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s.steps)));
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    const auto sa = static_cast<float>(std::sqrt(ab));
    const auto sn = static_cast<float>(std::sqrt(1.0 - ab));
    for (int r = 0; r < k; ++r) {
      const auto e = static_cast<float>(rng.normal());
      out.eps(r, j) = e;
      out.x(r, j) = sa * data.z0(r, col) + sn * e;
    }
    out.x.block(k, j, c, 1) = data.context.col(col);
    out.x.block(k + c, j, net.time_embed_dim(), 1) = embed_table.col(t);
  }
  return out;
}

inline Matrix<float> embedding_table(int steps, int dim) {
  Matrix<float> table = Matrix<float>::Zero(dim, steps + 1);
  for (int t = 1; t <= steps; ++t) {
    const std::vector<double> e = time_embedding(t, dim);
    for (int j = 0; j < dim; ++j) table(j, t) = static_cast<float>(e[static_cast<std::size_t>(j)]);
  }
  return table;
}

/// Per-coordinate MSE of the batch and its gradient with respect to the output.
inline double batch_loss(const Matrix<float>& pred, const Matrix<float>& eps, Matrix<float>* d_out) {
  const Matrix<float> diff = pred - eps;
  const double n = static_cast<double>(diff.size());
  if (d_out) *d_out = diff * static_cast<float>(2.0 / n);
  return static_cast<double>(diff.cast<double>().squaredNorm()) / n;
}

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Minimises ||eps - eps_phi(z_t, t, c)||^2 with t ~ U{1..T} and fresh eps
/// per example per epoch. Epoch e shuffles and draws noise from
/// RngStream(seed, e).
inline TrainResult train(const expert::ExpertDataset& ds, const NoiseSchedule& s, Denoiser<float> net,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (ds.samples.empty()) throw ConfigError("train: dataset is empty");
  if (ds.header.num_ports != net.num_ports() || ds.header.context_len != net.context_len()) {
    throw ConfigError("train: dataset header (K=" + std::to_string(ds.header.num_ports) +
                      ", context_len=" + std::to_string(ds.header.context_len) + ") does not match the network (K=" +
                      std::to_string(net.num_ports()) + ", context_len=" + std::to_string(net.context_len()) + ")");
  }
  if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0.0)) throw ConfigError("train: epochs, batch and lr must be positive");
  const TrainingTensors data = to_tensors(ds);
  const Matrix<float> table = embedding_table(s.steps, net.time_embed_dim());
  Adam<float> opt(net, cfg);
  TrainResult result;
  const std::size_t n = ds.samples.size();
  std::vector<std::size_t> order(n);
  ForwardTrace<float> trace;
  LayerGrads<float> grads;
  Matrix<float> d_out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    numerics::RngStream rng(cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n - start);
      const NoisyBatch batch =
          make_noisy_batch(net, s, data, std::span<const std::size_t>(order.data() + start, len), table, rng);
      const Matrix<float> pred = net.forward(batch.x, &trace);
      const double loss = batch_loss(pred, batch.eps, &d_out);
      if (!std::isfinite(loss)) {
        std::string trace_text;
        for (double l : result.loss_trace) trace_text += " " + std::to_string(l);
        throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch + 1) +
                             "; loss trace:" + (trace_text.empty() ? std::string(" (none)") : trace_text));
      }
      total += loss * static_cast<double>(len);
      net.backward(trace, d_out, &grads, nullptr);
      opt.step(net, grads);
    }
    result.loss_trace.push_back(total / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch + 1, result.loss_trace.back());
  }
  result.model = std::move(net);
  return result;
}

// ---------------------------------------------------------------------------
// Guided sampling

enum class GradMode { Full, Shortcut };

inline GradMode parse_grad_mode(const std::string& s) {
  if (s == "full") return GradMode::Full;
  if (s == "shortcut") return GradMode::Shortcut;
  throw ConfigError("unknown grad_mode '" + s + "' (expected full or shortcut)");
}

inline const char* grad_mode_name(GradMode m) { return m == GradMode::Full ? "full" : "shortcut"; }

struct SamplerConfig {
  int n_cand = 16;
  double kappa = 2.0;
  energy::CsiMode csi_mode = energy::CsiMode::Observed;
  GradMode grad_mode = GradMode::Full;
  double tau_q = 0.1;

  void validate() const {
    if (n_cand < 1) throw ConfigError("sampler: n_cand must be >= 1");
    if (!(kappa >= 0.0)) throw ConfigError("sampler: kappa must be >= 0");
    if (!(tau_q > 0.0)) throw ConfigError("sampler: tau_q must be positive");
  }
};

struct SampleResult {
  RealVector mask;
  std::vector<int> ports;  // ascending
  double energy = std::numeric_limits<double>::infinity();
  int best_candidate = -1;
  std::vector<double> candidate_energy;  // +inf for aborted candidates
  std::vector<int> aborted;              // candidate indices dropped for non-finite latents
};

/// Guidance gradient g_t = d E(soft_top_m(z0_hat(z_t))) / d z_t for every
/// column of z, given the denoiser output eps and its forward trace.
inline Matrix<double> guidance_gradient(const Denoiser<float>& net, const ForwardTrace<float>& trace,
                                        const NoiseSchedule& s, int t, const Matrix<double>& z0_hat,
                                        const energy::EnergyProblem& problem, const SamplerConfig& cfg,
                                        const std::vector<char>& alive) {
  const auto k = z0_hat.rows();
  const auto b = z0_hat.cols();
  const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
  Matrix<double> g0 = Matrix<double>::Zero(k, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    if (!alive[static_cast<std::size_t>(j)]) continue;
    g0.col(j) = *problem.gradient_wrt_logits(z0_hat.col(j), cfg.tau_q).gradient;
  }
  if (cfg.grad_mode == GradMode::Shortcut) return g0 / std::sqrt(ab);
  Matrix<float> d_input;
  net.backward(trace, g0.cast<float>(), nullptr, &d_input);
  const Matrix<double> jt = d_input.topRows(k).cast<double>();
  return (g0 - std::sqrt(1.0 - ab) * jt) / std::sqrt(ab);
}

/// Energy-guided reverse diffusion over N_cand chains in one batch. Each
/// chain is projected to a hard top-M mask at the end and scored with the
/// problem's deterministic energy; the best candidate is returned.
inline SampleResult guided_reverse_sample(const Denoiser<float>& net, const NoiseSchedule& s, const RealVector& context,
                                          const energy::EnergyProblem& problem, const SamplerConfig& cfg,
                                          numerics::RngStream& rng) {
  cfg.validate();
  const int k = net.num_ports();
  if (problem.num_ports() != k) throw ConfigError("guided_reverse_sample: checkpoint K does not match the scenario");
  if (context.size() != net.context_len()) {
    throw ConfigError("guided_reverse_sample: context length " + std::to_string(context.size()) +
                      " does not match checkpoint context_len " + std::to_string(net.context_len()));
  }
  const int b = cfg.n_cand;
  Matrix<double> z(k, b);
  for (int j = 0; j < b; ++j)
    for (int i = 0; i < k; ++i) z(i, j) = rng.normal();
  const Matrix<float> c = context.cast<float>();
  std::vector<char> alive(static_cast<std::size_t>(b), 1);
  SampleResult res;
  ForwardTrace<float> trace;
  const bool guided = cfg.kappa > 0.0;

  for (int t = s.steps; t >= 1; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const Matrix<float> x = net.assemble_input(z.cast<float>(), c, t);
    const bool need_trace = guided && cfg.grad_mode == GradMode::Full;
    const Matrix<double> eps = net.forward(x, need_trace ? &trace : nullptr).cast<double>();
    Matrix<double> mean = (z - s.beta[ti] / std::sqrt(1.0 - s.alpha_bar[ti]) * eps) / std::sqrt(s.alpha[ti]);
    if (guided) {
      const Matrix<double> z0_hat = (z - std::sqrt(1.0 - s.alpha_bar[ti]) * eps) / std::sqrt(s.alpha_bar[ti]);
      const Matrix<double> g = guidance_gradient(net, trace, s, t, z0_hat, problem, cfg, alive);
      mean -= cfg.kappa * s.beta_tilde[ti] * g;
    }
    if (t > 1) {
      const double sd = std::sqrt(s.beta_tilde[ti]);
      for (int j = 0; j < b; ++j)
        for (int i = 0; i < k; ++i) mean(i, j) += sd * rng.normal();
    }
    z = std::move(mean);
    for (int j = 0; j < b; ++j) {
      if (alive[static_cast<std::size_t>(j)] && !z.col(j).allFinite()) {
        alive[static_cast<std::size_t>(j)] = 0;
        res.aborted.push_back(j);
        log::debug("guided_reverse_sample: candidate " + std::to_string(j) + " aborted at t=" + std::to_string(t));
      }
      if (!alive[static_cast<std::size_t>(j)]) z.col(j).setZero();
    }
  }

  res.candidate_energy.assign(static_cast<std::size_t>(b), std::numeric_limits<double>::infinity());
  for (int j = 0; j < b; ++j) {
    if (!alive[static_cast<std::size_t>(j)]) continue;
    std::vector<int> ports = expert::sorted_top_m(z.col(j), problem.m_active());
    const double e = problem.hard_energy(ports);
    res.candidate_energy[static_cast<std::size_t>(j)] = e;
    if (e < res.energy) {
      res.energy = e;
      res.ports = std::move(ports);
      res.best_candidate = j;
    }
  }
  if (res.best_candidate < 0) {
    throw NumericalError("guided_reverse_sample: all " + std::to_string(b) +
                         " candidates produced non-finite latents (guidance exploded)");
  }
  res.mask = RealVector::Zero(k);
  for (int p : res.ports) res.mask[p] = 1.0;
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  Denoiser<float> model;
  int steps = 0;
  double beta_1 = 0.0;
  double beta_T = 0.0;
  std::string dataset_hash;
  std::string mode;
  std::vector<double> loss_trace;

  NoiseSchedule schedule() const { return build_schedule(steps, beta_1, beta_T); }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : ck.model.layers()) {
    std::vector<float> w(static_cast<std::size_t>(l.w.size()));
    for (Eigen::Index i = 0; i < l.w.rows(); ++i)
      for (Eigen::Index j = 0; j < l.w.cols(); ++j) w[static_cast<std::size_t>(i * l.w.cols() + j)] = l.w(i, j);
    layers.push_back({{"in", l.w.cols()},
                      {"out", l.w.rows()},
                      {"weight", w},
                      {"bias", std::vector<float>(l.b.data(), l.b.data() + l.b.size())}});
  }
  const nlohmann::json j = {{"format", "fluidsense-denoiser"},
                            {"version", 1},
                            {"num_ports", ck.model.num_ports()},
                            {"context_len", ck.model.context_len()},
                            {"time_embed_dim", ck.model.time_embed_dim()},
                            {"hidden", ck.model.hidden()},
                            {"activation", "silu"},
                            {"schedule", {{"T", ck.steps}, {"beta_1", ck.beta_1}, {"beta_T", ck.beta_T}}},
                            {"dataset_hash", ck.dataset_hash},
                            {"mode", ck.mode},
                            {"loss_trace", ck.loss_trace},
                            {"layers", layers}};
  const std::filesystem::path tmp(path.string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::out | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != "fluidsense-denoiser") throw ConfigError("checkpoint " + path.string() + ": bad format tag");
    if (j.at("version").get<int>() != 1) throw ConfigError("checkpoint " + path.string() + ": unsupported version");
    ck.model = Denoiser<float>(j.at("num_ports").get<int>(), j.at("context_len").get<int>(),
                               j.at("hidden").get<std::vector<int>>(), j.at("time_embed_dim").get<int>());
    const auto& sched = j.at("schedule");
    ck.steps = sched.at("T").get<int>();
    ck.beta_1 = sched.at("beta_1").get<double>();
    ck.beta_T = sched.at("beta_T").get<double>();
    ck.dataset_hash = j.value("dataset_hash", "");
    ck.mode = j.value("mode", "");
    ck.loss_trace = j.value("loss_trace", std::vector<double>{});
    const auto& layers = j.at("layers");
    if (layers.size() != ck.model.layers().size()) throw ConfigError("checkpoint " + path.string() + ": layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = ck.model.layers()[l];
      const auto w = layers[l].at("weight").get<std::vector<float>>();
      const auto bias = layers[l].at("bias").get<std::vector<float>>();
      if (layers[l].at("in").get<Eigen::Index>() != dst.w.cols() || layers[l].at("out").get<Eigen::Index>() != dst.w.rows() ||
          w.size() != static_cast<std::size_t>(dst.w.size()) || bias.size() != static_cast<std::size_t>(dst.b.size())) {
        throw ConfigError("checkpoint " + path.string() + ": layer " + std::to_string(l) + " shape mismatch");
      }
      for (Eigen::Index i = 0; i < dst.w.rows(); ++i)
        for (Eigen::Index c = 0; c < dst.w.cols(); ++c) dst.w(i, c) = w[static_cast<std::size_t>(i * dst.w.cols() + c)];
      for (Eigen::Index i = 0; i < dst.b.size(); ++i) dst.b[i] = bias[static_cast<std::size_t>(i)];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  if (!ck.model.all_finite()) throw NumericalError("checkpoint " + path.string() + " contains non-finite parameters");
  return ck;
}

}  // namespace fluidsense::diffusion
