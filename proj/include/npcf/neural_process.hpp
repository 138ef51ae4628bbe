#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "npcf/errors.hpp"
#include "npcf/idm.hpp"
#include "npcf/io_util.hpp"
#include "npcf/nn.hpp"
#include "npcf/random.hpp"

namespace npcf {

// One observed (traffic condition, follower acceleration) pair.
struct CfPoint {
  TrafficCondition x;
  double y = 0.0;  // acceleration [m/s^2]
};

struct DriverPoints {
  long driver_id = 0;
  std::vector<CfPoint> points;
};

struct StyleVector {
  Eigen::Matrix<double, 5, 1> r = Eigen::Matrix<double, 5, 1>::Zero();
};

struct LatentDist {
  double mu = 0.0;
  double sigma = 1.0;
};

// Per-component affine standardization of the 6-dim condition vector,
// fitted on the training set and stored with the model.
struct Standardizer {
  Eigen::Matrix<double, 6, 1> mean = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 1> std = Eigen::Matrix<double, 6, 1>::Ones();

  Eigen::Matrix<double, 6, 1> apply(const TrafficCondition& c) const {
    const auto a = c.to_array();
    Eigen::Matrix<double, 6, 1> out;
    for (int i = 0; i < 6; ++i) out[i] = (a[static_cast<std::size_t>(i)] - mean[i]) / std[i];
    return out;
  }

  static Standardizer fit(std::span<const DriverPoints> drivers) {
    Standardizer st;
    std::size_t n = 0;
    Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
    Eigen::Matrix<double, 6, 1> sq = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& d : drivers) {
      for (const auto& p : d.points) {
        const auto a = p.x.to_array();
        for (int i = 0; i < 6; ++i) {
          sum[i] += a[static_cast<std::size_t>(i)];
          sq[i] += a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
        }
        ++n;
      }
    }
    if (n == 0) throw std::invalid_argument("Standardizer: no points");
    for (int i = 0; i < 6; ++i) {
      st.mean[i] = sum[i] / static_cast<double>(n);
      const double var = std::max(0.0, sq[i] / static_cast<double>(n) - st.mean[i] * st.mean[i]);
      st.std[i] = std::sqrt(var);
      if (st.std[i] < 1e-9) st.std[i] = 1.0;  // constant component: pass through
    }
    return st;
  }
};

// Neural process with a deterministic path (style r in R^5), a univariate
// latent path (z) and a conditional decoder over [x(6); r(5); z(1)].
// Layer widths follow the fixed architecture: deterministic encoder
// 7-128-128-128-5, latent encoder 7-5-5 with two 1-unit heads applied to the
// aggregated feature, decoder 12-128-128-128 with two 1-unit heads.
struct NPModel {
  Mlp det_enc;
  Mlp lat_trunk;
  DenseLayer lat_mu, lat_sigma;
  Mlp dec_trunk;
  DenseLayer dec_mu, dec_sigma;
  Activation act = Activation::softplus;
  double lb_a = -5.0;
  double ub_a = 5.0;
  double sigma_floor = 1e-3;
  Standardizer xstd;

  static NPModel make(std::uint64_t seed, Activation act = Activation::softplus) {
    NPModel m;
    m.act = act;
    Rng rng(derive_seed(seed, 0x6e706d6bULL));  // "npmk"
    const int det_sizes[] = {7, 128, 128, 128, 5};
    const int lat_sizes[] = {7, 5, 5};
    const int dec_sizes[] = {12, 128, 128, 128};
    m.det_enc = Mlp::make(det_sizes, act, false, rng);
    m.lat_trunk = Mlp::make(lat_sizes, act, true, rng);
    auto head = [&](int in) {
      DenseLayer l;
      l.W = Mat(1, in);
      l.b = Vec::Zero(1);
      const double limit = std::sqrt(6.0 / (in + 1));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index c = 0; c < in; ++c) l.W(0, c) = dist(rng);
      return l;
    };
    m.lat_mu = head(5);
    m.lat_sigma = head(5);
    m.dec_trunk = Mlp::make(dec_sizes, act, true, rng);
    m.dec_mu = head(128);
    m.dec_sigma = head(128);
    return m;
  }

  std::size_t n_params() const {
    auto head_n = [](const DenseLayer& l) {
      return static_cast<std::size_t>(l.W.size() + l.b.size());
    };
    return det_enc.n_params() + lat_trunk.n_params() + head_n(lat_mu) +
           head_n(lat_sigma) + dec_trunk.n_params() + head_n(dec_mu) +
           head_n(dec_sigma);
  }

  // Flat layout (documented, used by Adam, the gradient check and the model
  // file): det_enc, lat_trunk, lat_mu, lat_sigma, dec_trunk, dec_mu,
  // dec_sigma; within each layer W row-major then b.
  Vec to_vector() const {
    Vec out(static_cast<Eigen::Index>(n_params()));
    Eigen::Index off = 0;
    for (const auto& l : det_enc.layers) detail::pack_layer(l, out, off);
    for (const auto& l : lat_trunk.layers) detail::pack_layer(l, out, off);
    detail::pack_layer(lat_mu, out, off);
    detail::pack_layer(lat_sigma, out, off);
    for (const auto& l : dec_trunk.layers) detail::pack_layer(l, out, off);
    detail::pack_layer(dec_mu, out, off);
    detail::pack_layer(dec_sigma, out, off);
    return out;
  }

  void from_vector(const Vec& in) {
    Eigen::Index off = 0;
    for (auto& l : det_enc.layers) detail::unpack_layer(l, in, off);
    for (auto& l : lat_trunk.layers) detail::unpack_layer(l, in, off);
    detail::unpack_layer(lat_mu, in, off);
    detail::unpack_layer(lat_sigma, in, off);
    for (auto& l : dec_trunk.layers) detail::unpack_layer(l, in, off);
    detail::unpack_layer(dec_mu, in, off);
    detail::unpack_layer(dec_sigma, in, off);
  }
};

// Gradients in the same structure/packing order as NPModel.
struct NPGrads {
  std::vector<DenseLayer> det_enc, lat_trunk, dec_trunk;
  DenseLayer lat_mu, lat_sigma, dec_mu, dec_sigma;

  static NPGrads zeros_like(const NPModel& m) {
    NPGrads g;
    g.det_enc = zero_grads_like(m.det_enc);
    g.lat_trunk = zero_grads_like(m.lat_trunk);
    g.dec_trunk = zero_grads_like(m.dec_trunk);
    g.lat_mu = zero_grad_like(m.lat_mu);
    g.lat_sigma = zero_grad_like(m.lat_sigma);
    g.dec_mu = zero_grad_like(m.dec_mu);
    g.dec_sigma = zero_grad_like(m.dec_sigma);
    return g;
  }

  Vec to_vector(const NPModel& m) const {
    Vec out(static_cast<Eigen::Index>(m.n_params()));
    Eigen::Index off = 0;
    for (const auto& l : det_enc) detail::pack_layer(l, out, off);
    for (const auto& l : lat_trunk) detail::pack_layer(l, out, off);
    detail::pack_layer(lat_mu, out, off);
    detail::pack_layer(lat_sigma, out, off);
    for (const auto& l : dec_trunk) detail::pack_layer(l, out, off);
    detail::pack_layer(dec_mu, out, off);
    detail::pack_layer(dec_sigma, out, off);
    return out;
  }
};

namespace detail {

inline Vec point_input(const NPModel& m, const CfPoint& p) {
  Vec in(7);
  in.head<6>() = m.xstd.apply(p.x);
  in[6] = p.y;
  return in;
}

}  // namespace detail

// r = mean over per-point deterministic-encoder outputs; permutation
// invariant by construction.
inline StyleVector encode_deterministic(const NPModel& m, std::span<const CfPoint> points) {
  if (points.empty()) throw std::invalid_argument("encode_deterministic: empty input");
  Eigen::Matrix<double, 5, 1> acc = Eigen::Matrix<double, 5, 1>::Zero();
  for (const auto& p : points) acc += m.det_enc.forward(detail::point_input(m, p));
  StyleVector sv;
  sv.r = acc / static_cast<double>(points.size());
  return sv;
}

// Aggregated latent feature through the two heads; sigma is softplus-mapped
// and floored, so it is always positive.
inline LatentDist encode_latent(const NPModel& m, std::span<const CfPoint> points) {
  if (points.empty()) throw std::invalid_argument("encode_latent: empty input");
  Vec acc = Vec::Zero(5);
  for (const auto& p : points) acc += m.lat_trunk.forward(detail::point_input(m, p));
  acc /= static_cast<double>(points.size());
  LatentDist d;
  d.mu = (m.lat_mu.W * acc)(0) + m.lat_mu.b[0];
  d.sigma = softplus((m.lat_sigma.W * acc)(0) + m.lat_sigma.b[0]) + m.sigma_floor;
  return d;
}

// Decoder head outputs: mu clipped into [lb_a, ub_a], sigma positive.
struct Prediction {
  double mu = 0.0;
  double sigma = 0.0;
};

inline Prediction decode(const NPModel& m, const TrafficCondition& x,
                         const StyleVector& r, double z) {
  Vec in(12);
  in.head<6>() = m.xstd.apply(x);
  in.segment<5>(6) = r.r;
  in[11] = z;
  const Vec h = m.dec_trunk.forward(in);
  const double mu_raw = (m.dec_mu.W * h)(0) + m.dec_mu.b[0];
  const double sg_raw = (m.dec_sigma.W * h)(0) + m.dec_sigma.b[0];
  Prediction p;
  p.mu = std::clamp(mu_raw, m.lb_a, m.ub_a);
  p.sigma = softplus(sg_raw) + m.sigma_floor;
  return p;
}

struct LossBreakdown {
  double nll = 0.0;    // negative Gaussian log likelihood, summed over targets
  double kl = 0.0;     // KL(z_C || z_T), closed form
  double recon = 0.0;  // Euclidean norm of the mean residual vector
  double total = 0.0;
};

inline double kl_gaussians(const LatentDist& a, const LatentDist& b) {
  const double dm = a.mu - b.mu;
  return std::log(b.sigma / a.sigma) +
         (a.sigma * a.sigma + dm * dm) / (2.0 * b.sigma * b.sigma) - 0.5;
}

namespace detail {

struct LatentForward {
  std::vector<MlpCache> caches;
  Vec phi_bar;      // aggregated 5-dim feature
  double mu = 0.0;
  double rho = 0.0;  // raw sigma-head output
  double sigma = 0.0;
};

inline LatentForward latent_forward(const NPModel& m, std::span<const CfPoint> pts,
                                    bool keep_caches) {
  LatentForward f;
  f.phi_bar = Vec::Zero(5);
  if (keep_caches) f.caches.resize(pts.size());
  MlpCache scratch;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    MlpCache& c = keep_caches ? f.caches[i] : scratch;
    f.phi_bar += m.lat_trunk.forward(point_input(m, pts[i]), &c);
  }
  f.phi_bar /= static_cast<double>(pts.size());
  f.mu = (m.lat_mu.W * f.phi_bar)(0) + m.lat_mu.b[0];
  f.rho = (m.lat_sigma.W * f.phi_bar)(0) + m.lat_sigma.b[0];
  f.sigma = softplus(f.rho) + m.sigma_floor;
  return f;
}

}  // namespace detail

// Training-time loss of Eq-style three terms on a context/target pair. The
// latent sample is reparameterized as z = mu_T + sigma_T * xi so the latent
// path stays differentiable; r is computed from the context only.
inline LossBreakdown np_loss(const NPModel& m, std::span<const CfPoint> context,
                             std::span<const CfPoint> target, double xi) {
  if (context.empty() || target.empty())
    throw std::invalid_argument("np_loss: empty context or target");
  const StyleVector r = encode_deterministic(m, context);
  const auto lat_c = detail::latent_forward(m, context, false);
  const auto lat_t = detail::latent_forward(m, target, false);
  const double z = lat_t.mu + lat_t.sigma * xi;

  LossBreakdown out;
  double res_sq = 0.0;
  for (const auto& p : target) {
    const Prediction pr = decode(m, p.x, r, z);
    const double d = p.y - pr.mu;
    out.nll += std::log(pr.sigma) + 0.5 * std::log(2.0 * std::numbers::pi) +
               0.5 * d * d / (pr.sigma * pr.sigma);
    res_sq += d * d;
  }
  out.recon = std::sqrt(res_sq);
  out.kl = kl_gaussians({lat_c.mu, lat_c.sigma}, {lat_t.mu, lat_t.sigma});
  out.total = out.nll + out.kl + out.recon;
  return out;
}

// Reverse-mode gradient of np_loss with respect to every weight. Returns the
// loss breakdown and fills `grad_out` in the NPModel flat layout.
inline LossBreakdown np_loss_backward(const NPModel& m,
                                      std::span<const CfPoint> context,
                                      std::span<const CfPoint> target, double xi,
                                      Vec& grad_out) {
  if (context.empty() || target.empty())
    throw std::invalid_argument("np_loss_backward: empty context or target");
  const double nc = static_cast<double>(context.size());
  const double nt = static_cast<double>(target.size());

  // --- forward, keeping caches ---
  std::vector<MlpCache> det_caches(context.size());
  Eigen::Matrix<double, 5, 1> r_acc = Eigen::Matrix<double, 5, 1>::Zero();
  for (std::size_t i = 0; i < context.size(); ++i)
    r_acc += m.det_enc.forward(detail::point_input(m, context[i]), &det_caches[i]);
  const Eigen::Matrix<double, 5, 1> r = r_acc / nc;

  auto lat_c = detail::latent_forward(m, context, true);
  auto lat_t = detail::latent_forward(m, target, true);
  const double z = lat_t.mu + lat_t.sigma * xi;

  struct DecFwd {
    MlpCache cache;
    double mu_raw = 0.0, sg_raw = 0.0, mu = 0.0, sigma = 0.0;
  };
  std::vector<DecFwd> dec(target.size());
  LossBreakdown out;
  double res_sq = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    Vec in(12);
    in.head<6>() = m.xstd.apply(target[i].x);
    in.segment<5>(6) = r;
    in[11] = z;
    const Vec h = m.dec_trunk.forward(in, &dec[i].cache);
    dec[i].mu_raw = (m.dec_mu.W * h)(0) + m.dec_mu.b[0];
    dec[i].sg_raw = (m.dec_sigma.W * h)(0) + m.dec_sigma.b[0];
    dec[i].mu = std::clamp(dec[i].mu_raw, m.lb_a, m.ub_a);
    dec[i].sigma = softplus(dec[i].sg_raw) + m.sigma_floor;
    const double d = target[i].y - dec[i].mu;
    out.nll += std::log(dec[i].sigma) + 0.5 * std::log(2.0 * std::numbers::pi) +
               0.5 * d * d / (dec[i].sigma * dec[i].sigma);
    res_sq += d * d;
  }
  out.recon = std::sqrt(res_sq);
  out.kl = kl_gaussians({lat_c.mu, lat_c.sigma}, {lat_t.mu, lat_t.sigma});
  out.total = out.nll + out.kl + out.recon;

  // --- backward ---
  NPGrads g = NPGrads::zeros_like(m);
  Eigen::Matrix<double, 5, 1> d_r = Eigen::Matrix<double, 5, 1>::Zero();
  double d_z = 0.0;

  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = target[i].y - dec[i].mu;
    // nll and recon through mu; clip gate zeroes the path outside [lb, ub]
    double d_mu = -d / (dec[i].sigma * dec[i].sigma);
    if (out.recon > 0.0) d_mu += -d / out.recon;
    const double gate =
        (dec[i].mu_raw >= m.lb_a && dec[i].mu_raw <= m.ub_a) ? 1.0 : 0.0;
    const double d_mu_raw = d_mu * gate;
    const double d_sigma = 1.0 / dec[i].sigma - d * d / std::pow(dec[i].sigma, 3);
    const double d_sg_raw = d_sigma * sigmoid(dec[i].sg_raw);

    const Vec& h = dec[i].cache.post.back();
    g.dec_mu.W.noalias() += d_mu_raw * h.transpose();
    g.dec_mu.b[0] += d_mu_raw;
    g.dec_sigma.W.noalias() += d_sg_raw * h.transpose();
    g.dec_sigma.b[0] += d_sg_raw;

    Vec d_h = d_mu_raw * m.dec_mu.W.transpose().col(0) +
              d_sg_raw * m.dec_sigma.W.transpose().col(0);
    const Vec d_in = m.dec_trunk.backward(dec[i].cache, d_h, g.dec_trunk);
    d_r += d_in.segment<5>(6);
    d_z += d_in[11];
  }

  // deterministic path
  for (std::size_t i = 0; i < context.size(); ++i)
    m.det_enc.backward(det_caches[i], Vec(d_r / nc), g.det_enc);

  // latent path: z = mu_T + sigma_T * xi, plus the KL terms
  const double dm = lat_c.mu - lat_t.mu;
  const double st2 = lat_t.sigma * lat_t.sigma;
  double d_mu_t = d_z - dm / st2;
  double d_sigma_t = d_z * xi + 1.0 / lat_t.sigma -
                     (lat_c.sigma * lat_c.sigma + dm * dm) / (st2 * lat_t.sigma);
  double d_mu_c = dm / st2;
  double d_sigma_c = -1.0 / lat_c.sigma + lat_c.sigma / st2;

  auto lat_backward = [&](detail::LatentForward& lf, std::span<const CfPoint> pts,
                          double d_mu, double d_sigma) {
    const double d_rho = d_sigma * sigmoid(lf.rho);
    g.lat_mu.W.noalias() += d_mu * lf.phi_bar.transpose();
    g.lat_mu.b[0] += d_mu;
    g.lat_sigma.W.noalias() += d_rho * lf.phi_bar.transpose();
    g.lat_sigma.b[0] += d_rho;
    const Vec d_phi_bar =
        d_mu * m.lat_mu.W.transpose().col(0) + d_rho * m.lat_sigma.W.transpose().col(0);
    const Vec d_phi = d_phi_bar / static_cast<double>(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      m.lat_trunk.backward(lf.caches[i], d_phi, g.lat_trunk);
  };
  lat_backward(lat_t, target, d_mu_t, d_sigma_t);
  lat_backward(lat_c, context, d_mu_c, d_sigma_c);

  grad_out = g.to_vector(m);
  return out;
}

// --- training ----------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  double decay_factor = 0.9;  // multiplies the rate every decay_every epochs;
                              // set to 0.1 for the harder schedule reading
  int decay_every = 50;
  int epochs = 200;
  int ctx_min = 5, ctx_max = 50;
  int extra_min = 5, extra_max = 50;
  Activation act = Activation::softplus;
  double lb_a = -5.0, ub_a = 5.0;
  double sigma_floor = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  NPModel model;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

inline double scheduled_lr(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

// One Adam step per driver per epoch; driver order reshuffled each epoch.
// Deterministic for a fixed seed.
inline TrainResult train_np(const std::vector<DriverPoints>& drivers,
                            const TrainConfig& cfg) {
  if (drivers.size() < 2)
    throw std::invalid_argument("train_np: need at least 2 drivers");
  for (const auto& d : drivers)
    if (d.points.size() < 20)
      throw std::invalid_argument("train_np: driver " + std::to_string(d.driver_id) +
                                  " has fewer than 20 points");

  TrainResult res;
  res.model = NPModel::make(cfg.seed, cfg.act);
  res.model.lb_a = cfg.lb_a;
  res.model.ub_a = cfg.ub_a;
  res.model.sigma_floor = cfg.sigma_floor;
  res.model.xstd = Standardizer::fit(drivers);

  Vec params = res.model.to_vector();
  Adam adam;
  adam.init(params.size());

  Rng rng(derive_seed(cfg.seed, 0x6e707472ULL));  // "nptr"
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<std::size_t> order(drivers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Vec grad(params.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t oi : order) {
      const auto& drv = drivers[oi];
      const std::size_t n = drv.points.size();
      std::uniform_int_distribution<int> ctx_d(cfg.ctx_min, cfg.ctx_max);
      std::uniform_int_distribution<int> ext_d(cfg.extra_min, cfg.extra_max);
      const std::size_t n_c =
          std::min<std::size_t>(static_cast<std::size_t>(ctx_d(rng)), n - 1);
      const std::size_t n_e =
          std::min<std::size_t>(static_cast<std::size_t>(ext_d(rng)), n - n_c);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<CfPoint> target;
      target.reserve(n_c + n_e);
      for (std::size_t i = 0; i < n_c + n_e; ++i) target.push_back(drv.points[perm[i]]);
      std::span<const CfPoint> context(target.data(), n_c);

      const double xi = unit(rng);
      const LossBreakdown lb = np_loss_backward(res.model, context, target, xi, grad);
      if (!std::isfinite(lb.total)) {
        throw TrainDivergence("train_np: non-finite loss at epoch " +
                              std::to_string(epoch) + ", driver " +
                              std::to_string(drv.driver_id) + " (nll=" +
                              format_double(lb.nll) + ", kl=" + format_double(lb.kl) +
                              ", recon=" + format_double(lb.recon) + ")");
      }
      adam.step(params, grad, lr);
      res.model.from_vector(params);
      loss_sum += lb.total;
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(drivers.size()));
  }
  return res;
}

// --- prediction ----------------------------------------------------------------

enum class ZMode { mean, sample };

// r from the context (or the caller-supplied style), z from the context
// latent distribution, falling back to a standard normal when the context is
// empty.
inline std::vector<Prediction> np_predict(const NPModel& m,
                                          std::span<const CfPoint> context,
                                          std::span<const TrafficCondition> xs,
                                          ZMode zmode, Rng& rng,
                                          const StyleVector* style_override = nullptr) {
  StyleVector r;
  if (style_override)
    r = *style_override;
  else if (!context.empty())
    r = encode_deterministic(m, context);
  else
    throw std::invalid_argument("np_predict: empty context requires a style override");

  LatentDist zd;  // standard normal fallback
  if (!context.empty()) zd = encode_latent(m, context);
  double z = zd.mu;
  if (zmode == ZMode::sample) {
    std::normal_distribution<double> unit(0.0, 1.0);
    z += zd.sigma * unit(rng);
  }
  std::vector<Prediction> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(decode(m, x, r, z));
  return out;
}

// --- model persistence ----------------------------------------------------------
//
// Versioned binary layout, little-endian:
//   magic "NPCF", u32 version, u32 activation,
//   f64 lb_a, ub_a, sigma_floor, f64[6] x mean, f64[6] x std,
//   u32 layer count, per layer u32 rows|cols (architecture descriptor),
//   then all weights as f64 blocks in the NPModel flat order.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw SchemaError("model file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw SchemaError("model file truncated");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

template <class Fn>
void for_each_layer(const NPModel& m, Fn&& fn) {
  for (const auto& l : m.det_enc.layers) fn(l);
  for (const auto& l : m.lat_trunk.layers) fn(l);
  fn(m.lat_mu);
  fn(m.lat_sigma);
  for (const auto& l : m.dec_trunk.layers) fn(l);
  fn(m.dec_mu);
  fn(m.dec_sigma);
}

}  // namespace detail

inline void save_model(const NPModel& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write("NPCF", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(m.act));
  detail::put_f64(os, m.lb_a);
  detail::put_f64(os, m.ub_a);
  detail::put_f64(os, m.sigma_floor);
  for (int i = 0; i < 6; ++i) detail::put_f64(os, m.xstd.mean[i]);
  for (int i = 0; i < 6; ++i) detail::put_f64(os, m.xstd.std[i]);
  std::uint32_t n_layers = 0;
  detail::for_each_layer(m, [&](const DenseLayer&) { ++n_layers; });
  detail::put_u32(os, n_layers);
  detail::for_each_layer(m, [&](const DenseLayer& l) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.W.rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.W.cols()));
  });
  const Vec flat = m.to_vector();
  for (Eigen::Index i = 0; i < flat.size(); ++i) detail::put_f64(os, flat[i]);
}

inline NPModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("input not found: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "NPCF")
    throw SchemaError("not an npcf model file (bad magic)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw SchemaError("unsupported model version " + std::to_string(version));
  const auto act = static_cast<Activation>(detail::get_u32(is));
  NPModel m = NPModel::make(0, act);
  m.lb_a = detail::get_f64(is);
  m.ub_a = detail::get_f64(is);
  m.sigma_floor = detail::get_f64(is);
  for (int i = 0; i < 6; ++i) m.xstd.mean[i] = detail::get_f64(is);
  for (int i = 0; i < 6; ++i) m.xstd.std[i] = detail::get_f64(is);
  const std::uint32_t n_layers = detail::get_u32(is);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims;
  dims.reserve(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto r = detail::get_u32(is);
    const auto c = detail::get_u32(is);
    dims.emplace_back(r, c);
  }
  std::uint32_t expected_layers = 0;
  detail::for_each_layer(m, [&](const DenseLayer&) { ++expected_layers; });
  std::size_t di = 0;
  bool shape_ok = n_layers == expected_layers;
  detail::for_each_layer(m, [&](const DenseLayer& l) {
    if (di < dims.size()) {
      if (dims[di].first != static_cast<std::uint32_t>(l.W.rows()) ||
          dims[di].second != static_cast<std::uint32_t>(l.W.cols()))
        shape_ok = false;
    }
    ++di;
  });
  if (!shape_ok) throw SchemaError("model file architecture mismatch");
  Vec flat(static_cast<Eigen::Index>(m.n_params()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = detail::get_f64(is);
  m.from_vector(flat);
  return m;
}

}  // namespace npcf
