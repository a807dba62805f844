#pragma once

// PPO over vectorized sessions with per-episode action delay randomization.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mevius/mlp.hpp"
#include "mevius/runtime.hpp"

namespace mevius {

// ---------------------------------------------------------------------------
// Rewards

enum RewardTerm : int {
  kTrackingLinVel = 0,
  kTrackingAngVel,
  kLinVelZ,
  kAngVelXy,
  kTorques,
  kDofAcc,
  kActionRate,
  kTermination,
  kFeetAirTime,
  kNumRewardTerms
};

inline constexpr std::array<const char*, kNumRewardTerms> kRewardTermNames{
    "tracking_lin_vel", "tracking_ang_vel", "lin_vel_z", "ang_vel_xy",
    "torques",          "dof_acc",          "action_rate", "termination", "feet_air_time"};

struct RewardWeights {
  std::array<double, kNumRewardTerms> w{1.0, 0.5, -2.0, -0.05, -1e-5, -2.5e-7, -0.01, -25.0, 1.0};
  double tracking_sigma = 0.25;
  /// Clip the summed reward at zero.
  bool only_positive = true;

  double& operator[](int i) { return w[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return w[static_cast<std::size_t>(i)]; }
};

struct RewardResult {
  double total = 0.0;
  /// Unweighted term values.
  std::array<double, kNumRewardTerms> terms{};
};

/// Per-foot swing timer. A foot landing after a swing scores its air time
/// minus 0.5 s; contact is or-ed with the previous step's to ride over
/// single-step contact flicker.
struct FeetAirTime {
  std::array<double, kNumLegs> air{};
  std::array<bool, kNumLegs> last_contact{};

  void reset() {
    air.fill(0.0);
    last_contact.fill(false);
  }

  double update(const std::array<bool, kNumLegs>& contact, const Vec3& commands, double dt) {
    double r = 0.0;
    for (int l = 0; l < kNumLegs; ++l) {
      const bool filt = contact[l] || last_contact[l];
      last_contact[l] = contact[l];
      const bool first = air[l] > 0.0 && filt;
      air[l] += dt;
      if (first) r += air[l] - 0.5;
      if (filt) air[l] = 0.0;
    }
    return commands.head<2>().norm() > 0.1 ? r : 0.0;
  }
};

/// total = sum_i w_i * term_i * dt, optionally clipped at zero before the
/// termination term is added. The air-time
/// term is stateful and supplied by the caller.
inline RewardResult compute_reward(const SimState& state, const SimState& prev_state, const JointArray& torques,
                                   const ActVec& action, const ActVec& prev_action, const Vec3& commands,
                                   bool terminated, const RewardWeights& weights, double dt,
                                   double feet_air_time = 0.0) {
  const Quat inv = state.base_orientation.conjugate();
  const Vec3 v = inv * state.base_lin_vel;
  const Vec3 w = inv * state.base_ang_vel;
  RewardResult r;
  auto& t = r.terms;
  const double lin_err = (commands.head<2>() - v.head<2>()).squaredNorm();
  const double ang_err = (commands.z() - w.z()) * (commands.z() - w.z());
  t[kTrackingLinVel] = std::exp(-lin_err / weights.tracking_sigma);
  t[kTrackingAngVel] = std::exp(-ang_err / weights.tracking_sigma);
  t[kLinVelZ] = v.z() * v.z();
  t[kAngVelXy] = w.head<2>().squaredNorm();
  double tau2 = 0.0, acc2 = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    tau2 += torques[j] * torques[j];
    const double a = (state.qd[j] - prev_state.qd[j]) / dt;
    acc2 += a * a;
  }
  t[kTorques] = tau2;
  t[kDofAcc] = acc2;
  t[kActionRate] = (action - prev_action).squaredNorm();
  t[kTermination] = terminated ? 1.0 : 0.0;
  t[kFeetAirTime] = feet_air_time;
  for (int i = 0; i < kNumRewardTerms; ++i)
    if (i != kTermination) r.total += weights[i] * t[static_cast<std::size_t>(i)] * dt;
  if (weights.only_positive) r.total = std::max(0.0, r.total);
  // Termination is added after clipping so a penalty survives it.
  r.total += weights[kTermination] * t[kTermination] * dt;
  return r;
}

// ---------------------------------------------------------------------------
// Advantage estimation

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

inline GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                     double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n)
    throw ConfigError("gae: need T rewards, T+1 values and T done flags");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * live * values[i + 1] - values[i];
    next = delta + gamma * lambda * live * next;
    out.advantages[i] = next;
    out.returns[i] = next + values[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Actor-critic

inline constexpr double kLog2Pi = 1.8378770664093454836;

struct ActorCritic {
  Mlp actor;
  Mlp critic;
  VecX log_std;

  ActorCritic() = default;
  ActorCritic(int obs_dim, int act_dim, const std::vector<int>& actor_hidden, const std::vector<int>& critic_hidden,
              double init_std, Activation act = Activation::Elu) {
    std::vector<int> a{obs_dim}, c{obs_dim};
    a.insert(a.end(), actor_hidden.begin(), actor_hidden.end());
    c.insert(c.end(), critic_hidden.begin(), critic_hidden.end());
    a.push_back(act_dim);
    c.push_back(1);
    actor = Mlp(a, act);
    critic = Mlp(c, act);
    log_std = VecX::Constant(act_dim, std::log(init_std));
  }

  void init(Rng& rng) {
    actor.init_uniform(rng, 0.01);
    critic.init_uniform(rng);
  }

  Eigen::Index num_params() const { return actor.num_params() + critic.num_params() + log_std.size(); }

  VecX flat() const {
    VecX p(num_params());
    p << actor.params(), critic.params(), log_std;
    return p;
  }
  void set_flat(const VecX& p) {
    const auto na = actor.num_params(), nc = critic.num_params();
    actor.params() = p.segment(0, na);
    critic.params() = p.segment(na, nc);
    log_std = p.segment(na + nc, log_std.size());
  }
};

/// Log density of a diagonal Gaussian, one value per column.
inline VecX gaussian_log_prob(const MatX& actions, const MatX& mean, const VecX& log_std) {
  const VecX inv_std = (-log_std).array().exp();
  const MatX z = (actions - mean).array().colwise() * inv_std.array();
  VecX lp = -0.5 * z.colwise().squaredNorm().transpose();
  lp.array() -= log_std.sum() + 0.5 * kLog2Pi * static_cast<double>(log_std.size());
  return lp;
}

struct PpoConfig {
  double clip = 0.2;
  double value_coef = 1.0;
  double entropy_coef = 0.01;
  double max_grad_norm = 1.0;
  double learning_rate = 3e-4;
  int epochs = 5;
  int minibatches = 4;
};

struct PpoBatch {
  MatX obs;       // obs_dim x N
  MatX actions;   // act_dim x N
  VecX logp_old;  // N
  VecX advantages;
  VecX returns;
  Eigen::Index size() const { return obs.cols(); }
};

struct PpoLoss {
  double total = 0.0;
  double surrogate = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Loss to minimize: -surrogate + c_v * value_loss - c_e * entropy, with its
/// gradient over the flat actor-critic parameters.
inline PpoLoss ppo_loss(const ActorCritic& ac, const PpoBatch& b, const std::vector<Eigen::Index>& idx,
                        const PpoConfig& cfg, VecX* grad) {
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) throw ConfigError("ppo: empty minibatch");
  MatX obs(b.obs.rows(), n), act(b.actions.rows(), n);
  VecX lp_old(n), adv(n), ret(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = idx[static_cast<std::size_t>(i)];
    obs.col(i) = b.obs.col(k);
    act.col(i) = b.actions.col(k);
    lp_old[i] = b.logp_old[k];
    adv[i] = b.advantages[k];
    ret[i] = b.returns[k];
  }
  Mlp::Cache ca, cc;
  const MatX mean = ac.actor.forward(obs, grad ? &ca : nullptr);
  const MatX value = ac.critic.forward(obs, grad ? &cc : nullptr);
  const VecX lp = gaussian_log_prob(act, mean, ac.log_std);

  PpoLoss out;
  VecX dlp(n);
  double surr = 0.0, kl = 0.0, clipped = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = std::exp(lp[i] - lp_old[i]);
    const double rc = clamp(r, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double a = adv[i];
    surr += std::min(r * a, rc * a);
    // d min(rA, clip(r)A)/dr: A unless the clipped arm is active and flat.
    const bool flat = (rc * a < r * a) && (r < 1.0 - cfg.clip || r > 1.0 + cfg.clip);
    dlp[i] = flat ? 0.0 : -a * r / static_cast<double>(n);
    if (r < 1.0 - cfg.clip || r > 1.0 + cfg.clip) clipped += 1.0;
    kl += (r - 1.0) - std::log(r);
  }
  out.surrogate = surr / static_cast<double>(n);
  const VecX verr = value.row(0).transpose() - ret;
  out.value = verr.squaredNorm() / static_cast<double>(n);
  out.entropy = ac.log_std.sum() + 0.5 * (1.0 + kLog2Pi) * static_cast<double>(ac.log_std.size());
  out.total = -out.surrogate + cfg.value_coef * out.value - cfg.entropy_coef * out.entropy;
  out.approx_kl = kl / static_cast<double>(n);
  out.clip_fraction = clipped / static_cast<double>(n);

  if (grad) {
    const auto na = ac.actor.num_params(), nc = ac.critic.num_params();
    grad->setZero(ac.num_params());
    const VecX inv_var = (-2.0 * ac.log_std).array().exp();
    const MatX diff = act - mean;
    // d lp / d mean = (a - mean) / var; d lp / d log_std = z^2 - 1.
    MatX dmean = diff.array().colwise() * inv_var.array();
    dmean = dmean.array().rowwise() * dlp.transpose().array();
    VecX ga = VecX::Zero(na);
    ac.actor.backward(ca, dmean, ga);
    const MatX z2 = diff.array().square().colwise() * inv_var.array();
    VecX gstd = ((z2.array() - 1.0).matrix() * dlp);
    gstd.array() -= cfg.entropy_coef;
    MatX dv = (2.0 * cfg.value_coef / static_cast<double>(n)) * verr.transpose();
    VecX gc = VecX::Zero(nc);
    ac.critic.backward(cc, dv, gc);
    grad->segment(0, na) = ga;
    grad->segment(na, nc) = gc;
    grad->segment(na + nc, ac.log_std.size()) = gstd;
  }
  return out;
}

/// Gradient of -mean(log pi(a|s) * A): the plain policy-gradient estimator,
/// computed without ratios or clipping.
inline VecX vanilla_pg_gradient(const ActorCritic& ac, const PpoBatch& b) {
  const Eigen::Index n = b.size();
  Mlp::Cache ca;
  const MatX mean = ac.actor.forward(b.obs, &ca);
  const VecX inv_var = (-2.0 * ac.log_std).array().exp();
  const MatX diff = b.actions - mean;
  const VecX w = -b.advantages / static_cast<double>(n);
  MatX dmean = (diff.array().colwise() * inv_var.array()).rowwise() * w.transpose().array();
  VecX ga = VecX::Zero(ac.actor.num_params());
  ac.actor.backward(ca, dmean, ga);
  const MatX z2 = diff.array().square().colwise() * inv_var.array();
  const VecX gstd = (z2.array() - 1.0).matrix() * w;
  VecX g = VecX::Zero(ac.num_params());
  g.segment(0, ac.actor.num_params()) = ga;
  g.segment(ac.actor.num_params() + ac.critic.num_params(), ac.log_std.size()) = gstd;
  return g;
}

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(VecX::Zero(n)), v_(VecX::Zero(n)) {}

  void step(VecX& params, const VecX& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }
  long steps() const { return t_; }

 private:
  double lr_ = 3e-4, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  VecX m_, v_;
  long t_ = 0;
};

struct PpoStats {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int updates = 0;
};

struct NonFiniteLossError : Error {
  NonFiniteLossError(const std::string& what, PpoStats stats) : Error(what), stats(stats) {}
  PpoStats stats;
};

/// Normalizes advantages in place (zero mean, unit variance).
inline void normalize_advantages(VecX& adv) {
  const double mean = adv.mean();
  adv.array() -= mean;
  const double sd = std::sqrt(adv.squaredNorm() / std::max<Eigen::Index>(1, adv.size() - 1));
  adv /= (sd + 1e-8);
}

/// Clipped-surrogate update. Minibatch order comes from `rng`.
inline PpoStats ppo_update(ActorCritic& ac, Adam& opt, const PpoBatch& batch, const PpoConfig& cfg, Rng& rng) {
  const Eigen::Index n = batch.size();
  if (cfg.minibatches < 1 || cfg.epochs < 1) throw ConfigError("ppo: epochs and minibatches must be positive");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  PpoStats st;
  VecX params = ac.flat();
  VecX grad;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    for (int m = 0; m < cfg.minibatches; ++m) {
      const std::size_t lo = perm.size() * m / cfg.minibatches, hi = perm.size() * (m + 1) / cfg.minibatches;
      std::vector<Eigen::Index> idx(perm.begin() + static_cast<long>(lo), perm.begin() + static_cast<long>(hi));
      const PpoLoss l = ppo_loss(ac, batch, idx, cfg, &grad);
      if (!std::isfinite(l.total) || !grad.allFinite())
        throw NonFiniteLossError("ppo: non-finite loss (surrogate " + std::to_string(l.surrogate) + ", value " +
                                     std::to_string(l.value) + ")",
                                 st);
      const double norm = grad.norm();
      if (norm > cfg.max_grad_norm) grad *= cfg.max_grad_norm / norm;
      opt.step(params, grad);
      ac.set_flat(params);
      st.surrogate += l.surrogate;
      st.value_loss += l.value;
      st.entropy += l.entropy;
      st.approx_kl += l.approx_kl;
      st.clip_fraction += l.clip_fraction;
      ++st.updates;
    }
  }
  const double k = 1.0 / std::max(1, st.updates);
  st.surrogate *= k;
  st.value_loss *= k;
  st.entropy *= k;
  st.approx_kl *= k;
  st.clip_fraction *= k;
  return st;
}

// ---------------------------------------------------------------------------
// Training

enum class DelayRandomization { Off, UniformFrames };

struct CommandRanges {
  double vx_min = -0.5, vx_max = 1.0;
  double vy_min = -0.3, vy_max = 0.3;
  double wz_min = -0.5, wz_max = 0.5;
};

struct TrainConfig {
  int num_envs = 64;
  int rollout_length = 48;
  int iterations = 300;
  double gamma = 0.99;
  double lambda = 0.95;
  PpoConfig ppo;
  double init_noise_std = 1.0;
  std::vector<int> actor_hidden{256, 128, 64};
  std::vector<int> critic_hidden{256, 128, 64};
  DelayRandomization delay = DelayRandomization::Off;
  int delay_min = 1, delay_max = 3;
  RewardWeights rewards;
  CommandRanges commands;
  double episode_length = 20.0;
  double command_resample_time = 10.0;
  /// Spawn perturbations, uniform half-widths.
  double spawn_joint_noise = 0.1;
  double spawn_velocity_noise = 0.2;
  /// Terrain kinds cycled over environments.
  std::vector<TerrainKind> terrains{TerrainKind::Flat};
  TerrainParams terrain_params;
  RuntimeConfig runtime = training_runtime();
  std::uint64_t seed = 1;
  int workers = 1;
  int checkpoint_every = 50;

  static RuntimeConfig training_runtime() {
    RuntimeConfig r;
    r.bus.latency = LatencyModel::fixed(0.0);
    r.record_log = false;
    return r;
  }

  void validate() const {
    if (num_envs < 1) throw ConfigError("train.num_envs: must be at least 1");
    if (rollout_length < 1) throw ConfigError("train.rollout_length: must be at least 1");
    if (iterations < 0) throw ConfigError("train.iterations: must be non-negative");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma: must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda: must lie in [0, 1]");
    if (!(ppo.clip > 0.0)) throw ConfigError("train.clip: must be positive");
    if (ppo.epochs < 1 || ppo.minibatches < 1) throw ConfigError("train: epochs and minibatches must be positive");
    if (ppo.minibatches > num_envs * rollout_length) throw ConfigError("train.minibatches: more than samples");
    if (!(ppo.learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be positive");
    if (!(init_noise_std > 0.0)) throw ConfigError("train.init_noise_std: must be positive");
    if (delay_min < 0 || delay_max < delay_min) throw ConfigError("train.delay: need 0 <= min <= max");
    if (delay_max > runtime.max_delay_frames) throw ConfigError("train.delay_max: exceeds runtime.max_delay_frames");
    if (!(episode_length > 0.0)) throw ConfigError("train.episode_length: must be positive");
    if (!(command_resample_time > 0.0)) throw ConfigError("train.command_resample_time: must be positive");
    if (terrains.empty()) throw ConfigError("train.terrains: need at least one kind");
    if (workers < 1) throw ConfigError("train.workers: must be at least 1");
    runtime.validate();
  }
};

struct EpisodeRecord {
  int iteration = 0;
  int env = 0;
  int delay_frames = 0;
  double length = 0.0;
  double reward = 0.0;
  Termination reason = Termination::Running;
};

struct CurveRow {
  int iteration = 0;
  double mean_reward = 0.0;
  std::array<double, kNumRewardTerms> term_means{};
  double mean_episode_length = 0.0;
  int episodes = 0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double action_std = 0.0;
};

struct TrainingDivergedError : Error {
  using Error::Error;
};

inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int w = std::min(workers, n);
  for (int t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += w) fn(i);
    });
  for (auto& th : pool) th.join();
}

class Trainer {
 public:
  Trainer(RobotDescription desc, TrainConfig cfg) : desc_(std::move(desc)), cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng init_rng(derive_seed(cfg_.seed, 0x1000));
    ac_ = ActorCritic(kObsDim, kActDim, cfg_.actor_hidden, cfg_.critic_hidden, cfg_.init_noise_std);
    ac_.init(init_rng);
    opt_ = Adam(ac_.num_params(), cfg_.ppo.learning_rate);
    update_rng_ = Rng(derive_seed(cfg_.seed, 0x2000));

    std::vector<std::shared_ptr<const Terrain>> terrains;
    for (std::size_t i = 0; i < cfg_.terrains.size(); ++i)
      terrains.push_back(std::make_shared<Terrain>(
          sample_terrain(cfg_.terrains[i], cfg_.terrain_params, derive_seed(cfg_.seed, 0x3000 + i))));
    envs_.resize(static_cast<std::size_t>(cfg_.num_envs));
    for (int e = 0; e < cfg_.num_envs; ++e) {
      auto& env = envs_[static_cast<std::size_t>(e)];
      env.session = std::make_unique<Session>(desc_, cfg_.runtime, terrains[static_cast<std::size_t>(e) % terrains.size()]);
      env.rng = Rng(derive_seed(cfg_.seed, 0x10000 + static_cast<std::uint64_t>(e)));
      reset_env(e);
    }
  }

  const ActorCritic& actor_critic() const { return ac_; }
  ActorCritic& actor_critic() { return ac_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<CurveRow>& curves() const { return curves_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  int iteration() const { return iteration_; }

  /// One rollout plus one PPO update.
  CurveRow step() {
    const int E = cfg_.num_envs, T = cfg_.rollout_length;
    const Eigen::Index N = static_cast<Eigen::Index>(E) * T;
    PpoBatch batch;
    batch.obs.resize(kObsDim, N);
    batch.actions.resize(kActDim, N);
    batch.logp_old.resize(N);
    std::vector<double> values(static_cast<std::size_t>(E) * (T + 1));
    std::vector<double> rewards(static_cast<std::size_t>(N));
    std::vector<std::uint8_t> dones(static_cast<std::size_t>(N));
    std::array<double, kNumRewardTerms> term_sum{};
    std::vector<std::array<double, kNumRewardTerms>> env_terms(static_cast<std::size_t>(E));
    std::vector<double> bootstrap(static_cast<std::size_t>(E));
    std::vector<std::uint8_t> timed_out(static_cast<std::size_t>(E));
    std::vector<ObsVec> terminal_obs(static_cast<std::size_t>(E));
    const int first_episode = static_cast<int>(episodes_.size());

    MatX obs(kObsDim, E);
    for (int t = 0; t < T; ++t) {
      for (int e = 0; e < E; ++e) obs.col(e) = envs_[static_cast<std::size_t>(e)].obs;
      const MatX mean = ac_.actor.forward(obs);
      const MatX val = ac_.critic.forward(obs);
      const VecX std = ac_.log_std.array().exp();
      MatX act(kActDim, E);
      for (int e = 0; e < E; ++e) {
        auto& rng = envs_[static_cast<std::size_t>(e)].rng;
        for (int j = 0; j < kActDim; ++j) act(j, e) = mean(j, e) + std[j] * rng.normal();
      }
      const VecX lp = gaussian_log_prob(act, mean, ac_.log_std);
      for (int e = 0; e < E; ++e) {
        const Eigen::Index k = static_cast<Eigen::Index>(e) * T + t;
        batch.obs.col(k) = obs.col(e);
        batch.actions.col(k) = act.col(e);
        batch.logp_old[k] = lp[e];
        values[static_cast<std::size_t>(e) * (T + 1) + t] = val(0, e);
      }
      parallel_for(E, cfg_.workers, [&](int e) {
        const auto k = static_cast<std::size_t>(e) * T + t;
        const auto out = env_step(e, act.col(e));
        rewards[k] = out.reward.total;
        dones[k] = out.done ? 1 : 0;
        timed_out[static_cast<std::size_t>(e)] = out.timed_out ? 1 : 0;
        terminal_obs[static_cast<std::size_t>(e)] = out.terminal_obs;
        env_terms[static_cast<std::size_t>(e)] = out.reward.terms;
      });
      collect_episodes();
      // Time limits are not failures: bootstrap from the value of the state
      // the episode was cut at.
      for (int e = 0; e < E; ++e) {
        const auto k = static_cast<std::size_t>(e) * T + t;
        if (timed_out[static_cast<std::size_t>(e)]) {
          const double v = ac_.critic.forward(VecX(terminal_obs[static_cast<std::size_t>(e)]))[0];
          rewards[k] += cfg_.gamma * v;
        }
        for (int i = 0; i < kNumRewardTerms; ++i) term_sum[static_cast<std::size_t>(i)] += env_terms[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)];
      }
    }
    for (int e = 0; e < E; ++e) obs.col(e) = envs_[static_cast<std::size_t>(e)].obs;
    const MatX last = ac_.critic.forward(obs);
    for (int e = 0; e < E; ++e) values[static_cast<std::size_t>(e) * (T + 1) + T] = last(0, e);

    batch.advantages.resize(N);
    batch.returns.resize(N);
    double reward_sum = 0.0;
    for (int e = 0; e < E; ++e) {
      const auto off = static_cast<std::size_t>(e) * T;
      const auto g = gae(std::span(rewards).subspan(off, T), std::span(values).subspan(static_cast<std::size_t>(e) * (T + 1), T + 1),
                         std::span(dones).subspan(off, T), cfg_.gamma, cfg_.lambda);
      for (int t = 0; t < T; ++t) {
        batch.advantages[static_cast<Eigen::Index>(off) + t] = g.advantages[static_cast<std::size_t>(t)];
        batch.returns[static_cast<Eigen::Index>(off) + t] = g.returns[static_cast<std::size_t>(t)];
      }
    }
    for (double r : rewards) reward_sum += r;
    const double mean_reward = reward_sum / static_cast<double>(N);
    if (!std::isfinite(mean_reward)) throw TrainingDivergedError("training diverged: mean reward is not finite");
    normalize_advantages(batch.advantages);

    const PpoStats st = ppo_update(ac_, opt_, batch, cfg_.ppo, update_rng_);

    CurveRow row;
    row.iteration = iteration_;
    row.mean_reward = mean_reward;
    for (int i = 0; i < kNumRewardTerms; ++i) row.term_means[static_cast<std::size_t>(i)] = term_sum[static_cast<std::size_t>(i)] / static_cast<double>(N);
    double len = 0.0;
    for (std::size_t i = static_cast<std::size_t>(first_episode); i < episodes_.size(); ++i) len += episodes_[i].length;
    row.episodes = static_cast<int>(episodes_.size()) - first_episode;
    if (row.episodes > 0) {
      mean_episode_length_ = len / row.episodes;
    }
    row.mean_episode_length = mean_episode_length_;
    row.surrogate = st.surrogate;
    row.value_loss = st.value_loss;
    row.entropy = st.entropy;
    row.approx_kl = st.approx_kl;
    row.action_std = ac_.log_std.array().exp().mean();
    curves_.push_back(row);
    ++iteration_;
    return row;
  }

 private:
  struct Env {
    std::unique_ptr<Session> session;
    Rng rng;
    ObsVec obs = ObsVec::Zero();
    Vec3 commands = Vec3::Zero();
    double next_resample = 0.0;
    double episode_reward = 0.0;
    SimState prev_state;
    FeetAirTime air_time;
    int episode_index = 0;
  };

  struct StepOut {
    RewardResult reward;
    bool done = false;
    bool timed_out = false;
    ObsVec terminal_obs = ObsVec::Zero();
  };

  Vec3 sample_commands(Rng& rng) const {
    const auto& c = cfg_.commands;
    return Vec3{rng.uniform(c.vx_min, c.vx_max), rng.uniform(c.vy_min, c.vy_max), rng.uniform(c.wz_min, c.wz_max)};
  }

  void reset_env(int e) {
    auto& env = envs_[static_cast<std::size_t>(e)];
    auto& s = *env.session;
    const SimState init =
        perturbed_spawn(s.plant(), s.terrain(), env.rng, cfg_.spawn_joint_noise, cfg_.spawn_velocity_noise);
    const int delay = cfg_.delay == DelayRandomization::Off ? 0 : sample_delay_frames(env.rng, cfg_.delay_min, cfg_.delay_max);
    s.reset(init, delay, env.rng.next_u64(), cfg_.episode_length);
    env.commands = sample_commands(env.rng);
    env.next_resample = cfg_.command_resample_time;
    env.episode_reward = 0.0;
    env.air_time.reset();
    env.prev_state = s.state();
    env.obs = s.observe(env.commands);
  }

  StepOut env_step(int e, const ActVec& action) {
    auto& env = envs_[static_cast<std::size_t>(e)];
    auto& s = *env.session;
    const ActVec prev_action = s.prev_action();
    s.act(action);
    StepOut out;
    const bool fell = s.termination() == Termination::Fall || s.termination() == Termination::Fault;
    const double dt = 1.0 / cfg_.runtime.policy_rate;
    const double air = env.air_time.update(s.state().contact_flags, env.commands, dt);
    out.reward = compute_reward(s.state(), env.prev_state, s.torques(), action, prev_action, env.commands, fell,
                                cfg_.rewards, dt, air);
    if (!std::isfinite(out.reward.total)) {
      out.reward.total = 0.0;
    }
    env.episode_reward += out.reward.total;
    env.prev_state = s.state();
    if (s.done()) {
      out.done = true;
      out.timed_out = s.termination() == Termination::Completed;
      if (out.timed_out) out.terminal_obs = s.observe(env.commands);
      {
        EpisodeRecord rec{iteration_, e, s.delay_frames(), s.end_time(), env.episode_reward, s.termination()};
        std::lock_guard<std::mutex> lock(episodes_mutex_);
        pending_episodes_.push_back(rec);
      }
      reset_env(e);
      return out;
    }
    if (s.time() + 1e-9 >= env.next_resample) {
      env.commands = sample_commands(env.rng);
      env.next_resample += cfg_.command_resample_time;
    }
    env.obs = s.observe(env.commands);
    return out;
  }

  /// Moves episodes finished during the last rollout step into `episodes_`
  /// in a worker-independent order.
  void collect_episodes() {
    std::sort(pending_episodes_.begin(), pending_episodes_.end(),
              [](const EpisodeRecord& a, const EpisodeRecord& b) { return a.env < b.env; });
    episodes_.insert(episodes_.end(), pending_episodes_.begin(), pending_episodes_.end());
    pending_episodes_.clear();
  }

  RobotDescription desc_;
  TrainConfig cfg_;
  ActorCritic ac_;
  Adam opt_;
  Rng update_rng_;
  std::vector<Env> envs_;
  std::vector<CurveRow> curves_;
  std::vector<EpisodeRecord> episodes_;
  std::vector<EpisodeRecord> pending_episodes_;
  std::mutex episodes_mutex_;
  double mean_episode_length_ = 0.0;
  int iteration_ = 0;
};

}  // namespace mevius
