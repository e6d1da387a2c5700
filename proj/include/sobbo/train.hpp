#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sobbo/adam.hpp"
#include "sobbo/dataset.hpp"
#include "sobbo/losses.hpp"
#include "sobbo/mlp.hpp"

namespace sobbo {

enum class Method {
  etd,
  dgi_naive,      // linear-path reconstruction only
  dgi_path1,      // path independence, 1 sampled path
  dgi_path64,     // path independence, 64 sampled paths
  dgi_path1_bal,  // 1 sampled path + balance loss
  dgi_full,       // 64 sampled paths + balance loss
};

inline bool is_dgi(Method m) { return m != Method::etd; }

inline std::string method_name(Method m) {
  switch (m) {
    case Method::etd: return "etd";
    case Method::dgi_naive: return "dgi_naive";
    case Method::dgi_path1: return "dgi_path1";
    case Method::dgi_path64: return "dgi_path64";
    case Method::dgi_path1_bal: return "dgi_path1_bal";
    case Method::dgi_full: return "dgi_full";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::etd, Method::dgi_naive, Method::dgi_path1, Method::dgi_path64,
                   Method::dgi_path1_bal, Method::dgi_full})
    if (method_name(m) == s) return m;
  throw config_error("unknown method: " + s);
}

/// The balance weight used by the *_bal/full variants when the config leaves
/// it unset. The ablation grid for the weight is {0, 1, 10, 100, 1000}; 10 is
/// the shipped default.
inline constexpr double kDefaultBalanceWeight = 10.0;

struct TrainConfig {
  Method method = Method::etd;
  double learning_rate = 5e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  LossConfig loss;
  std::size_t eval_every = 0;  // 0: only the initial and final checkpoints
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden = {500, 500, 500};
  Activation activation = Activation::tanh;

  void validate() const {
    if (learning_rate <= 0) throw config_error("train config: learning_rate must be > 0");
    if (batch_size < 2) throw config_error("train config: batch_size must be >= 2");
    loss.validate();
  }
};

/// Pins the loss settings implied by a DGI variant onto the config.
/// naive: a=0, L=0; path1: a=0, L=1; path64: a=0, L=64;
/// path1_bal: a>0, L=1; full: a>0, L=64.
inline void apply_variant(TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::etd:
      break;
    case Method::dgi_naive:
      cfg.loss.balance_weight = 0.0;
      cfg.loss.num_paths = 0;
      break;
    case Method::dgi_path1:
      cfg.loss.balance_weight = 0.0;
      cfg.loss.num_paths = 1;
      break;
    case Method::dgi_path64:
      cfg.loss.balance_weight = 0.0;
      cfg.loss.num_paths = 64;
      break;
    case Method::dgi_path1_bal:
      if (cfg.loss.balance_weight <= 0.0) cfg.loss.balance_weight = kDefaultBalanceWeight;
      cfg.loss.num_paths = 1;
      break;
    case Method::dgi_full:
      if (cfg.loss.balance_weight <= 0.0) cfg.loss.balance_weight = kDefaultBalanceWeight;
      cfg.loss.num_paths = 64;
      break;
  }
}

struct TraceRow {
  std::size_t step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double cos_sim = std::numeric_limits<double>::quiet_NaN();
  double norm_dist = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  /// Gradient-quality evaluation at a checkpoint; returns (cos_sim, norm_dist).
  std::function<std::pair<double, double>(const MlpModel&, std::size_t)> evaluate;
  /// Called at every checkpoint step with the current state.
  std::function<void(const MlpModel&, const AdamState&, std::size_t)> on_checkpoint;
};

struct TrainResult {
  MlpModel model;
  AdamState opt;
  std::vector<TraceRow> trace;
};

inline void save_train_state(const std::string& path, const MlpModel& m, const AdamState& opt,
                             std::size_t step, Method method) {
  Container c;
  c.meta["format"] = "sobbo-checkpoint";
  c.meta["version"] = 1;
  c.meta["step"] = step;
  c.meta["method"] = method_name(method);
  model_to_container(m, c);
  for (std::size_t p = 0; p < opt.m.size(); ++p) {
    c.arrays.push_back({"adam_m" + std::to_string(p), opt.m[p].shape, opt.m[p].data});
    c.arrays.push_back({"adam_v" + std::to_string(p), opt.v[p].shape, opt.v[p].data});
  }
  c.meta["adam_step"] = opt.step;
  save_container(path, c);
}

struct TrainState {
  MlpModel model;
  AdamState opt;
  std::size_t step = 0;
  std::string method;
};

inline TrainState load_train_state(const std::string& path) {
  Container c = load_container(path);
  TrainState s;
  s.model = model_from_container(c);
  s.step = c.meta.value("step", std::size_t{0});
  s.method = c.meta.value("method", std::string{});
  std::size_t p = 0;
  while (c.has_array("adam_m" + std::to_string(p))) {
    const auto& m = c.array("adam_m" + std::to_string(p));
    const auto& v = c.array("adam_v" + std::to_string(p));
    s.opt.m.push_back(Tensor(m.shape, m.data));
    s.opt.v.push_back(Tensor(v.shape, v.data));
    ++p;
  }
  s.opt.step = c.meta.value("adam_step", std::size_t{0});
  return s;
}

namespace detail {

/// Per-step randomness is keyed by (seed, step), never carried across steps,
/// so a run resumed from a checkpoint reproduces the original trace exactly.
inline Rng step_rng(std::uint64_t seed, std::size_t step, std::uint64_t lane) {
  return Rng(seed, static_cast<std::uint64_t>(step) * 8 + lane);
}

inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = rng.uniform_index(n);
  return idx;
}

inline std::string index_list(std::span<const std::size_t> idx) {
  std::ostringstream os;
  for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << idx[i];
  return os.str();
}

template <class LossBuilder>
TrainResult train_loop(const OfflineDataset& ds, const TrainConfig& cfg, MlpModel model,
                       AdamState opt, std::size_t start_step, const TrainHooks& hooks,
                       LossBuilder&& build_loss) {
  if (ds.size() == 0) throw config_error("train: dataset is empty");
  cfg.validate();

  TrainResult result;
  result.trace.clear();
  double initial_loss = std::numeric_limits<double>::quiet_NaN();

  auto is_checkpoint = [&](std::size_t s) {
    return s == cfg.steps || (cfg.eval_every > 0 && s % cfg.eval_every == 0) || s == 0;
  };

  for (std::size_t s = start_step; s <= cfg.steps; ++s) {
    Rng batch_rng = step_rng(cfg.seed, s, 0);
    const auto batch = sample_batch(ds.size(), cfg.batch_size, batch_rng);

    Tape tape;
    MlpOnTape attached = attach_model(tape, model);
    NodeId loss_node = kNoNode;
    try {
      loss_node = build_loss(tape, attached, batch, s);
    } catch (const numeric_error& e) {
      throw numeric_error("train: step " + std::to_string(s) + ", batch [" + index_list(batch) +
                          "]: " + e.what());
    }
    const double loss = tape.val(loss_node).value();
    if (std::isnan(initial_loss)) initial_loss = loss;
    const double guard = initial_loss > 0 ? 1e6 * initial_loss : 1e6;
    if (!std::isfinite(loss) || loss > guard)
      throw numeric_error("train: diverged at step " + std::to_string(s) + " (loss " +
                          format_double(loss) + ", initial " + format_double(initial_loss) +
                          "), batch [" + index_list(batch) + "]");

    if (is_checkpoint(s)) {
      TraceRow row;
      row.step = s;
      row.loss = loss;
      if (hooks.evaluate) {
        auto [c, n] = hooks.evaluate(model, s);
        row.cos_sim = c;
        row.norm_dist = n;
      }
      result.trace.push_back(row);
      if (hooks.on_checkpoint) hooks.on_checkpoint(model, opt, s);
    }
    if (s == cfg.steps) break;

    GradRequest req;
    req.output = loss_node;
    req.wrt = attached.param_nodes();
    auto grads = backward(tape, req);

    std::vector<Tensor*> params = model_params(model);
    std::vector<const Tensor*> gptrs;
    const auto pnodes = attached.param_nodes();
    gptrs.reserve(pnodes.size());
    for (NodeId pn : pnodes) gptrs.push_back(&grads.at(pn));
    try {
      adam_step(params, gptrs, opt, cfg.learning_rate);
    } catch (const numeric_error& e) {
      throw numeric_error("train: step " + std::to_string(s) + ": " + e.what());
    }
  }

  result.model = std::move(model);
  result.opt = std::move(opt);
  return result;
}

}  // namespace detail

/// ERM training of the surrogate g_phi (Eq.-style mean squared error), with
/// Adam updates, divergence guard, and checkpoint/evaluation hooks.
inline TrainResult train_etd_from(const OfflineDataset& ds, const TrainConfig& cfg, MlpModel model,
                                  AdamState opt, std::size_t start_step,
                                  const TrainHooks& hooks = {}) {
  if (cfg.method != Method::etd) throw config_error("train_etd: method must be etd");
  if (model.spec.output_dim != 1) throw config_error("train_etd: model must be a surrogate");
  return detail::train_loop(ds, cfg, std::move(model), std::move(opt), start_step, hooks,
                            [&](Tape& t, const MlpOnTape& m, std::span<const std::size_t> batch,
                                std::size_t) {
                              Tensor z = ds.zeta_batch(batch);
                              auto ys = ds.y_batch(batch);
                              return erm_loss_node(t, m, z, ys);
                            });
}

inline TrainResult train_etd(const OfflineDataset& ds, TrainConfig cfg, const TrainHooks& hooks = {}) {
  apply_variant(cfg);
  MlpSpec spec;
  spec.input_dim = ds.zeta_dim();
  spec.hidden = cfg.hidden;
  spec.output_dim = 1;
  spec.activation = cfg.activation;
  spec.seed = cfg.seed;
  MlpModel model = init_model(spec);
  AdamState opt = AdamState::zeros_like(model_params(model));
  return train_etd_from(ds, cfg, std::move(model), std::move(opt), 0, hooks);
}

/// DGI training of the field h_phi: per-step batch, pair set, sampled paths,
/// balance pairs, then one Adam update on the combined objective.
inline TrainResult train_dgi_from(const OfflineDataset& ds, const TrainConfig& cfg, MlpModel model,
                                  AdamState opt, std::size_t start_step,
                                  const TrainHooks& hooks = {}) {
  if (!is_dgi(cfg.method)) throw config_error("train_dgi: method must be a DGI variant");
  if (model.spec.output_dim != model.spec.input_dim)
    throw config_error("train_dgi: model must be a field");
  return detail::train_loop(
      ds, cfg, std::move(model), std::move(opt), start_step, hooks,
      [&](Tape& t, const MlpOnTape& m, std::span<const std::size_t> batch, std::size_t s) {
        PairBatch pb;
        pb.zetas = ds.zeta_batch(batch);
        pb.ys = ds.y_batch(batch);
        Rng pair_rng = detail::step_rng(cfg.seed, s, 1);
        pb.pairs = make_batch_pairs(batch.size(), pair_rng);
        Rng loss_rng = detail::step_rng(cfg.seed, s, 2);
        return dgi_total_loss_node(t, m, pb, cfg.loss, loss_rng);
      });
}

inline TrainResult train_dgi(const OfflineDataset& ds, TrainConfig cfg, const TrainHooks& hooks = {}) {
  apply_variant(cfg);
  MlpSpec spec;
  spec.input_dim = ds.zeta_dim();
  spec.hidden = cfg.hidden;
  spec.output_dim = ds.zeta_dim();
  spec.activation = cfg.activation;
  spec.seed = cfg.seed;
  MlpModel model = init_model(spec);
  AdamState opt = AdamState::zeros_like(model_params(model));
  return train_dgi_from(ds, cfg, std::move(model), std::move(opt), 0, hooks);
}

inline TrainResult train(const OfflineDataset& ds, TrainConfig cfg, const TrainHooks& hooks = {}) {
  apply_variant(cfg);
  return cfg.method == Method::etd ? train_etd(ds, cfg, hooks) : train_dgi(ds, cfg, hooks);
}

// ---------------------------------------------------------------------------
// Metric trace files
// ---------------------------------------------------------------------------

inline void save_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw config_error("trace: cannot open for write: " + path);
  f << "step,loss,cos_sim,norm_dist\n";
  for (const auto& r : trace)
    f << r.step << "," << format_double(r.loss) << "," << format_double(r.cos_sim) << ","
      << format_double(r.norm_dist) << "\n";
}

}  // namespace sobbo
