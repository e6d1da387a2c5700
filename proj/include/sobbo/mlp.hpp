#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sobbo/container.hpp"
#include "sobbo/rng.hpp"
#include "sobbo/tape.hpp"
#include "sobbo/tensor.hpp"

namespace sobbo {

enum class Activation { tanh, relu };

inline std::string activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }
inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw config_error("unknown activation: " + s);
}

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1) throw config_error("mlp spec: input_dim must be >= 1");
    if (hidden.empty()) throw config_error("mlp spec: at least one hidden layer required");
    for (std::size_t w : hidden)
      if (w < 1) throw config_error("mlp spec: hidden widths must be >= 1");
    if (output_dim != 1 && output_dim != input_dim)
      throw config_error("mlp spec: output_dim must be 1 or input_dim");
  }

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> d{input_dim};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(output_dim);
    return d;
  }

  std::size_t param_count() const {
    auto dims = layer_dims();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  }
};

/// Multilayer perceptron; weights[l] has shape [in x out], biases[l] [out].
struct MlpModel {
  MlpSpec spec;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t layer_count() const { return weights.size(); }
};

/// Weights uniform on [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero,
/// drawn layer by layer in row-major order from the spec seed.
inline MlpModel init_model(const MlpSpec& spec) {
  spec.validate();
  MlpModel m;
  m.spec = spec;
  Rng rng(spec.seed);
  auto dims = spec.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (auto& v : w.data) v = rng.uniform(-s, s);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Tensor::zeros({fan_out}));
  }
  return m;
}

/// Plain (non-tape) forward pass over a batch; rows of `input` are inputs.
inline Tensor forward_plain(const MlpModel& m, const Tensor& input) {
  if (input.rank() != 2 || input.shape[1] != m.spec.input_dim)
    throw shape_error("mlp forward: input " + shape_str(input.shape) + " does not match input_dim " +
                      std::to_string(m.spec.input_dim));
  Tensor a = input;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    Tensor z = Tensor::zeros({a.shape[0], m.weights[l].shape[1]});
    matmul_into(a, m.weights[l], z);
    for (std::size_t i = 0; i < z.shape[0]; ++i)
      for (std::size_t j = 0; j < z.shape[1]; ++j) z(i, j) += m.biases[l](j);
    if (l + 1 < m.layer_count()) {
      if (m.spec.activation == Activation::tanh)
        for (auto& v : z.data) v = std::tanh(v);
      else
        for (auto& v : z.data) v = v > 0 ? v : 0.0;
    }
    a = std::move(z);
  }
  if (!a.all_finite()) throw numeric_error("mlp forward: non-finite output");
  return a;
}

/// Model parameters attached to a tape as leaves, so losses built on the tape
/// are differentiable with respect to them.
struct MlpOnTape {
  const MlpSpec* spec = nullptr;
  Tape* tape = nullptr;
  std::vector<NodeId> weight_nodes;
  std::vector<NodeId> bias_nodes;

  /// Batch evaluation: X is [B x input_dim], result [B x output_dim].
  /// Also usable as a tape-field: eval(tape, node).
  NodeId eval(Tape& t, NodeId x) const {
    if (&t != tape) throw error("mlp on tape: evaluated on a different tape than it is attached to");
    return eval(x);
  }
  NodeId eval(NodeId x) const {
    Tape& t = *tape;
    const std::size_t batch = t.val(x).shape.at(0);
    NodeId a = x;
    for (std::size_t l = 0; l < weight_nodes.size(); ++l) {
      NodeId z = t.add(t.matmul(a, weight_nodes[l]), t.broadcast_rows(bias_nodes[l], batch));
      a = (l + 1 < weight_nodes.size())
              ? (spec->activation == Activation::tanh ? t.tanh(z) : t.relu(z))
              : z;
    }
    return a;
  }

  std::vector<NodeId> param_nodes() const {
    std::vector<NodeId> out;
    for (std::size_t l = 0; l < weight_nodes.size(); ++l) {
      out.push_back(weight_nodes[l]);
      out.push_back(bias_nodes[l]);
    }
    return out;
  }
};

inline MlpOnTape attach_model(Tape& t, const MlpModel& m) {
  MlpOnTape a;
  a.spec = &m.spec;
  a.tape = &t;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    a.weight_nodes.push_back(t.leaf(m.weights[l]));
    a.bias_nodes.push_back(t.leaf(m.biases[l]));
  }
  return a;
}

/// Frozen attachment: parameters enter the tape as constants. Used at
/// inference where only input gradients are needed.
inline MlpOnTape attach_model_frozen(Tape& t, const MlpModel& m) {
  MlpOnTape a;
  a.spec = &m.spec;
  a.tape = &t;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    a.weight_nodes.push_back(t.constant(m.weights[l]));
    a.bias_nodes.push_back(t.constant(m.biases[l]));
  }
  return a;
}

/// Scalar node g_phi(zeta) for a surrogate model (output_dim == 1).
inline NodeId eval_surrogate(Tape& t, const MlpOnTape& m, const Tensor& zeta) {
  if (m.spec->output_dim != 1) throw config_error("eval_surrogate: model is not a surrogate");
  if (zeta.rank() != 1 || zeta.shape[0] != m.spec->input_dim)
    throw shape_error("eval_surrogate: input " + shape_str(zeta.shape));
  NodeId x = t.constant(Tensor::matrix(1, zeta.shape[0], zeta.data));
  return t.reshape_to(m.eval(x), Shape{});
}

/// Vector node h_phi(zeta) in R^d for a field model (output_dim == input_dim).
inline NodeId eval_field(Tape& t, const MlpOnTape& m, const Tensor& zeta) {
  if (m.spec->output_dim != m.spec->input_dim) throw config_error("eval_field: model is not a field");
  if (zeta.rank() != 1 || zeta.shape[0] != m.spec->input_dim)
    throw shape_error("eval_field: input " + shape_str(zeta.shape));
  NodeId x = t.constant(Tensor::matrix(1, zeta.shape[0], zeta.data));
  return t.reshape_to(m.eval(x), Shape{m.spec->output_dim});
}

/// Differentiable scalar node for dh^j / dzeta^i at `zeta`. The returned node
/// is produced by a recorded gradient pass, so it stays differentiable with
/// respect to the model parameters (order-two contract).
inline NodeId input_jacobian_entry(Tape& t, const MlpOnTape& m, const Tensor& zeta, std::size_t i,
                                   std::size_t j) {
  const std::size_t d = m.spec->input_dim;
  if (i >= d || j >= d) throw config_error("input_jacobian_entry: index out of range");
  if (m.spec->output_dim != d) throw config_error("input_jacobian_entry: model is not a field");
  NodeId x = t.leaf(Tensor::matrix(1, d, zeta.data));
  NodeId h = m.eval(x);                    // [1 x d]
  NodeId hj = t.at(h, std::size_t{0}, j);  // scalar
  NodeId gx = backward_nodes(t, hj, std::array<NodeId, 1>{x}).at(x);  // [1 x d]
  return t.at(gx, std::size_t{0}, i);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json mlp_spec_to_json(const MlpSpec& s) {
  nlohmann::json j;
  j["input_dim"] = s.input_dim;
  j["hidden"] = s.hidden;
  j["output_dim"] = s.output_dim;
  j["activation"] = activation_name(s.activation);
  j["seed"] = s.seed;
  return j;
}

inline MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline void model_to_container(const MlpModel& m, Container& c) {
  c.meta["model_spec"] = mlp_spec_to_json(m.spec);
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    c.arrays.push_back({"w" + std::to_string(l), m.weights[l].shape, m.weights[l].data});
    c.arrays.push_back({"b" + std::to_string(l), m.biases[l].shape, m.biases[l].data});
  }
}

inline MlpModel model_from_container(const Container& c) {
  MlpModel m;
  m.spec = mlp_spec_from_json(c.meta.at("model_spec"));
  m.spec.validate();
  auto dims = m.spec.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto& w = c.array("w" + std::to_string(l));
    const auto& b = c.array("b" + std::to_string(l));
    m.weights.push_back(Tensor(w.shape, w.data));
    m.biases.push_back(Tensor(b.shape, b.data));
  }
  return m;
}

inline void save_checkpoint(const std::string& path, const MlpModel& m) {
  Container c;
  c.meta["format"] = "sobbo-checkpoint";
  c.meta["version"] = 1;
  model_to_container(m, c);
  save_container(path, c);
}

inline MlpModel load_checkpoint(const std::string& path) {
  return model_from_container(load_container(path));
}

}  // namespace sobbo
