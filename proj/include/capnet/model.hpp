// Copyright 2026 The CapNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Set regression networks.
//
// Every model shares the same front end: a learned embedding layer
// (input -> embed_dim, ReLU) followed by the instance encoder epsilon
// (embed_dim -> hidden_dim MLP). The families differ in how they aggregate:
//
//   DeepSet     Z = sum_i eps(x_i)                       Y = delta(Z)
//   Attention   Z = sum_i softmax(h(x))_i * eps(x_i)     Y = delta(Z)
//   RNN/LSTM/GRU  Z = h_n from a recurrent cell           Y = delta(Z)
//   Capacity    z_i = cell step, nu_i = |delta(z_i)|     Y = sum_i nu_i
//
// A capacity model uses exactly the parameters of its sequential baseline;
// only the placement of the decoder changes.
//
// Batches are laid out step-major: for B bags of n instances the feature
// matrix is [n*B, input_dim] and row s*B + b is instance s of bag b.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capnet/autodiff.hpp"
#include "capnet/dataset.hpp"
#include "capnet/error.hpp"
#include "capnet/params.hpp"

namespace capnet {

enum class Family { kDeepSet, kAttention, kRNN, kLSTM, kGRU };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::kDeepSet: return "DeepSet";
    case Family::kAttention: return "Attention";
    case Family::kRNN: return "RNN";
    case Family::kLSTM: return "LSTM";
    case Family::kGRU: return "GRU";
  }
  return "?";
}

inline Family parse_family(const std::string& name) {
  if (name == "DeepSet") return Family::kDeepSet;
  if (name == "Attention") return Family::kAttention;
  if (name == "RNN") return Family::kRNN;
  if (name == "LSTM") return Family::kLSTM;
  if (name == "GRU") return Family::kGRU;
  throw ConfigError("unknown model family '" + name +
                    "' (expected DeepSet, Attention, RNN, LSTM or GRU)");
}

inline bool is_sequential(Family f) {
  return f == Family::kRNN || f == Family::kLSTM || f == Family::kGRU;
}

// Number of gate blocks in the recurrent cell.
inline std::size_t gate_blocks(Family f) {
  switch (f) {
    case Family::kRNN: return 1;
    case Family::kGRU: return 3;
    case Family::kLSTM: return 4;
    default: return 0;
  }
}

struct ModelSpec {
  Family family = Family::kGRU;
  bool capacity = false;
  bool use_abs = true;
  std::size_t input_dim = kSymbolicDim;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 32;
  std::size_t enc_layers = 3;
  std::size_t dec_layers = 3;

  void validate() const {
    if (capacity && !is_sequential(family)) {
      throw ConfigError("capacity models require a sequential family (RNN, LSTM or GRU)");
    }
    if (enc_layers < 1 || dec_layers < 1) {
      throw ConfigError("encoder and decoder need at least one layer");
    }
    if (input_dim == 0 || embed_dim == 0 || hidden_dim == 0) {
      throw ConfigError("model dimensions must be positive");
    }
  }

  // "GRU", "C-GRU", "C-GRU (no abs)".
  std::string label() const {
    std::string s = (capacity ? "C-" : "") + family_name(family);
    if (capacity && !use_abs) s += " (no abs)";
    return s;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline nlohmann::ordered_json to_json(const ModelSpec& s) {
  return {{"family", family_name(s.family)}, {"capacity", s.capacity},
          {"use_abs", s.use_abs},            {"input_dim", s.input_dim},
          {"embed_dim", s.embed_dim},        {"hidden_dim", s.hidden_dim},
          {"enc_layers", s.enc_layers},      {"dec_layers", s.dec_layers}};
}

template <class Json>
ModelSpec model_spec_from_json(const Json& j) {
  try {
    ModelSpec s;
    s.family = parse_family(j.at("family").template get<std::string>());
    s.capacity = j.value("capacity", false);
    s.use_abs = j.value("use_abs", true);
    s.input_dim = j.value("input_dim", kSymbolicDim);
    s.embed_dim = j.value("embed_dim", std::size_t{64});
    s.hidden_dim = j.value("hidden_dim", std::size_t{32});
    s.enc_layers = j.value("enc_layers", std::size_t{3});
    s.dec_layers = j.value("dec_layers", std::size_t{3});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

// Closed-form parameter count of the architecture described by `s`.
inline std::size_t expected_param_count(const ModelSpec& s) {
  const std::size_t in = s.input_dim, e = s.embed_dim, d = s.hidden_dim;
  std::size_t n = in * e + e;                          // embedding
  n += e * d + d + (s.enc_layers - 1) * (d * d + d);  // epsilon
  n += (s.dec_layers - 1) * (d * d + d) + d + 1;       // delta
  if (s.family == Family::kAttention) n += e * d + d + d + 1;
  n += gate_blocks(s.family) * (2 * d * d + d);
  return n;
}

struct ForwardOutput {
  double prediction = 0.0;
  std::vector<double> intermediates;        // capacity models: nu_hat_i in input order
  std::vector<std::vector<double>> latents;  // per-step hidden states (sequential families)
  std::vector<double> attention;             // Attention: weights a_i
};

// Graph handles for a batch of equally sized bags.
struct GraphOutput {
  ad::Var prediction;                  // [B, 1]
  std::vector<ad::Var> intermediates;  // per step, [B, 1]
  std::vector<ad::Var> states;         // per step, [B, d]
  std::vector<ad::Var> decoded;        // per step delta(h_i), when requested
  ad::Var attention;                   // [B, n]
  bool has_attention = false;
};

// Step-major feature matrix for bags that all have `steps` instances.
inline Tensor assemble_batch(std::span<const Bag* const> bags, const Featurizer& feat) {
  const std::size_t batch = bags.size();
  const std::size_t steps = batch ? bags.front()->size() : 0;
  const std::size_t dim = feat.input_dim();
  Tensor x(Shape{steps * batch, dim});
  for (std::size_t b = 0; b < batch; ++b) {
    if (bags[b]->size() != steps) throw ShapeError("assemble_batch: bags differ in size");
    for (std::size_t s = 0; s < steps; ++s) {
      feat.write(bags[b]->instances[s], x.data().subspan((s * batch + b) * dim, dim));
    }
  }
  return x;
}

class Model {
 public:
  // Builds every layer with weights uniform in +-1/sqrt(fan_in).
  Model(ModelSpec spec, std::uint64_t seed) : spec_(spec), params_(seed) {
    spec_.validate();
    const std::size_t e = spec_.embed_dim, d = spec_.hidden_dim;
    add_layer("embed", spec_.input_dim, e);
    for (std::size_t l = 0; l < spec_.enc_layers; ++l) {
      add_layer("enc/" + std::to_string(l), l == 0 ? e : d, d);
    }
    if (spec_.family == Family::kAttention) {
      add_layer("attn/A", e, d);
      add_layer("attn/B", d, 1);
    }
    for (const char* gate : cell_gates()) add_layer(std::string("cell/") + gate, 2 * d, d);
    for (std::size_t l = 0; l < spec_.dec_layers; ++l) {
      add_layer("dec/" + std::to_string(l), d, l + 1 == spec_.dec_layers ? 1 : d);
    }
    params_.freeze();
  }

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t param_count() const { return params_.count(); }

  // Records the forward pass for `batch` bags of `steps` instances each.
  // With decode_states, sequential models also decode every hidden state
  // (used for prefix predictions).
  GraphOutput graph(ad::Tape& tape, const Tensor& features, std::size_t batch, std::size_t steps,
                    bool decode_states = false) const {
    if (steps == 0) throw ConfigError("empty bag");
    if (features.rank() != 2 || features.dim(0) != batch * steps ||
        features.dim(1) != spec_.input_dim) {
      throw ShapeError("model input " + shape_string(features.shape()) + " does not match " +
                       std::to_string(batch * steps) + " x " + std::to_string(spec_.input_dim));
    }
    ad::Var x = tape.constant(features);
    ad::Var embedded = ad::relu(layer(tape, "embed", x));
    ad::Var encoded = encode(tape, embedded);
    switch (spec_.family) {
      case Family::kDeepSet: return deepset_graph(tape, encoded, batch, steps);
      case Family::kAttention: return attention_graph(tape, embedded, encoded, batch, steps);
      default:
        return spec_.capacity ? capacity_graph(tape, encoded, batch, steps)
                              : sequential_graph(tape, encoded, batch, steps, decode_states);
    }
  }

  // Single-bag forward pass. An empty bag is rejected except by capacity
  // models, which return 0 (mu of the empty set).
  ForwardOutput forward(const Bag& bag, const Featurizer& feat) const {
    if (bag.size() == 0) {
      if (spec_.capacity) return {};
      throw ConfigError("empty bag");
    }
    const Bag* ptr = &bag;
    return predict(std::span<const Bag* const>(&ptr, 1), feat).front();
  }

  // Forward pass over bags of equal size, returned in input order.
  std::vector<ForwardOutput> predict(std::span<const Bag* const> bags, const Featurizer& feat) const {
    std::vector<ForwardOutput> out(bags.size());
    if (bags.empty()) return out;
    const std::size_t batch = bags.size(), steps = bags.front()->size();
    ad::Tape tape;
    const GraphOutput g = graph(tape, assemble_batch(bags, feat), batch, steps);
    for (std::size_t b = 0; b < batch; ++b) {
      ForwardOutput& o = out[b];
      o.prediction = g.prediction.value()[b];
      for (const auto& v : g.intermediates) o.intermediates.push_back(v.value()[b]);
      const std::size_t d = spec_.hidden_dim;
      for (const auto& h : g.states) {
        const auto row = h.value().data().subspan(b * d, d);
        o.latents.emplace_back(row.begin(), row.end());
      }
      if (g.has_attention) {
        for (std::size_t s = 0; s < steps; ++s) o.attention.push_back(g.attention.value().at(b, s));
      }
    }
    return out;
  }

  // Model output on every prefix {x_1..x_k}, k = 1..n. Sequential models
  // decode their k-th hidden state; parallel models are re-run on the prefix.
  std::vector<std::vector<double>> prefix_predictions(std::span<const Bag* const> bags,
                                                      const Featurizer& feat) const {
    std::vector<std::vector<double>> out(bags.size());
    if (bags.empty()) return out;
    const std::size_t batch = bags.size(), steps = bags.front()->size();
    if (steps == 0) throw ConfigError("empty bag");
    if (is_sequential(spec_.family)) {
      ad::Tape tape;
      const GraphOutput g = graph(tape, assemble_batch(bags, feat), batch, steps, true);
      for (std::size_t b = 0; b < batch; ++b) {
        if (spec_.capacity) {
          double acc = 0.0;
          for (const auto& v : g.intermediates) out[b].push_back(acc += v.value()[b]);
        } else {
          for (const auto& v : g.decoded) out[b].push_back(v.value()[b]);
        }
      }
      return out;
    }
    for (std::size_t k = 1; k <= steps; ++k) {
      std::vector<Bag> prefixes(batch);
      std::vector<const Bag*> ptrs(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        prefixes[b].instances.assign(bags[b]->instances.begin(), bags[b]->instances.begin() + k);
        ptrs[b] = &prefixes[b];
      }
      const auto preds = predict(ptrs, feat);
      for (std::size_t b = 0; b < batch; ++b) out[b].push_back(preds[b].prediction);
    }
    return out;
  }

 private:
  std::vector<const char*> cell_gates() const {
    switch (spec_.family) {
      case Family::kRNN: return {"h"};
      case Family::kGRU: return {"r", "z", "h"};
      case Family::kLSTM: return {"i", "f", "o", "g"};
      default: return {};
    }
  }

  void add_layer(const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    params_.add_uniform(name + "/W", Shape{in, out}, bound);
    params_.add_uniform(name + "/b", Shape{out}, bound);
  }

  ad::Var layer(ad::Tape& tape, const std::string& name, ad::Var x) const {
    return ad::linear(x, tape.parameter(params_.at(name + "/W")),
                      tape.parameter(params_.at(name + "/b")));
  }

  ad::Var encode(ad::Tape& tape, ad::Var x) const {
    for (std::size_t l = 0; l < spec_.enc_layers; ++l) {
      if (l > 0) x = ad::relu(x);
      x = layer(tape, "enc/" + std::to_string(l), x);
    }
    return x;
  }

  ad::Var decode(ad::Tape& tape, ad::Var z) const {
    for (std::size_t l = 0; l < spec_.dec_layers; ++l) {
      if (l > 0) z = ad::relu(z);
      z = layer(tape, "dec/" + std::to_string(l), z);
    }
    return z;
  }

  GraphOutput deepset_graph(ad::Tape&, ad::Var encoded, std::size_t batch,
                            std::size_t steps) const {
    ad::Var z = ad::slice_rows(encoded, 0, batch);
    for (std::size_t s = 1; s < steps; ++s) z = ad::add(z, ad::slice_rows(encoded, s * batch, batch));
    GraphOutput g;
    g.prediction = decode(*z.tape, z);
    return g;
  }

  GraphOutput attention_graph(ad::Tape& tape, ad::Var embedded, ad::Var encoded, std::size_t batch,
                              std::size_t steps) const {
    // h(x) = B tanh(A x + a) + b on the embedded instance.
    ad::Var scores = layer(tape, "attn/B", ad::tanh(layer(tape, "attn/A", embedded)));
    ad::Var by_bag = ad::slice_rows(scores, 0, batch);
    for (std::size_t s = 1; s < steps; ++s) {
      by_bag = ad::concat(by_bag, ad::slice_rows(scores, s * batch, batch));
    }
    ad::Var weights = ad::softmax_weights(by_bag);  // [B, n]
    ad::Var z;
    for (std::size_t s = 0; s < steps; ++s) {
      ad::Var term = ad::scale_rows(ad::slice_rows(encoded, s * batch, batch),
                                    ad::slice_cols(weights, s, 1));
      z = s == 0 ? term : ad::add(z, term);
    }
    GraphOutput g;
    g.prediction = decode(tape, z);
    g.attention = weights;
    g.has_attention = true;
    return g;
  }

  // One recurrent step on input u = eps(x_i). Updates h (and c for LSTM).
  void cell_step(ad::Tape& tape, ad::Var u, ad::Var& h, ad::Var& c) const {
    ad::Var hx = ad::concat(h, u);
    switch (spec_.family) {
      case Family::kRNN:
        h = ad::tanh(layer(tape, "cell/h", hx));
        break;
      case Family::kGRU: {
        ad::Var r = ad::sigmoid(layer(tape, "cell/r", hx));
        ad::Var z = ad::sigmoid(layer(tape, "cell/z", hx));
        ad::Var cand = ad::tanh(layer(tape, "cell/h", ad::concat(ad::mul(r, h), u)));
        h = ad::add(ad::mul(z, h), ad::mul(ad::affine(z, -1.0, 1.0), cand));
        break;
      }
      case Family::kLSTM: {
        ad::Var i = ad::sigmoid(layer(tape, "cell/i", hx));
        ad::Var f = ad::sigmoid(layer(tape, "cell/f", hx));
        ad::Var o = ad::sigmoid(layer(tape, "cell/o", hx));
        ad::Var g = ad::tanh(layer(tape, "cell/g", hx));
        c = ad::add(ad::mul(f, c), ad::mul(i, g));
        h = ad::mul(o, ad::tanh(c));
        break;
      }
      default:
        throw ConfigError("cell_step on a non-sequential family");
    }
  }

  std::vector<ad::Var> run_cell(ad::Tape& tape, ad::Var encoded, std::size_t batch,
                                std::size_t steps) const {
    const Tensor zeros(Shape{batch, spec_.hidden_dim});
    ad::Var h = tape.constant(zeros);
    ad::Var c = tape.constant(zeros);
    std::vector<ad::Var> states;
    states.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      cell_step(tape, ad::slice_rows(encoded, s * batch, batch), h, c);
      states.push_back(h);
    }
    return states;
  }

  GraphOutput sequential_graph(ad::Tape& tape, ad::Var encoded, std::size_t batch,
                               std::size_t steps, bool decode_states) const {
    GraphOutput g;
    g.states = run_cell(tape, encoded, batch, steps);
    if (decode_states) {
      for (std::size_t s = 0; s + 1 < steps; ++s) g.decoded.push_back(decode(tape, g.states[s]));
    }
    g.prediction = decode(tape, g.states.back());
    if (decode_states) g.decoded.push_back(g.prediction);
    return g;
  }

  GraphOutput capacity_graph(ad::Tape& tape, ad::Var encoded, std::size_t batch,
                             std::size_t steps) const {
    GraphOutput g;
    g.states = run_cell(tape, encoded, batch, steps);
    for (std::size_t s = 0; s < steps; ++s) {
      ad::Var y = decode(tape, g.states[s]);
      ad::Var nu = spec_.use_abs ? ad::abs(y) : y;
      g.intermediates.push_back(nu);
      g.prediction = s == 0 ? nu : ad::add(g.prediction, nu);
    }
    return g;
  }

  ModelSpec spec_;
  ParamStore params_;
};

// Groups bags by size (preserving order within a group) and runs
// Model::predict in chunks. Results come back in input order.
inline std::vector<ForwardOutput> predict_all(const Model& model, std::span<const Bag> bags,
                                              const Featurizer& feat, std::size_t chunk = 1000) {
  std::vector<ForwardOutput> out(bags.size());
  std::map<std::size_t, std::vector<std::size_t>> by_size;
  for (std::size_t i = 0; i < bags.size(); ++i) by_size[bags[i].size()].push_back(i);
  for (const auto& [size, idx] : by_size) {
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
      const std::size_t end = std::min(idx.size(), start + chunk);
      std::vector<const Bag*> ptrs;
      for (std::size_t k = start; k < end; ++k) ptrs.push_back(&bags[idx[k]]);
      std::vector<ForwardOutput> preds;
      if (size == 0) {
        for (const Bag* b : ptrs) preds.push_back(model.forward(*b, feat));
      } else {
        preds = model.predict(ptrs, feat);
      }
      for (std::size_t k = start; k < end; ++k) out[idx[k]] = std::move(preds[k - start]);
    }
  }
  return out;
}

}  // namespace capnet
