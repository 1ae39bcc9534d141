#pragma once

// Fully-connected sigmoid network with a softmax output and mean
// cross-entropy loss. Batches are laid out rows = examples, so layer l maps
// L (b x d_l) to F(L * W^T) (b x d_{l+1}) with W of shape d_{l+1} x d_l.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hetsgd/errors.hpp"
#include "hetsgd/linalg.hpp"

namespace hetsgd {

using Label = std::uint32_t;

inline constexpr double kProbabilityFloor = 1e-12;

struct Architecture {
  std::vector<std::size_t> layerSizes;

  std::size_t inputDim() const { return layerSizes.front(); }
  std::size_t classCount() const { return layerSizes.back(); }
  std::size_t layerCount() const { return layerSizes.size() - 1; }

  void validate() const {
    if (layerSizes.size() < 2) throw InputError("architecture needs at least an input and an output layer");
    if (std::ranges::any_of(layerSizes, [](std::size_t s) { return s == 0; }))
      throw InputError("architecture layer sizes must be >= 1");
  }

  /// Parses "54-512-512-2".
  static Architecture parse(std::string_view text) {
    Architecture arch;
    std::string tok;
    std::istringstream in{std::string(text)};
    while (std::getline(in, tok, '-')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(tok, &used);
        if (used != tok.size() || v < 1) throw InputError("bad layer size '" + tok + "'");
        arch.layerSizes.push_back(static_cast<std::size_t>(v));
      } catch (const std::logic_error&) {
        throw InputError("bad layer size '" + tok + "' in architecture '" + std::string(text) + "'");
      }
    }
    arch.validate();
    return arch;
  }

  std::string toString() const {
    std::string s;
    for (std::size_t i = 0; i < layerSizes.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(layerSizes[i]);
    }
    return s;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct Model {
  Architecture arch;
  std::vector<Matrix> weights;  // weights[l] is layerSizes[l+1] x layerSizes[l]

  std::size_t parameterCount() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    return n;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

enum class InitScheme {
  FanInStd,        // std = fan-in; saturates sigmoids
  ScaledGaussian,  // std = 1/sqrt(fan-in)
  SigmoidGain,     // hidden layers std = 4/sqrt(fan-in), output layer 1/sqrt(fan-in)
};

inline Model initModel(const Architecture& arch, std::uint64_t seed,
                       InitScheme scheme = InitScheme::ScaledGaussian) {
  arch.validate();
  Model m{arch, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < arch.layerCount(); ++l) {
    const std::size_t fanIn = arch.layerSizes[l];
    const bool hidden = l + 1 < arch.layerCount();
    double stddev = 1.0 / std::sqrt(static_cast<double>(fanIn));
    if (scheme == InitScheme::FanInStd) stddev = static_cast<double>(fanIn);
    if (scheme == InitScheme::SigmoidGain && hidden) stddev *= 4.0;
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix w(arch.layerSizes[l + 1], fanIn);
    for (double& x : w.values()) x = dist(rng);
    m.weights.push_back(std::move(w));
  }
  return m;
}

inline Model zeroModel(const Architecture& arch) {
  arch.validate();
  Model m{arch, {}};
  for (std::size_t l = 0; l < arch.layerCount(); ++l)
    m.weights.emplace_back(arch.layerSizes[l + 1], arch.layerSizes[l]);
  return m;
}

/// Forward-pass state. The input is borrowed, not copied, so the batch
/// storage must outlive the tape.
struct ActivationTape {
  MatrixView input;
  std::vector<Matrix> outputs;  // L^2 .. L^{P+1}; the last one is softmax

  std::size_t batchSize() const { return input.rows; }
  MatrixView layer(std::size_t l) const { return l == 0 ? input : outputs[l - 1].view(); }
  const Matrix& probabilities() const { return outputs.back(); }
};

struct Gradient {
  std::vector<Matrix> perLayer;
};

template <class Access = PrivateAccess>
ActivationTape forward(const Model& model, MatrixView batch) {
  if (batch.cols != model.arch.inputDim()) throw PreconditionError("forward: batch width != input dimension");
  ActivationTape tape{batch, {}};
  tape.outputs.reserve(model.weights.size());
  MatrixView current = batch;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    Matrix z = gemm<Access>(current, model.weights[l], false, true);
    if (l + 1 < model.weights.size())
      sigmoidInPlace(z);
    else
      softmaxRowsInPlace(z);
    tape.outputs.push_back(std::move(z));
    current = tape.outputs.back().view();
  }
  return tape;
}

inline void checkLabels(const ActivationTape& tape, std::span<const Label> labels) {
  if (labels.size() != tape.batchSize()) throw PreconditionError("label count != batch rows");
  const std::size_t k = tape.probabilities().cols();
  for (Label y : labels)
    if (y >= k) throw InputError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
}

/// Adds each row's -log p[label] to `acc` in row order.
inline void accumulateCrossEntropy(const ActivationTape& tape, std::span<const Label> labels, double& acc) {
  checkLabels(tape, labels);
  const Matrix& p = tape.probabilities();
  for (std::size_t r = 0; r < p.rows(); ++r) acc += -std::log(std::max(p(r, labels[r]), kProbabilityFloor));
}

inline double crossEntropyLoss(const ActivationTape& tape, std::span<const Label> labels) {
  double sum = 0.0;
  accumulateCrossEntropy(tape, labels, sum);
  return sum / static_cast<double>(tape.batchSize());
}

/// Gradient of the mean cross-entropy. The softmax and loss are fused: the
/// output error is (prob - onehot) / batchSize.
template <class Access = PrivateAccess>
Gradient backward(const Model& model, const ActivationTape& tape, std::span<const Label> labels) {
  if (tape.outputs.size() != model.weights.size()) throw PreconditionError("backward: tape depth != model depth");
  checkLabels(tape, labels);
  const std::size_t layers = model.weights.size();
  const double invB = 1.0 / static_cast<double>(tape.batchSize());

  Matrix delta = tape.probabilities();
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    delta(r, labels[r]) -= 1.0;
    for (std::size_t c = 0; c < delta.cols(); ++c) delta(r, c) *= invB;
  }

  Gradient g;
  g.perLayer.resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    g.perLayer[l] = gemm(delta, tape.layer(l), true, false);
    if (l == 0) break;
    Matrix next = gemm<Access>(delta, model.weights[l], false, false);
    const MatrixView act = tape.layer(l);
    double* d = next.raw();
    for (std::size_t i = 0; i < next.size(); ++i) d[i] *= act.data[i] * (1.0 - act.data[i]);
    delta = std::move(next);
  }
  return g;
}

template <class Access = PrivateAccess>
Gradient computeGradient(const Model& model, MatrixView batch, std::span<const Label> labels) {
  const ActivationTape tape = forward<Access>(model, batch);
  return backward<Access>(model, tape, labels);
}

/// W <- W - eta * g, with word-atomic stores (safe on the shared model).
inline void applyUpdate(Model& model, const Gradient& grad, double eta) {
  if (grad.perLayer.size() != model.weights.size()) throw PreconditionError("applyUpdate: layer count mismatch");
  for (std::size_t l = 0; l < model.weights.size(); ++l) axpyInPlace(model.weights[l], grad.perLayer[l], -eta);
}

/// Independent copy; safe while other threads update `model`.
inline Model deepCopy(const Model& model) {
  Model out{model.arch, {}};
  out.weights.reserve(model.weights.size());
  for (const auto& w : model.weights) out.weights.push_back(snapshot(w));
  return out;
}

}  // namespace hetsgd
