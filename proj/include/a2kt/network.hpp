#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "a2kt/diffcore.hpp"

namespace a2kt {

struct NetworkShape {
  std::size_t input_dim = 0;
  std::size_t generator_hidden = 1024;
  std::size_t embedding_dim = 512;
  std::size_t classifier_hidden = 512;
  std::size_t class_count = 0;

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

// y = x * weights + bias, weights fan_in x fan_out, bias 1 x fan_out.
struct DenseLayer {
  Matrix weights;
  Matrix bias;
};

// Generator G: dense -> ReLU -> dropout -> dense.
struct GeneratorParams {
  DenseLayer layer1;
  DenseLayer layer2;
  double dropout_p = 0.1;
};

// MLP classifier C_N: dense -> ReLU -> dense -> softmax.
struct ClassifierParams {
  DenseLayer layer1;
  DenseLayer layer2;
};

struct Model {
  NetworkShape shape;
  GeneratorParams generator;
  ClassifierParams classifier;

  // Trainable matrices in a fixed order: G layer1 w/b, G layer2 w/b, C_N layer1 w/b, C_N layer2 w/b.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
};

// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Model init_model(const NetworkShape& shape, double dropout_p, Rng& rng);

struct DenseVars {
  Var weights;
  Var bias;
};

struct ModelVars {
  DenseVars g1, g2, c1, c2;
  std::vector<Var> all() const { return {g1.weights, g1.bias, g2.weights, g2.bias,
                                         c1.weights, c1.bias, c2.weights, c2.bias}; }
};

// Record the model parameters as trainable leaves on the tape.
ModelVars bind_parameters(Tape& tape, const Model& model);

Var generator_forward(const ModelVars& params, const NetworkShape& shape, Var x, double dropout_p,
                      Rng& rng, bool training);
Var cn_forward(const ModelVars& params, const NetworkShape& shape, Var z);

// Gradient-free evaluation-mode passes.
Matrix generator_forward(const Model& model, const Matrix& x);
Matrix cn_forward(const Model& model, const Matrix& z);

struct PrototypeSet {
  Matrix centers;           // class_count x embedding_dim
  std::vector<bool> valid;  // false when a class had no samples

  std::size_t valid_count() const;
};

PrototypeSet compute_prototypes(const Matrix& z_source, std::span<const int> labels,
                                std::size_t class_count);

// Cosine similarity to each valid prototype divided by temperature, then a
// softmax over valid classes only. Invalid classes get probability 0.
Matrix cp_predict(const PrototypeSet& prototypes, const Matrix& z, double temperature = 1.0);

// Index of the largest entry per row, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& probs);

// Trained weights plus the prototypes refreshed after the last epoch, so C_P
// can be evaluated without the source set.
struct Checkpoint {
  Model model;
  std::optional<PrototypeSet> prototypes;
  double cp_temperature = 1.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace a2kt
