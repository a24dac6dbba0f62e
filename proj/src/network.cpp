#include "a2kt/network.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>

#include "a2kt/datamodel.hpp"
#include "a2kt/error.hpp"

namespace a2kt {
namespace {

constexpr const char* kCheckpointMagic = "a2kt-checkpoint";
constexpr int kCheckpointVersion = 1;

DenseLayer init_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  DenseLayer layer{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
  for (double& w : layer.weights.values()) w = dist(rng);
  for (double& b : layer.bias.values()) b = dist(rng);
  return layer;
}

Matrix dense_value(const DenseLayer& layer, const Matrix& x) {
  Matrix out = matmul(x, layer.weights);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias(0, j);
  }
  return out;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

Var dense(const DenseVars& layer, Var x) { return add_row_vector(matmul(x, layer.weights), layer.bias); }

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) out << ' ';
      out << format_double(r[j]);
    }
    out << '\n';
  }
}

Matrix read_matrix(std::istream& in, const char* name, std::size_t rows, std::size_t cols) {
  std::string tag;
  std::size_t r = 0, c = 0;
  if (!(in >> tag >> r >> c)) throw ParseError(std::string("checkpoint: missing header for ") + name);
  if (tag != name) throw ParseError("checkpoint: expected block '" + std::string(name) + "', found '" + tag + "'");
  if (r != rows || c != cols) {
    throw ShapeError("checkpoint: " + std::string(name) + " is " + std::to_string(r) + "x" +
                     std::to_string(c) + " but the declared dimensions require " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  std::string tok;
  for (double& v : m.values()) {
    if (!(in >> tok)) throw ParseError(std::string("checkpoint: truncated block ") + name);
    try {
      std::size_t used = 0;
      v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("checkpoint: invalid value '" + tok + "' in " + name);
    }
  }
  return m;
}

}  // namespace

std::vector<Matrix*> Model::parameters() {
  return {&generator.layer1.weights,  &generator.layer1.bias,  &generator.layer2.weights,
          &generator.layer2.bias,     &classifier.layer1.weights, &classifier.layer1.bias,
          &classifier.layer2.weights, &classifier.layer2.bias};
}

std::vector<const Matrix*> Model::parameters() const {
  return {&generator.layer1.weights,  &generator.layer1.bias,  &generator.layer2.weights,
          &generator.layer2.bias,     &classifier.layer1.weights, &classifier.layer1.bias,
          &classifier.layer2.weights, &classifier.layer2.bias};
}

Model init_model(const NetworkShape& shape, double dropout_p, Rng& rng) {
  if (shape.input_dim == 0 || shape.generator_hidden == 0 || shape.embedding_dim == 0 ||
      shape.classifier_hidden == 0 || shape.class_count < 2) {
    throw ConfigError("network dimensions must be positive and class count at least 2");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  Model m;
  m.shape = shape;
  m.generator.dropout_p = dropout_p;
  m.generator.layer1 = init_dense(shape.input_dim, shape.generator_hidden, rng);
  m.generator.layer2 = init_dense(shape.generator_hidden, shape.embedding_dim, rng);
  m.classifier.layer1 = init_dense(shape.embedding_dim, shape.classifier_hidden, rng);
  m.classifier.layer2 = init_dense(shape.classifier_hidden, shape.class_count, rng);
  return m;
}

ModelVars bind_parameters(Tape& tape, const Model& model) {
  auto bind = [&tape](const DenseLayer& l) { return DenseVars{tape.parameter(l.weights), tape.parameter(l.bias)}; };
  return ModelVars{bind(model.generator.layer1), bind(model.generator.layer2),
                   bind(model.classifier.layer1), bind(model.classifier.layer2)};
}

Var generator_forward(const ModelVars& params, const NetworkShape& shape, Var x, double dropout_p,
                      Rng& rng, bool training) {
  if (x.cols() != shape.input_dim) {
    throw ShapeError("generator expects " + std::to_string(shape.input_dim) + " input features, got " +
                     std::to_string(x.cols()));
  }
  Var h = relu(dense(params.g1, x));
  h = dropout(h, dropout_p, rng, training);
  return dense(params.g2, h);
}

Var cn_forward(const ModelVars& params, const NetworkShape& shape, Var z) {
  if (z.cols() != shape.embedding_dim) {
    throw ShapeError("classifier expects " + std::to_string(shape.embedding_dim) +
                     "-dimensional embeddings, got " + std::to_string(z.cols()));
  }
  Var h = relu(dense(params.c1, z));
  return row_softmax(dense(params.c2, h));
}

Matrix generator_forward(const Model& model, const Matrix& x) {
  if (x.cols() != model.shape.input_dim) {
    throw ShapeError("generator expects " + std::to_string(model.shape.input_dim) +
                     " input features, got " + std::to_string(x.cols()));
  }
  Matrix h = dense_value(model.generator.layer1, x);
  relu_inplace(h);
  return dense_value(model.generator.layer2, h);
}

Matrix cn_forward(const Model& model, const Matrix& z) {
  if (z.cols() != model.shape.embedding_dim) {
    throw ShapeError("classifier expects " + std::to_string(model.shape.embedding_dim) +
                     "-dimensional embeddings, got " + std::to_string(z.cols()));
  }
  Matrix h = dense_value(model.classifier.layer1, z);
  relu_inplace(h);
  Matrix logits = dense_value(model.classifier.layer2, h);
  softmax_rows_inplace(logits);
  return logits;
}

std::size_t PrototypeSet::valid_count() const {
  std::size_t n = 0;
  for (bool v : valid) n += v ? 1 : 0;
  return n;
}

PrototypeSet compute_prototypes(const Matrix& z_source, std::span<const int> labels,
                                std::size_t class_count) {
  if (labels.size() != z_source.rows()) throw ShapeError("compute_prototypes: label count mismatch");
  PrototypeSet p{Matrix(class_count, z_source.cols()), std::vector<bool>(class_count, false)};
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || c >= class_count) throw ShapeError("compute_prototypes: label out of range");
    ++counts[c];
    auto dst = p.centers.row(c);
    auto src = z_source.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) continue;
    p.valid[c] = true;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (double& v : p.centers.row(c)) v *= inv;
  }
  return p;
}

Matrix cp_predict(const PrototypeSet& prototypes, const Matrix& z, double temperature) {
  const std::size_t c_count = prototypes.centers.rows();
  if (z.cols() != prototypes.centers.cols()) {
    throw ShapeError("cp_predict: embeddings " + z.shape_string() + " vs prototypes " +
                     prototypes.centers.shape_string());
  }
  if (prototypes.valid_count() == 0) throw ContractError("cp_predict: no valid prototype");
  if (!(temperature > 0.0)) throw ConfigError("cp_predict: temperature must be positive");

  std::vector<std::size_t> valid_classes;
  Matrix unit_centers(c_count, z.cols());
  for (std::size_t c = 0; c < c_count; ++c) {
    if (!prototypes.valid[c]) continue;
    const double norm = row_norm(prototypes.centers.row(c));
    if (!(norm > 0.0)) throw NumericError("cp_predict: prototype of class " + std::to_string(c) + " has zero norm");
    auto dst = unit_centers.row(c);
    auto src = prototypes.centers.row(c);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] / norm;
    valid_classes.push_back(c);
  }

  Matrix out(z.rows(), c_count);
  std::vector<double> sims(valid_classes.size());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto zi = z.row(i);
    const double norm = row_norm(zi);
    if (!(norm > 0.0)) throw NumericError("cp_predict: embedding row " + std::to_string(i) + " has zero norm");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < valid_classes.size(); ++k) {
      auto u = unit_centers.row(valid_classes[k]);
      double d = 0.0;
      for (std::size_t j = 0; j < zi.size(); ++j) d += zi[j] * u[j];
      sims[k] = d / norm / temperature;
      mx = std::max(mx, sims[k]);
    }
    double total = 0.0;
    for (double& s : sims) {
      s = std::exp(s - mx);
      total += s;
    }
    for (std::size_t k = 0; k < valid_classes.size(); ++k) out(i, valid_classes[k]) = sims[k] / total;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows(), 0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto r = probs.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.size(); ++j) {
      if (r[j] > r[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const Model& model = checkpoint.model;
  const NetworkShape& s = model.shape;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << s.input_dim << ' ' << s.generator_hidden << ' ' << s.embedding_dim << ' '
      << s.classifier_hidden << ' ' << s.class_count << '\n';
  out << format_double(model.generator.dropout_p) << ' ' << format_double(checkpoint.cp_temperature) << '\n';
  write_matrix(out, "g1.weights", model.generator.layer1.weights);
  write_matrix(out, "g1.bias", model.generator.layer1.bias);
  write_matrix(out, "g2.weights", model.generator.layer2.weights);
  write_matrix(out, "g2.bias", model.generator.layer2.bias);
  write_matrix(out, "c1.weights", model.classifier.layer1.weights);
  write_matrix(out, "c1.bias", model.classifier.layer1.bias);
  write_matrix(out, "c2.weights", model.classifier.layer2.weights);
  write_matrix(out, "c2.bias", model.classifier.layer2.bias);
  if (checkpoint.prototypes) {
    const PrototypeSet& p = *checkpoint.prototypes;
    Matrix mask(1, p.valid.size());
    for (std::size_t c = 0; c < p.valid.size(); ++c) mask(0, c) = p.valid[c] ? 1.0 : 0.0;
    write_matrix(out, "prototypes", p.centers);
    write_matrix(out, "prototype_valid", mask);
  } else {
    out << "no_prototypes\n";
  }
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  Model& m = ck.model;
  NetworkShape& s = m.shape;
  std::string dropout_tok, temp_tok;
  if (!(in >> s.input_dim >> s.generator_hidden >> s.embedding_dim >> s.classifier_hidden >> s.class_count >>
        dropout_tok >> temp_tok)) {
    throw ParseError(path.string() + ": malformed dimension header");
  }
  try {
    m.generator.dropout_p = std::stod(dropout_tok);
    ck.cp_temperature = std::stod(temp_tok);
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": malformed dimension header");
  }
  m.generator.layer1.weights = read_matrix(in, "g1.weights", s.input_dim, s.generator_hidden);
  m.generator.layer1.bias = read_matrix(in, "g1.bias", 1, s.generator_hidden);
  m.generator.layer2.weights = read_matrix(in, "g2.weights", s.generator_hidden, s.embedding_dim);
  m.generator.layer2.bias = read_matrix(in, "g2.bias", 1, s.embedding_dim);
  m.classifier.layer1.weights = read_matrix(in, "c1.weights", s.embedding_dim, s.classifier_hidden);
  m.classifier.layer1.bias = read_matrix(in, "c1.bias", 1, s.classifier_hidden);
  m.classifier.layer2.weights = read_matrix(in, "c2.weights", s.classifier_hidden, s.class_count);
  m.classifier.layer2.bias = read_matrix(in, "c2.bias", 1, s.class_count);

  std::string tag;
  if (!(in >> tag)) throw ParseError(path.string() + ": truncated checkpoint");
  if (tag == "prototypes") {
    in.seekg(-static_cast<std::streamoff>(tag.size()), std::ios::cur);
    PrototypeSet p;
    p.centers = read_matrix(in, "prototypes", s.class_count, s.embedding_dim);
    const Matrix mask = read_matrix(in, "prototype_valid", 1, s.class_count);
    for (double v : mask.values()) p.valid.push_back(v != 0.0);
    ck.prototypes = std::move(p);
  } else if (tag != "no_prototypes") {
    throw ParseError(path.string() + ": unexpected block '" + tag + "'");
  }
  return ck;
}

}  // namespace a2kt
