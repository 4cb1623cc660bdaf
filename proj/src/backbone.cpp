// SPDX-License-Identifier: Apache-2.0
#include "sattn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "sattn/error.hpp"
#include "sattn/json_io.hpp"

namespace sattn {
namespace {

constexpr double kLayerNormEps = 1e-5;

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, RandomStream& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain, const Eigen::VectorXd& bias) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    out.row(r) = ((x.row(r).array() - mean) * inv * gain.transpose().array() + bias.transpose().array()).matrix();
  }
  return out;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

Eigen::MatrixXd tokenize(const EncoderConfig& config, const InputCase& input) {
  if (input.features.size() != config.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "input has " + std::to_string(input.features.size()) +
                                                  " features, encoder expects " + std::to_string(config.input_dim));
  }
  if (!input.features.allFinite()) throw Error(ErrorCode::NonFinite, "input features are not finite");
  const int width = config.patch_width();
  Eigen::MatrixXd patches = Eigen::MatrixXd::Zero(config.n_tokens, width);
  for (int i = 0; i < config.input_dim; ++i) patches(i / width, i % width) = input.features[i];
  return patches;
}

struct StochasticSpec {
  Concentration nu;
  std::uint64_t pass_index;
  std::uint64_t master_seed;
};

// Final-normalized token matrix; stochastic rows only where `spec` is set and
// the layer is enabled.
Eigen::MatrixXd encode(const ModelBundle& model, const InputCase& input, const StochasticSpec* spec) {
  const EncoderConfig& cfg = model.config;
  const EncoderWeights& enc = model.encoder;
  Eigen::MatrixXd h = tokenize(cfg, input) * enc.embed + enc.position;

  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ScoreVector scores{Eigen::VectorXd(cfg.n_tokens), {}};
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = enc.layers[static_cast<std::size_t>(l)];
    const bool stochastic = spec != nullptr && model.is_stochastic(l);

    const Eigen::MatrixXd a = layer_norm(h, lw.ln1_gain, lw.ln1_bias);
    const Eigen::MatrixXd q = a * lw.wq;
    const Eigen::MatrixXd k = a * lw.wk;
    const Eigen::MatrixXd v = a * lw.wv;
    Eigen::MatrixXd heads(cfg.n_tokens, cfg.d_model);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto qh = q.middleCols(head * dh, dh);
      const auto kh = k.middleCols(head * dh, dh);
      const ValueMatrix vh = v.middleCols(head * dh, dh);
      for (int t = 0; t < cfg.n_tokens; ++t) {
        scores.values = (kh * qh.row(t).transpose()) * scale;
        const SimplexVector pi = softmax_weights(scores);
        if (stochastic) {
          RandomStream rng = make_stream(spec->master_seed, {stream_tag::kAttention, spec->pass_index,
                                                             static_cast<std::uint64_t>(l),
                                                             static_cast<std::uint64_t>(head),
                                                             static_cast<std::uint64_t>(t)});
          heads.block(t, head * dh, 1, dh) = stochastic_output(pi, vh, spec->nu, rng).transpose();
        } else {
          heads.block(t, head * dh, 1, dh) = deterministic_output(pi, vh).transpose();
        }
      }
    }
    h += heads * lw.wo;

    const Eigen::MatrixXd f = layer_norm(h, lw.ln2_gain, lw.ln2_bias);
    Eigen::MatrixXd hidden = (f * lw.w1).rowwise() + lw.b1.transpose();
    hidden = hidden.unaryExpr(&gelu);
    h += (hidden * lw.w2).rowwise() + lw.b2.transpose();
  }
  return layer_norm(h, enc.final_gain, enc.final_bias);
}

}  // namespace

void EncoderConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || n_tokens < 1 || input_dim < 1) {
    throw Error(ErrorCode::InvalidConfig, "encoder dimensions must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::InvalidConfig, "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                              std::to_string(n_heads));
  }
}

bool ModelBundle::is_stochastic(int layer) const {
  return std::binary_search(stochastic_layers.begin(), stochastic_layers.end(), layer);
}

ModelBundle init_encoder(const EncoderConfig& config) {
  config.validate();
  RandomStream rng = make_stream(config.seed, {stream_tag::kEncoderInit});
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto ff = static_cast<Eigen::Index>(config.d_ff);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  ModelBundle model;
  model.config = config;
  EncoderWeights& enc = model.encoder;
  enc.embed = gaussian_matrix(config.patch_width(), d, 1.0, rng);
  enc.position = gaussian_matrix(config.n_tokens, d, 1.0, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.ln1_gain = Eigen::VectorXd::Ones(d);
    lw.ln1_bias = Eigen::VectorXd::Zero(d);
    lw.wq = gaussian_matrix(d, d, inv_sqrt_d, rng);
    lw.wk = gaussian_matrix(d, d, inv_sqrt_d, rng);
    lw.wv = gaussian_matrix(d, d, inv_sqrt_d, rng);
    lw.wo = gaussian_matrix(d, d, inv_sqrt_d, rng);
    lw.ln2_gain = Eigen::VectorXd::Ones(d);
    lw.ln2_bias = Eigen::VectorXd::Zero(d);
    lw.w1 = gaussian_matrix(d, ff, inv_sqrt_d, rng);
    lw.b1 = Eigen::VectorXd::Zero(ff);
    lw.w2 = gaussian_matrix(ff, d, 1.0 / std::sqrt(static_cast<double>(ff)), rng);
    lw.b2 = Eigen::VectorXd::Zero(d);
    enc.layers.push_back(std::move(lw));
  }
  enc.final_gain = Eigen::VectorXd::Ones(d);
  enc.final_bias = Eigen::VectorXd::Zero(d);
  model.readout.weights = Eigen::VectorXd::Zero(d);
  model.readout.bias = 0.0;
  return model;
}

std::vector<int> all_layers(const EncoderConfig& config) {
  std::vector<int> layers(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) layers[static_cast<std::size_t>(l)] = l;
  return layers;
}

ModelBundle with_stochastic_layers(ModelBundle model, std::vector<int> layers) {
  for (int l : layers) {
    if (l < 0 || l >= model.config.n_layers) {
      throw Error(ErrorCode::InvalidConfig, "stochastic layer index " + std::to_string(l) + " out of range");
    }
  }
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  model.stochastic_layers = std::move(layers);
  return model;
}

Eigen::MatrixXd token_features(const ModelBundle& model, const InputCase& input) {
  return encode(model, input, nullptr);
}

Eigen::VectorXd pooled_features(const ModelBundle& model, const InputCase& input) {
  return token_features(model, input).colwise().mean().transpose();
}

Eigen::VectorXd pooled_features_stochastic(const ModelBundle& model, const InputCase& input, Concentration nu,
                                           std::uint64_t pass_index, std::uint64_t master_seed) {
  if (model.stochastic_layers.empty()) {
    throw Error(ErrorCode::NoStochasticLayers, "model has no stochastic attention layers");
  }
  const StochasticSpec spec{nu, pass_index, master_seed};
  return encode(model, input, &spec).colwise().mean().transpose();
}

double apply_readout(const Readout& readout, const Eigen::VectorXd& features) {
  if (readout.weights.size() != features.size()) {
    throw Error(ErrorCode::DimensionMismatch, "readout dimension differs from feature dimension");
  }
  return readout.weights.dot(features) + readout.bias;
}

double forward_deterministic(const ModelBundle& model, const InputCase& input) {
  return apply_readout(model.readout, pooled_features(model, input));
}

double forward_stochastic(const ModelBundle& model, const InputCase& input, Concentration nu,
                          std::uint64_t pass_index, std::uint64_t master_seed) {
  return apply_readout(model.readout, pooled_features_stochastic(model, input, nu, pass_index, master_seed));
}

Readout fit_ridge(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets, double ridge) {
  if (features.rows() != targets.size()) throw Error(ErrorCode::DimensionMismatch, "feature rows differ from targets");
  if (features.rows() < 2) throw Error(ErrorCode::TooFewSamples, "ridge fit needs at least 2 cases");
  if (!(ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "ridge must be nonnegative");
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();

  Eigen::MatrixXd design(n, d + 1);
  design.leftCols(d) = features;
  design.col(d).setOnes();
  Eigen::MatrixXd normal = design.transpose() * design;
  normal.diagonal().head(d).array() += ridge;
  const Eigen::VectorXd rhs = design.transpose() * targets;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success || (ridge == 0.0 && ldlt.rcond() < 1e-12)) {
    throw Error(ErrorCode::SingularSystem, "normal equations are singular; use ridge > 0");
  }
  const Eigen::VectorXd solution = ldlt.solve(rhs);
  Readout readout;
  readout.weights = solution.head(d);
  readout.bias = solution[d];
  return readout;
}

Eigen::MatrixXd pooled_feature_matrix(const ModelBundle& model, std::span<const InputCase> cases) {
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(cases.size()), model.config.d_model);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    phi.row(static_cast<Eigen::Index>(i)) = pooled_features(model, cases[i]).transpose();
  }
  return phi;
}

ModelBundle fit_readout(ModelBundle model, std::span<const InputCase> train, double ridge) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].target) throw Error(ErrorCode::MissingTarget, "training case " + std::to_string(i) + " has no target");
    y[static_cast<Eigen::Index>(i)] = *train[i].target;
  }
  model.readout = fit_ridge(pooled_feature_matrix(model, train), y, ridge);
  return model;
}

nlohmann::json model_to_json(const ModelBundle& model) {
  const EncoderConfig& c = model.config;
  nlohmann::json doc;
  doc["format"] = "sattn-model-v1";
  doc["config"] = {{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"d_model", c.d_model}, {"d_ff", c.d_ff},
                   {"n_tokens", c.n_tokens}, {"input_dim", c.input_dim}, {"seed", c.seed}};
  nlohmann::json enc;
  enc["embed"] = to_json_rowmajor(model.encoder.embed);
  enc["position"] = to_json_rowmajor(model.encoder.position);
  enc["final_gain"] = to_json_array(model.encoder.final_gain);
  enc["final_bias"] = to_json_array(model.encoder.final_bias);
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerWeights& lw : model.encoder.layers) {
    layers.push_back({{"ln1_gain", to_json_array(lw.ln1_gain)},
                      {"ln1_bias", to_json_array(lw.ln1_bias)},
                      {"wq", to_json_rowmajor(lw.wq)},
                      {"wk", to_json_rowmajor(lw.wk)},
                      {"wv", to_json_rowmajor(lw.wv)},
                      {"wo", to_json_rowmajor(lw.wo)},
                      {"ln2_gain", to_json_array(lw.ln2_gain)},
                      {"ln2_bias", to_json_array(lw.ln2_bias)},
                      {"w1", to_json_rowmajor(lw.w1)},
                      {"b1", to_json_array(lw.b1)},
                      {"w2", to_json_rowmajor(lw.w2)},
                      {"b2", to_json_array(lw.b2)}});
  }
  enc["layers"] = std::move(layers);
  doc["encoder"] = std::move(enc);
  doc["readout"] = {{"weights", to_json_array(model.readout.weights)}, {"bias", model.readout.bias}};
  doc["stochastic_layers"] = model.stochastic_layers;
  return doc;
}

ModelBundle model_from_json(const nlohmann::json& doc) {
  try {
    ModelBundle model;
    const auto& c = doc.at("config");
    EncoderConfig& cfg = model.config;
    cfg.n_layers = c.at("n_layers").get<int>();
    cfg.n_heads = c.at("n_heads").get<int>();
    cfg.d_model = c.at("d_model").get<int>();
    cfg.d_ff = c.at("d_ff").get<int>();
    cfg.n_tokens = c.at("n_tokens").get<int>();
    cfg.input_dim = c.at("input_dim").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.validate();

    const Eigen::Index d = cfg.d_model, ff = cfg.d_ff;
    const auto& enc = doc.at("encoder");
    model.encoder.embed = matrix_from_json(enc.at("embed"), cfg.patch_width(), d);
    model.encoder.position = matrix_from_json(enc.at("position"), cfg.n_tokens, d);
    model.encoder.final_gain = vector_from_json(enc.at("final_gain"), d);
    model.encoder.final_bias = vector_from_json(enc.at("final_bias"), d);
    const auto& layers = enc.at("layers");
    if (static_cast<int>(layers.size()) != cfg.n_layers) {
      throw Error(ErrorCode::DimensionMismatch, "layer count differs from config");
    }
    for (const auto& lj : layers) {
      LayerWeights lw;
      lw.ln1_gain = vector_from_json(lj.at("ln1_gain"), d);
      lw.ln1_bias = vector_from_json(lj.at("ln1_bias"), d);
      lw.wq = matrix_from_json(lj.at("wq"), d, d);
      lw.wk = matrix_from_json(lj.at("wk"), d, d);
      lw.wv = matrix_from_json(lj.at("wv"), d, d);
      lw.wo = matrix_from_json(lj.at("wo"), d, d);
      lw.ln2_gain = vector_from_json(lj.at("ln2_gain"), d);
      lw.ln2_bias = vector_from_json(lj.at("ln2_bias"), d);
      lw.w1 = matrix_from_json(lj.at("w1"), d, ff);
      lw.b1 = vector_from_json(lj.at("b1"), ff);
      lw.w2 = matrix_from_json(lj.at("w2"), ff, d);
      lw.b2 = vector_from_json(lj.at("b2"), d);
      model.encoder.layers.push_back(std::move(lw));
    }
    model.readout.weights = vector_from_json(doc.at("readout").at("weights"), d);
    model.readout.bias = doc.at("readout").at("bias").get<double>();
    return with_stochastic_layers(std::move(model), doc.at("stochastic_layers").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed model document: ") + e.what());
  }
}

void save_model(const ModelBundle& model, const std::filesystem::path& path) {
  write_text_file(path, dump_json(model_to_json(model)));
}

ModelBundle load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

}  // namespace sattn
