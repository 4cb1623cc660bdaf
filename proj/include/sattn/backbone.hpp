// SPDX-License-Identifier: Apache-2.0
//
// Small frozen pre-norm transformer encoder for scalar regression. The
// encoder is random and never trained; only the linear readout over
// mean-pooled token features is fit (ridge least squares). Attention rows in
// the layers listed in ModelBundle::stochastic_layers can be swapped for
// stochastic attention at inference time.
#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sattn/attention.hpp"

namespace sattn {

struct EncoderConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 16;
  int d_ff = 32;
  int n_tokens = 4;
  int input_dim = 1;  // feature length, split into n_tokens zero-padded patches
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  int patch_width() const { return (input_dim + n_tokens - 1) / n_tokens; }
};

struct LayerWeights {
  Eigen::VectorXd ln1_gain, ln1_bias;
  Eigen::MatrixXd wq, wk, wv, wo;  // d_model x d_model, heads are column blocks
  Eigen::VectorXd ln2_gain, ln2_bias;
  Eigen::MatrixXd w1;  // d_model x d_ff
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // d_ff x d_model
  Eigen::VectorXd b2;
};

struct EncoderWeights {
  Eigen::MatrixXd embed;     // patch_width x d_model
  Eigen::MatrixXd position;  // n_tokens x d_model
  std::vector<LayerWeights> layers;
  Eigen::VectorXd final_gain, final_bias;
};

struct Readout {
  Eigen::VectorXd weights;
  double bias = 0.0;
};

struct ModelBundle {
  EncoderConfig config;
  EncoderWeights encoder;
  Readout readout;
  std::vector<int> stochastic_layers;  // sorted, unique

  bool is_stochastic(int layer) const;
};

struct InputCase {
  Eigen::VectorXd features;
  std::optional<double> target;
};

/// Scaled-Gaussian weights drawn deterministically from config.seed; zero
/// readout; no stochastic layers.
ModelBundle init_encoder(const EncoderConfig& config);

/// Copy of the model with stochastic attention enabled on the given layers.
/// Throws InvalidConfig on an out-of-range index.
ModelBundle with_stochastic_layers(ModelBundle model, std::vector<int> layers);
std::vector<int> all_layers(const EncoderConfig& config);

/// Final-normalized token representations (n_tokens x d_model), deterministic attention.
Eigen::MatrixXd token_features(const ModelBundle& model, const InputCase& input);

/// Mean over token_features rows.
Eigen::VectorXd pooled_features(const ModelBundle& model, const InputCase& input);

/// Pooled features of one stochastic pass.
Eigen::VectorXd pooled_features_stochastic(const ModelBundle& model, const InputCase& input, Concentration nu,
                                           std::uint64_t pass_index, std::uint64_t master_seed);

double apply_readout(const Readout& readout, const Eigen::VectorXd& features);

/// f_theta(x): softmax attention everywhere.
double forward_deterministic(const ModelBundle& model, const InputCase& input);

/// One stochastic pass. Row t of head h in stochastic layer l draws from the
/// substream keyed by (master_seed, pass_index, l, h, t). Throws
/// NoStochasticLayers when no layer is enabled.
double forward_stochastic(const ModelBundle& model, const InputCase& input, Concentration nu,
                          std::uint64_t pass_index, std::uint64_t master_seed);

/// argmin_{w,b} sum (y - w.phi - b)^2 + ridge |w|^2 by the normal equations.
/// The bias is not penalized. Throws SingularSystem when the system cannot
/// be solved at ridge = 0.
Readout fit_ridge(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets, double ridge);

/// Pooled features of every case stacked as rows.
Eigen::MatrixXd pooled_feature_matrix(const ModelBundle& model, std::span<const InputCase> cases);

/// Refit the readout on frozen pooled features; the encoder is untouched.
ModelBundle fit_readout(ModelBundle model, std::span<const InputCase> train, double ridge);

nlohmann::json model_to_json(const ModelBundle& model);
ModelBundle model_from_json(const nlohmann::json& doc);
void save_model(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace sattn
