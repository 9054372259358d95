// Copyright 2026 The ctcslu Authors.
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

#ifndef CTCSLU_MODEL_HPP_
#define CTCSLU_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "ctcslu/ctc.hpp"
#include "ctcslu/tagcodec.hpp"
#include "json.hpp"

namespace ctcslu::model {

using tagcodec::Vocabulary;

// Kernel, stride and padding along time and frequency. The layer reads
// `channels` of the previous layer (1 for the raw features) and writes
// `channels` feature maps.
struct ConvLayerConfig {
  int kernel_time = 11;
  int kernel_freq = 41;
  int stride_time = 2;
  int stride_freq = 2;
  int pad_time = 5;
  int pad_freq = 20;
  int channels = 32;

  friend bool operator==(const ConvLayerConfig&, const ConvLayerConfig&) = default;
};

struct NetworkConfig {
  int input_dim = 0;
  std::vector<ConvLayerConfig> conv_layers;
  int recurrent_layers = 5;
  int hidden_size = 800;
  bool bidirectional = true;
  bool batch_norm = true;
  int speaker_vector_dim = 0;
  int output_units = 0;

  // Two convolutions, five bidirectional layers of width 800, batch norm.
  static NetworkConfig reference(int input_dim, int output_units);
  // No convolution, two bidirectional layers of width 64.
  static NetworkConfig desk(int input_dim, int output_units);

  // Throws kConfiguration on any inconsistency.
  void validate() const;

  // Frames left after the convolution stack; 0 when the input is too short.
  int output_frames(int input_frames) const;
  // Per-frame width entering the first recurrent layer (speaker vector
  // excluded).
  int recurrent_input_dim() const;
  int top_dim() const { return bidirectional ? 2 * hidden_size : hidden_size; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const ConvLayerConfig& c);
void from_json(const nlohmann::json& j, ConvLayerConfig& c);
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  bool trainable = true;
};

// Named tensors in a fixed manifest order.
class ParameterSet {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                       bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  void remove(const std::string& name);

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  // Same names and shapes, zero-filled.
  ParameterSet zeros_like() const;

 private:
  void reindex();

  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Layer owning a tensor: the text before the first '.'.
std::string layer_of(const std::string& tensor_name);

struct TrainingMeta {
  std::string stage;
  int epoch = 0;
  std::vector<double> dev_history;
  std::vector<std::string> chain;  // earlier stages, oldest first
};

void to_json(nlohmann::json& j, const TrainingMeta& m);
void from_json(const nlohmann::json& j, TrainingMeta& m);

struct Checkpoint {
  NetworkConfig config;
  Vocabulary vocabulary;
  ParameterSet parameters;
  TrainingMeta meta;
};

// All randomness comes from `seed`.
Checkpoint initialize(const NetworkConfig& config, const Vocabulary& vocabulary,
                      std::uint64_t seed);

// Throws kShape when tensor shapes disagree with the config or the vocabulary
// size differs from output_units.
void validate(const Checkpoint& ckpt);

struct FeatureSequence {
  Eigen::MatrixXd frames;  // T x input_dim
  std::optional<Eigen::VectorXd> speaker_vector;
};

enum class Mode { kTrain, kEval };

struct ConvCache {
  std::vector<Eigen::MatrixXd> patches;     // per layer, im2col input
  std::vector<Eigen::MatrixXd> pre;         // per layer, Cout x (Tout*Fout)
  std::vector<std::pair<int, int>> in_shape;  // per layer, (frames, freq)
};

struct DirectionCache {
  Eigen::MatrixXd normalized;  // batch-normalized input projection
  Eigen::VectorXd inv_std;
  Eigen::MatrixXd gates;       // activated i, f, g, o stacked (4H x N)
  Eigen::MatrixXd cell;
  Eigen::MatrixXd cell_tanh;
  Eigen::MatrixXd hidden;
  Eigen::VectorXd batch_mean;
  Eigen::VectorXd batch_var;
};

struct RecurrentCache {
  Eigen::MatrixXd input;  // I x N
  std::vector<DirectionCache> directions;
};

// Columns are frame-major: column t * batch + b holds frame t of utterance b.
struct ForwardCache {
  Mode mode = Mode::kEval;
  int batch = 0;
  int max_frames = 0;
  std::vector<int> frames;  // per utterance, after convolution
  Eigen::ArrayXd mask;      // 1 for real frames, 0 for padding (length N)
  std::vector<ConvCache> conv;
  Eigen::MatrixXd speaker;  // speaker_dim x N
  std::vector<RecurrentCache> recurrent;
  Eigen::MatrixXd top;      // top_dim x N
  Eigen::MatrixXd log_probs;  // V x N
};

// Batched forward pass. Each returned matrix is T'_b x output_units.
std::vector<ctc::LogProbMatrix> forward_batch(const Checkpoint& ckpt,
                                              std::span<const FeatureSequence* const> batch,
                                              Mode mode, ForwardCache* cache = nullptr);

// Single utterance, evaluation mode.
ctc::LogProbMatrix forward(const Checkpoint& ckpt, const FeatureSequence& features);

struct BackwardOptions {
  std::vector<std::string> frozen_layers;  // e.g. "conv0", "rnn1", "output"
};

// `grad_logits[b]` is d loss / d pre-softmax logits of utterance b, shaped
// like the matching forward output. Returns gradients for every tensor
// (zero for buffers and frozen layers).
ParameterSet backward_batch(const Checkpoint& ckpt, const ForwardCache& cache,
                            std::span<const Eigen::MatrixXd> grad_logits,
                            const BackwardOptions& options = {});

// Gradient through log-softmax: from d/d log-probs to d/d logits.
Eigen::MatrixXd log_softmax_backward(const ctc::LogProbMatrix& log_probs,
                                     const Eigen::MatrixXd& grad_log_probs);

// Single utterance convenience: upstream gradient is w.r.t. the log-probs.
ParameterSet backward(const Checkpoint& ckpt, const FeatureSequence& features,
                      const Eigen::MatrixXd& grad_log_probs, Mode mode = Mode::kTrain,
                      const BackwardOptions& options = {});

// Five-point central-difference check of backward_batch on the scalar
// sum_b <weights_b, log_probs_b>, with weights drawn from `seed`. Returns the
// largest relative error |analytic - numeric| / max(|analytic|, |numeric|)
// over every trainable entry whose magnitude exceeds `floor`.
double finite_difference_check(const Checkpoint& ckpt,
                               std::span<const FeatureSequence* const> batch, Mode mode,
                               double eps, std::uint64_t seed, double floor = 1e-7,
                               const BackwardOptions& options = {});

// Folds the batch statistics of a training-mode pass into the running
// averages used at evaluation time.
void update_running_stats(Checkpoint& ckpt, const ForwardCache& cache, double momentum);

// Keeps every non-output tensor and draws a fresh output layer sized for
// `vocab`. The new base grapheme block must start with the old one.
Checkpoint replace_output_layer(const Checkpoint& ckpt, const Vocabulary& vocab,
                                std::uint64_t seed);

// Adds zero-initialized speaker-vector weights to the first recurrent layer.
Checkpoint attach_speaker_input(const Checkpoint& ckpt, int dim);

// Rounds every tensor to the nearest 32-bit float, matching what a
// checkpoint file stores.
void quantize_to_float(ParameterSet& params);

double global_norm(const ParameterSet& grads);

// Versioned container: text header with config, vocabulary and tensor
// manifest, followed by little-endian float32 blobs in manifest order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace ctcslu::model

#endif  // CTCSLU_MODEL_HPP_
