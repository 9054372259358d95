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

#include "ctcslu/model.hpp"

#include <algorithm>
#include <cmath>

#include "ctcslu/error.hpp"

namespace ctcslu::model {

namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kClipCeiling = 20.0;

// Deterministic across standard libraries, unlike std::uniform_real_distribution.
class UniformSource {
 public:
  explicit UniformSource(std::uint64_t seed) : state_(seed) {}

  double next(double bound) {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    const double unit = static_cast<double>(z >> 11) * 0x1.0p-53;
    return (2.0 * unit - 1.0) * bound;
  }

  void fill(Eigen::MatrixXd& m, double bound) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = next(bound);
  }

 private:
  std::uint64_t state_;
};

std::string rnn_prefix(int layer, int dir) {
  return "rnn" + std::to_string(layer) + (dir == 0 ? ".fwd." : ".bwd.");
}

int conv_out(int in, int kernel, int stride, int pad) {
  const int span = in + 2 * pad - kernel;
  return span < 0 ? 0 : span / stride + 1;
}

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

// Convolution on one utterance. `in` is (channels * freq) x frames.
Eigen::MatrixXd conv_forward(const Eigen::MatrixXd& in, int in_channels, int in_freq,
                             const ConvLayerConfig& cfg, const Eigen::MatrixXd& weight,
                             const Eigen::MatrixXd& bias, Eigen::MatrixXd* patches_out,
                             Eigen::MatrixXd* pre_out) {
  const int in_frames = static_cast<int>(in.cols());
  const int out_frames = conv_out(in_frames, cfg.kernel_time, cfg.stride_time, cfg.pad_time);
  const int out_freq = conv_out(in_freq, cfg.kernel_freq, cfg.stride_freq, cfg.pad_freq);
  const int patch = in_channels * cfg.kernel_time * cfg.kernel_freq;
  Eigen::MatrixXd patches = Eigen::MatrixXd::Zero(patch, out_frames * out_freq);
  for (int t = 0; t < out_frames; ++t) {
    for (int f = 0; f < out_freq; ++f) {
      const int col = t * out_freq + f;
      for (int ci = 0; ci < in_channels; ++ci) {
        for (int dt = 0; dt < cfg.kernel_time; ++dt) {
          const int src_t = t * cfg.stride_time - cfg.pad_time + dt;
          if (src_t < 0 || src_t >= in_frames) continue;
          for (int df = 0; df < cfg.kernel_freq; ++df) {
            const int src_f = f * cfg.stride_freq - cfg.pad_freq + df;
            if (src_f < 0 || src_f >= in_freq) continue;
            patches((ci * cfg.kernel_time + dt) * cfg.kernel_freq + df, col) =
                in(ci * in_freq + src_f, src_t);
          }
        }
      }
    }
  }
  Eigen::MatrixXd pre = weight * patches;
  pre.colwise() += bias.col(0);
  Eigen::MatrixXd out(cfg.channels * out_freq, out_frames);
  for (int co = 0; co < cfg.channels; ++co)
    for (int t = 0; t < out_frames; ++t)
      for (int f = 0; f < out_freq; ++f)
        out(co * out_freq + f, t) = std::clamp(pre(co, t * out_freq + f), 0.0, kClipCeiling);
  if (patches_out != nullptr) *patches_out = std::move(patches);
  if (pre_out != nullptr) *pre_out = std::move(pre);
  return out;
}

Eigen::MatrixXd conv_backward(const Eigen::MatrixXd& d_out, int in_channels, int in_freq,
                              int in_frames, const ConvLayerConfig& cfg,
                              const Eigen::MatrixXd& weight, const Eigen::MatrixXd& patches,
                              const Eigen::MatrixXd& pre, Eigen::MatrixXd& d_weight,
                              Eigen::MatrixXd& d_bias) {
  const int out_frames = conv_out(in_frames, cfg.kernel_time, cfg.stride_time, cfg.pad_time);
  const int out_freq = conv_out(in_freq, cfg.kernel_freq, cfg.stride_freq, cfg.pad_freq);
  Eigen::MatrixXd d_pre(cfg.channels, out_frames * out_freq);
  for (int co = 0; co < cfg.channels; ++co)
    for (int t = 0; t < out_frames; ++t)
      for (int f = 0; f < out_freq; ++f) {
        const double z = pre(co, t * out_freq + f);
        d_pre(co, t * out_freq + f) =
            (z > 0.0 && z < kClipCeiling) ? d_out(co * out_freq + f, t) : 0.0;
      }
  d_weight.noalias() += d_pre * patches.transpose();
  d_bias.col(0) += d_pre.rowwise().sum();
  const Eigen::MatrixXd d_patches = weight.transpose() * d_pre;
  Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(in_channels * in_freq, in_frames);
  for (int t = 0; t < out_frames; ++t) {
    for (int f = 0; f < out_freq; ++f) {
      const int col = t * out_freq + f;
      for (int ci = 0; ci < in_channels; ++ci) {
        for (int dt = 0; dt < cfg.kernel_time; ++dt) {
          const int src_t = t * cfg.stride_time - cfg.pad_time + dt;
          if (src_t < 0 || src_t >= in_frames) continue;
          for (int df = 0; df < cfg.kernel_freq; ++df) {
            const int src_f = f * cfg.stride_freq - cfg.pad_freq + df;
            if (src_f < 0 || src_f >= in_freq) continue;
            d_in(ci * in_freq + src_f, src_t) +=
                d_patches((ci * cfg.kernel_time + dt) * cfg.kernel_freq + df, col);
          }
        }
      }
    }
  }
  return d_in;
}

void run_direction(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& recurrent, int hidden,
                   int batch, int max_frames, const Eigen::ArrayXd& mask, bool reverse,
                   DirectionCache& dc) {
  const Eigen::Index n = pre.cols();
  dc.gates.resize(4 * hidden, n);
  dc.cell.resize(hidden, n);
  dc.cell_tanh.resize(hidden, n);
  dc.hidden.resize(hidden, n);
  Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(hidden, batch);
  Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(hidden, batch);
  Eigen::MatrixXd g(4 * hidden, batch);
  for (int step = 0; step < max_frames; ++step) {
    const int t = reverse ? max_frames - 1 - step : step;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
    g.noalias() = recurrent * h_prev;
    g += pre.middleCols(col, batch);
    auto gates = dc.gates.middleCols(col, batch);
    gates.topRows(2 * hidden) = sigmoid(g.topRows(2 * hidden).array()).matrix();
    gates.middleRows(2 * hidden, hidden) = g.middleRows(2 * hidden, hidden).array().tanh().matrix();
    gates.bottomRows(hidden) = sigmoid(g.bottomRows(hidden).array()).matrix();
    auto c = dc.cell.middleCols(col, batch);
    auto ct = dc.cell_tanh.middleCols(col, batch);
    auto h = dc.hidden.middleCols(col, batch);
    c = (gates.middleRows(hidden, hidden).array() * c_prev.array() +
         gates.topRows(hidden).array() * gates.middleRows(2 * hidden, hidden).array())
            .matrix();
    ct = c.array().tanh().matrix();
    h = (gates.bottomRows(hidden).array() * ct.array()).matrix();
    for (int b = 0; b < batch; ++b) {
      if (mask(col + b) == 0.0) {
        c.col(b).setZero();
        ct.col(b).setZero();
        h.col(b).setZero();
      }
    }
    h_prev = h;
    c_prev = c;
  }
}

// Returns d loss / d pre (4H x N); accumulates the recurrent weight gradient.
Eigen::MatrixXd backprop_direction(const DirectionCache& dc, const Eigen::MatrixXd& recurrent,
                                   const Eigen::MatrixXd& d_hidden, int hidden, int batch,
                                   int max_frames, const Eigen::ArrayXd& mask, bool reverse,
                                   Eigen::MatrixXd& d_recurrent) {
  const Eigen::Index n = d_hidden.cols();
  Eigen::MatrixXd d_pre(4 * hidden, n);
  Eigen::MatrixXd dh_rec = Eigen::MatrixXd::Zero(hidden, batch);
  Eigen::MatrixXd dc_rec = Eigen::MatrixXd::Zero(hidden, batch);
  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(hidden, batch);
  for (int step = max_frames - 1; step >= 0; --step) {
    const int t = reverse ? max_frames - 1 - step : step;
    const int prev_t = reverse ? t + 1 : t - 1;
    const bool has_prev = prev_t >= 0 && prev_t < max_frames;
    const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
    const Eigen::Index prev_col = static_cast<Eigen::Index>(prev_t) * batch;
    const Eigen::MatrixXd h_prev = has_prev ? Eigen::MatrixXd(dc.hidden.middleCols(prev_col, batch)) : zeros;
    const Eigen::MatrixXd c_prev = has_prev ? Eigen::MatrixXd(dc.cell.middleCols(prev_col, batch)) : zeros;
    const auto gates = dc.gates.middleCols(col, batch);
    const Eigen::ArrayXXd i = gates.topRows(hidden).array();
    const Eigen::ArrayXXd f = gates.middleRows(hidden, hidden).array();
    const Eigen::ArrayXXd gg = gates.middleRows(2 * hidden, hidden).array();
    const Eigen::ArrayXXd o = gates.bottomRows(hidden).array();
    const Eigen::ArrayXXd ct = dc.cell_tanh.middleCols(col, batch).array();

    const Eigen::ArrayXXd dh = d_hidden.middleCols(col, batch).array() + dh_rec.array();
    const Eigen::ArrayXXd dc = dc_rec.array() + dh * o * (1.0 - ct.square());
    auto block = d_pre.middleCols(col, batch);
    block.topRows(hidden) = (dc * gg * i * (1.0 - i)).matrix();
    block.middleRows(hidden, hidden) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
    block.middleRows(2 * hidden, hidden) = (dc * i * (1.0 - gg.square())).matrix();
    block.bottomRows(hidden) = (dh * ct * o * (1.0 - o)).matrix();
    dc_rec = (dc * f).matrix();
    for (int b = 0; b < batch; ++b) {
      if (mask(col + b) == 0.0) {
        block.col(b).setZero();
        dc_rec.col(b).setZero();
      }
    }
    if (has_prev) d_recurrent.noalias() += block * h_prev.transpose();
    dh_rec.noalias() = recurrent.transpose() * block;
  }
  return d_pre;
}

void check_features(const Checkpoint& ckpt, const FeatureSequence& f, std::size_t index) {
  const NetworkConfig& cfg = ckpt.config;
  if (f.frames.rows() < 1) {
    throw Error(ErrorKind::kShape, "utterance " + std::to_string(index) + " has no frames");
  }
  if (f.frames.cols() != cfg.input_dim) {
    throw Error(ErrorKind::kShape, "utterance " + std::to_string(index) + " has feature dim " +
                                       std::to_string(f.frames.cols()) + ", model expects " +
                                       std::to_string(cfg.input_dim));
  }
  if (!f.frames.allFinite()) {
    throw Error(ErrorKind::kShape, "utterance " + std::to_string(index) + " has non-finite features");
  }
  if (cfg.speaker_vector_dim > 0) {
    if (!f.speaker_vector) {
      throw Error(ErrorKind::kShape,
                  "utterance " + std::to_string(index) + " lacks the speaker vector the model expects");
    }
    if (f.speaker_vector->size() != cfg.speaker_vector_dim) {
      throw Error(ErrorKind::kShape, "utterance " + std::to_string(index) +
                                         " speaker vector has dim " +
                                         std::to_string(f.speaker_vector->size()) + ", model expects " +
                                         std::to_string(cfg.speaker_vector_dim));
    }
  } else if (f.speaker_vector && f.speaker_vector->size() > 0) {
    throw Error(ErrorKind::kShape, "utterance " + std::to_string(index) +
                                       " carries a speaker vector but the model has no speaker input");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

NetworkConfig NetworkConfig::reference(int input_dim, int output_units) {
  NetworkConfig c;
  c.input_dim = input_dim;
  c.conv_layers = {ConvLayerConfig{}, ConvLayerConfig{}};
  c.recurrent_layers = 5;
  c.hidden_size = 800;
  c.bidirectional = true;
  c.batch_norm = true;
  c.output_units = output_units;
  return c;
}

NetworkConfig NetworkConfig::desk(int input_dim, int output_units) {
  NetworkConfig c;
  c.input_dim = input_dim;
  c.recurrent_layers = 2;
  c.hidden_size = 64;
  c.bidirectional = true;
  c.batch_norm = false;
  c.output_units = output_units;
  return c;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfiguration, msg); };
  if (input_dim < 1) fail("input_dim must be positive");
  if (output_units < 2) fail("output_units must be at least 2");
  if (recurrent_layers < 1) fail("at least one recurrent layer is required");
  if (hidden_size < 1) fail("hidden_size must be positive");
  if (speaker_vector_dim < 0) fail("speaker_vector_dim must be >= 0");
  int freq = input_dim;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const ConvLayerConfig& c = conv_layers[i];
    if (c.kernel_time < 1 || c.kernel_freq < 1 || c.stride_time < 1 || c.stride_freq < 1 ||
        c.pad_time < 0 || c.pad_freq < 0 || c.channels < 1) {
      fail("conv layer " + std::to_string(i) + " has a non-positive size");
    }
    freq = conv_out(freq, c.kernel_freq, c.stride_freq, c.pad_freq);
    if (freq < 1) fail("conv layer " + std::to_string(i) + " leaves no frequency bins");
  }
}

int NetworkConfig::output_frames(int input_frames) const {
  int frames = input_frames;
  for (const ConvLayerConfig& c : conv_layers) {
    frames = conv_out(frames, c.kernel_time, c.stride_time, c.pad_time);
  }
  return frames;
}

int NetworkConfig::recurrent_input_dim() const {
  if (conv_layers.empty()) return input_dim;
  int freq = input_dim;
  for (const ConvLayerConfig& c : conv_layers) {
    freq = conv_out(freq, c.kernel_freq, c.stride_freq, c.pad_freq);
  }
  return freq * conv_layers.back().channels;
}

void to_json(nlohmann::json& j, const ConvLayerConfig& c) {
  j = {{"kernel_time", c.kernel_time}, {"kernel_freq", c.kernel_freq},
       {"stride_time", c.stride_time}, {"stride_freq", c.stride_freq},
       {"pad_time", c.pad_time},       {"pad_freq", c.pad_freq},
       {"channels", c.channels}};
}

void from_json(const nlohmann::json& j, ConvLayerConfig& c) {
  ConvLayerConfig d;
  c.kernel_time = j.value("kernel_time", d.kernel_time);
  c.kernel_freq = j.value("kernel_freq", d.kernel_freq);
  c.stride_time = j.value("stride_time", d.stride_time);
  c.stride_freq = j.value("stride_freq", d.stride_freq);
  c.pad_time = j.value("pad_time", d.pad_time);
  c.pad_freq = j.value("pad_freq", d.pad_freq);
  c.channels = j.value("channels", d.channels);
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"input_dim", c.input_dim},
       {"conv_layers", c.conv_layers},
       {"recurrent_layers", c.recurrent_layers},
       {"hidden_size", c.hidden_size},
       {"bidirectional", c.bidirectional},
       {"batch_norm", c.batch_norm},
       {"speaker_vector_dim", c.speaker_vector_dim},
       {"output_units", c.output_units}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.input_dim = j.value("input_dim", d.input_dim);
  c.conv_layers = j.value("conv_layers", d.conv_layers);
  c.recurrent_layers = j.value("recurrent_layers", d.recurrent_layers);
  c.hidden_size = j.value("hidden_size", d.hidden_size);
  c.bidirectional = j.value("bidirectional", d.bidirectional);
  c.batch_norm = j.value("batch_norm", d.batch_norm);
  c.speaker_vector_dim = j.value("speaker_vector_dim", d.speaker_vector_dim);
  c.output_units = j.value("output_units", d.output_units);
}

void to_json(nlohmann::json& j, const TrainingMeta& m) {
  j = {{"stage", m.stage}, {"epoch", m.epoch}, {"dev_history", m.dev_history},
       {"chain", m.chain}};
}

void from_json(const nlohmann::json& j, TrainingMeta& m) {
  m.stage = j.value("stage", std::string());
  m.epoch = j.value("epoch", 0);
  m.dev_history = j.value("dev_history", std::vector<double>{});
  m.chain = j.value("chain", std::vector<std::string>{});
}

// ---------------------------------------------------------------------------
// Parameters

Eigen::MatrixXd& ParameterSet::add(const std::string& name, Eigen::Index rows,
                                   Eigen::Index cols, bool trainable) {
  if (contains(name)) throw Error(ErrorKind::kState, "duplicate tensor '" + name + "'");
  tensors_.push_back({name, Eigen::MatrixXd::Zero(rows, cols), trainable});
  index_[name] = tensors_.size() - 1;
  return tensors_.back().value;
}

Eigen::MatrixXd& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kShape, "missing tensor '" + name + "'");
  return tensors_[it->second].value;
}

const Eigen::MatrixXd& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kShape, "missing tensor '" + name + "'");
  return tensors_[it->second].value;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &tensors_[it->second];
}

void ParameterSet::remove(const std::string& name) {
  auto it = std::find_if(tensors_.begin(), tensors_.end(),
                         [&](const Tensor& t) { return t.name == name; });
  if (it == tensors_.end()) return;
  tensors_.erase(it);
  reindex();
}

void ParameterSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < tensors_.size(); ++i) index_[tensors_[i].name] = i;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const Tensor& t : tensors_) out.add(t.name, t.value.rows(), t.value.cols(), t.trainable);
  return out;
}

std::string layer_of(const std::string& tensor_name) {
  return tensor_name.substr(0, tensor_name.find('.'));
}

void quantize_to_float(ParameterSet& params) {
  for (Tensor& t : params.tensors()) {
    t.value = t.value.cast<float>().cast<double>();
  }
}

double global_norm(const ParameterSet& grads) {
  double sq = 0.0;
  for (const Tensor& t : grads.tensors()) {
    if (t.trainable) sq += t.value.squaredNorm();
  }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Construction

namespace {

void add_output_layer(ParameterSet& params, int units, int top_dim, UniformSource& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(top_dim));
  rng.fill(params.add("output.weight", units, top_dim), bound);
  rng.fill(params.add("output.bias", units, 1), bound);
}

}  // namespace

Checkpoint initialize(const NetworkConfig& config, const Vocabulary& vocabulary,
                      std::uint64_t seed) {
  config.validate();
  if (vocabulary.size() != static_cast<std::size_t>(config.output_units)) {
    throw Error(ErrorKind::kShape, "vocabulary has " + std::to_string(vocabulary.size()) +
                                       " units but output_units is " +
                                       std::to_string(config.output_units));
  }
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocabulary = vocabulary;
  UniformSource rng(seed);
  ParameterSet& p = ckpt.parameters;

  int channels = 1;
  for (std::size_t i = 0; i < config.conv_layers.size(); ++i) {
    const ConvLayerConfig& c = config.conv_layers[i];
    const int fan_in = channels * c.kernel_time * c.kernel_freq;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::string name = "conv" + std::to_string(i);
    rng.fill(p.add(name + ".weight", c.channels, fan_in), bound);
    rng.fill(p.add(name + ".bias", c.channels, 1), bound);
    channels = c.channels;
  }

  const int h = config.hidden_size;
  const int dirs = config.bidirectional ? 2 : 1;
  for (int layer = 0; layer < config.recurrent_layers; ++layer) {
    const int in_dim = layer == 0 ? config.recurrent_input_dim() : config.top_dim();
    for (int d = 0; d < dirs; ++d) {
      const std::string prefix = rnn_prefix(layer, d);
      rng.fill(p.add(prefix + "input_weight", 4 * h, in_dim),
               1.0 / std::sqrt(static_cast<double>(in_dim)));
      rng.fill(p.add(prefix + "recurrent_weight", 4 * h, h),
               1.0 / std::sqrt(static_cast<double>(h)));
      if (config.batch_norm) {
        p.add(prefix + "bn_gamma", 4 * h, 1).setOnes();
        p.add(prefix + "bn_beta", 4 * h, 1).middleRows(h, h).setOnes();
        p.add(prefix + "bn_running_mean", 4 * h, 1, false);
        p.add(prefix + "bn_running_var", 4 * h, 1, false).setOnes();
      } else {
        Eigen::MatrixXd& bias = p.add(prefix + "bias", 4 * h, 1);
        rng.fill(bias, 1.0 / std::sqrt(static_cast<double>(h)));
        bias.middleRows(h, h).array() += 1.0;
      }
      if (layer == 0 && config.speaker_vector_dim > 0) {
        rng.fill(p.add(prefix + "speaker_weight", 4 * h, config.speaker_vector_dim),
                 1.0 / std::sqrt(static_cast<double>(config.speaker_vector_dim)));
      }
    }
  }
  add_output_layer(p, config.output_units, config.top_dim(), rng);
  return ckpt;
}

void validate(const Checkpoint& ckpt) {
  const NetworkConfig& cfg = ckpt.config;
  cfg.validate();
  if (ckpt.vocabulary.size() != static_cast<std::size_t>(cfg.output_units)) {
    throw Error(ErrorKind::kShape, "vocabulary size differs from output_units");
  }
  // A freshly initialized network lists exactly the expected shapes.
  NetworkConfig probe = cfg;
  const Checkpoint expected = initialize(probe, ckpt.vocabulary, 0);
  if (expected.parameters.size() != ckpt.parameters.size()) {
    throw Error(ErrorKind::kShape, "checkpoint has " + std::to_string(ckpt.parameters.size()) +
                                       " tensors, config implies " +
                                       std::to_string(expected.parameters.size()));
  }
  for (const Tensor& t : expected.parameters.tensors()) {
    const Tensor* have = ckpt.parameters.find(t.name);
    if (have == nullptr) throw Error(ErrorKind::kShape, "missing tensor '" + t.name + "'");
    if (have->value.rows() != t.value.rows() || have->value.cols() != t.value.cols()) {
      throw Error(ErrorKind::kShape, "tensor '" + t.name + "' has the wrong shape");
    }
  }
}

// ---------------------------------------------------------------------------
// Forward

std::vector<ctc::LogProbMatrix> forward_batch(const Checkpoint& ckpt,
                                              std::span<const FeatureSequence* const> batch,
                                              Mode mode, ForwardCache* cache) {
  const NetworkConfig& cfg = ckpt.config;
  const ParameterSet& p = ckpt.parameters;
  if (batch.empty()) return {};
  for (std::size_t b = 0; b < batch.size(); ++b) check_features(ckpt, *batch[b], b);

  ForwardCache local;
  ForwardCache& fc = cache != nullptr ? *cache : local;
  fc = ForwardCache{};
  fc.mode = mode;
  fc.batch = static_cast<int>(batch.size());
  const int nb = fc.batch;

  // Convolution stack, one utterance at a time.
  std::vector<Eigen::MatrixXd> feats(batch.size());
  fc.conv.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Eigen::MatrixXd map = batch[b]->frames.transpose();
    int channels = 1;
    int freq = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.conv_layers.size(); ++l) {
      const ConvLayerConfig& c = cfg.conv_layers[l];
      const std::string name = "conv" + std::to_string(l);
      const int frames = static_cast<int>(map.cols());
      if (conv_out(frames, c.kernel_time, c.stride_time, c.pad_time) < 1) {
        throw Error(ErrorKind::kShape, "utterance " + std::to_string(b) +
                                           " is too short for conv layer " + std::to_string(l));
      }
      fc.conv[b].in_shape.emplace_back(frames, freq);
      Eigen::MatrixXd patches;
      Eigen::MatrixXd pre;
      map = conv_forward(map, channels, freq, c, p.at(name + ".weight"), p.at(name + ".bias"),
                         &patches, &pre);
      fc.conv[b].patches.push_back(std::move(patches));
      fc.conv[b].pre.push_back(std::move(pre));
      channels = c.channels;
      freq = conv_out(freq, c.kernel_freq, c.stride_freq, c.pad_freq);
    }
    fc.frames.push_back(static_cast<int>(map.cols()));
    feats[b] = std::move(map);
  }
  fc.max_frames = *std::max_element(fc.frames.begin(), fc.frames.end());
  const Eigen::Index n = static_cast<Eigen::Index>(fc.max_frames) * nb;
  fc.mask = Eigen::ArrayXd::Zero(n);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(cfg.recurrent_input_dim(), n);
  for (int b = 0; b < nb; ++b) {
    for (int t = 0; t < fc.frames[static_cast<std::size_t>(b)]; ++t) {
      x.col(static_cast<Eigen::Index>(t) * nb + b) = feats[static_cast<std::size_t>(b)].col(t);
      fc.mask(static_cast<Eigen::Index>(t) * nb + b) = 1.0;
    }
  }
  if (cfg.speaker_vector_dim > 0) {
    fc.speaker.resize(cfg.speaker_vector_dim, n);
    for (Eigen::Index col = 0; col < n; ++col) fc.speaker.col(col) = *batch[static_cast<std::size_t>(col % nb)]->speaker_vector;
  }
  const double valid = fc.mask.sum();

  const int h = cfg.hidden_size;
  const int dirs = cfg.bidirectional ? 2 : 1;
  fc.recurrent.resize(static_cast<std::size_t>(cfg.recurrent_layers));
  for (int layer = 0; layer < cfg.recurrent_layers; ++layer) {
    RecurrentCache& rc = fc.recurrent[static_cast<std::size_t>(layer)];
    rc.input = std::move(x);
    rc.directions.resize(static_cast<std::size_t>(dirs));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dirs) * h, n);
    for (int d = 0; d < dirs; ++d) {
      const std::string prefix = rnn_prefix(layer, d);
      DirectionCache& dc = rc.directions[static_cast<std::size_t>(d)];
      Eigen::MatrixXd pre = p.at(prefix + "input_weight") * rc.input;
      if (cfg.batch_norm) {
        Eigen::VectorXd mean;
        Eigen::VectorXd var;
        if (mode == Mode::kTrain) {
          mean = (pre * fc.mask.matrix()) / valid;
          Eigen::MatrixXd centered = pre.colwise() - mean;
          var = (centered.array().square().matrix() * fc.mask.matrix()) / valid;
          dc.batch_mean = mean;
          dc.batch_var = var;
        } else {
          mean = p.at(prefix + "bn_running_mean").col(0);
          var = p.at(prefix + "bn_running_var").col(0);
        }
        dc.inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
        dc.normalized = (pre.colwise() - mean).array().colwise() * dc.inv_std.array();
        pre = (dc.normalized.array().colwise() * p.at(prefix + "bn_gamma").col(0).array())
                  .matrix();
        pre.colwise() += p.at(prefix + "bn_beta").col(0);
      } else {
        pre.colwise() += p.at(prefix + "bias").col(0);
      }
      if (layer == 0 && cfg.speaker_vector_dim > 0) {
        pre.noalias() += p.at(prefix + "speaker_weight") * fc.speaker;
      }
      run_direction(pre, p.at(prefix + "recurrent_weight"), h, nb, fc.max_frames, fc.mask,
                    d == 1, dc);
      out.middleRows(static_cast<Eigen::Index>(d) * h, h) = dc.hidden;
    }
    x = std::move(out);
  }
  fc.top = std::move(x);

  Eigen::MatrixXd logits = p.at("output.weight") * fc.top;
  logits.colwise() += p.at("output.bias").col(0);
  for (Eigen::Index col = 0; col < n; ++col) {
    const double m = logits.col(col).maxCoeff();
    const double lse = m + std::log((logits.col(col).array() - m).exp().sum());
    logits.col(col).array() -= lse;
  }
  fc.log_probs = std::move(logits);

  std::vector<ctc::LogProbMatrix> out(batch.size());
  for (int b = 0; b < nb; ++b) {
    const int frames = fc.frames[static_cast<std::size_t>(b)];
    ctc::LogProbMatrix m(frames, cfg.output_units);
    for (int t = 0; t < frames; ++t) {
      m.row(t) = fc.log_probs.col(static_cast<Eigen::Index>(t) * nb + b).transpose();
    }
    out[static_cast<std::size_t>(b)] = std::move(m);
  }
  return out;
}

ctc::LogProbMatrix forward(const Checkpoint& ckpt, const FeatureSequence& features) {
  const FeatureSequence* one[] = {&features};
  return std::move(forward_batch(ckpt, one, Mode::kEval)[0]);
}

// ---------------------------------------------------------------------------
// Backward

Eigen::MatrixXd log_softmax_backward(const ctc::LogProbMatrix& log_probs,
                                     const Eigen::MatrixXd& grad_log_probs) {
  if (log_probs.rows() != grad_log_probs.rows() || log_probs.cols() != grad_log_probs.cols()) {
    throw Error(ErrorKind::kShape, "gradient shape differs from log-probabilities");
  }
  const Eigen::VectorXd row_sum = grad_log_probs.rowwise().sum();
  return grad_log_probs - (log_probs.array().exp().colwise() * row_sum.array()).matrix();
}

ParameterSet backward_batch(const Checkpoint& ckpt, const ForwardCache& fc,
                            std::span<const Eigen::MatrixXd> grad_logits,
                            const BackwardOptions& options) {
  const NetworkConfig& cfg = ckpt.config;
  const ParameterSet& p = ckpt.parameters;
  const int nb = fc.batch;
  if (grad_logits.size() != static_cast<std::size_t>(nb)) {
    throw Error(ErrorKind::kShape, "expected " + std::to_string(nb) + " gradient matrices");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(fc.max_frames) * nb;
  ParameterSet grads = p.zeros_like();

  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(cfg.output_units, n);
  for (int b = 0; b < nb; ++b) {
    const Eigen::MatrixXd& g = grad_logits[static_cast<std::size_t>(b)];
    if (g.rows() != fc.frames[static_cast<std::size_t>(b)] || g.cols() != cfg.output_units) {
      throw Error(ErrorKind::kShape, "gradient " + std::to_string(b) + " has shape " +
                                         std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
    }
    for (Eigen::Index t = 0; t < g.rows(); ++t) {
      d_logits.col(t * nb + b) = g.row(t).transpose();
    }
  }
  grads.at("output.weight").noalias() += d_logits * fc.top.transpose();
  grads.at("output.bias").col(0) += d_logits.rowwise().sum();
  Eigen::MatrixXd d_x = p.at("output.weight").transpose() * d_logits;

  const int h = cfg.hidden_size;
  const int dirs = cfg.bidirectional ? 2 : 1;
  for (int layer = cfg.recurrent_layers - 1; layer >= 0; --layer) {
    const RecurrentCache& rc = fc.recurrent[static_cast<std::size_t>(layer)];
    Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(rc.input.rows(), n);
    for (int d = 0; d < dirs; ++d) {
      const std::string prefix = rnn_prefix(layer, d);
      const DirectionCache& dc = rc.directions[static_cast<std::size_t>(d)];
      Eigen::MatrixXd d_pre = backprop_direction(
          dc, p.at(prefix + "recurrent_weight"), d_x.middleRows(static_cast<Eigen::Index>(d) * h, h),
          h, nb, fc.max_frames, fc.mask, d == 1, grads.at(prefix + "recurrent_weight"));
      if (layer == 0 && cfg.speaker_vector_dim > 0) {
        grads.at(prefix + "speaker_weight").noalias() += d_pre * fc.speaker.transpose();
      }
      Eigen::MatrixXd d_proj;
      if (cfg.batch_norm) {
        const Eigen::ArrayXd gamma = p.at(prefix + "bn_gamma").col(0).array();
        grads.at(prefix + "bn_gamma").col(0) +=
            (d_pre.array() * dc.normalized.array()).matrix().rowwise().sum();
        grads.at(prefix + "bn_beta").col(0) += d_pre.rowwise().sum();
        const Eigen::ArrayXXd d_norm = d_pre.array().colwise() * gamma;
        if (fc.mode == Mode::kTrain) {
          const double valid = fc.mask.sum();
          const Eigen::ArrayXd mean_d = d_norm.rowwise().sum() / valid;
          const Eigen::ArrayXd mean_dx =
              (d_norm * dc.normalized.array()).rowwise().sum() / valid;
          Eigen::ArrayXXd r = d_norm.colwise() - mean_d;
          r -= dc.normalized.array().colwise() * mean_dx;
          r = r.colwise() * dc.inv_std.array();
          r = r.rowwise() * fc.mask.transpose();
          d_proj = r.matrix();
        } else {
          d_proj = (d_norm.colwise() * dc.inv_std.array()).matrix();
        }
      } else {
        grads.at(prefix + "bias").col(0) += d_pre.rowwise().sum();
        d_proj = std::move(d_pre);
      }
      grads.at(prefix + "input_weight").noalias() += d_proj * rc.input.transpose();
      d_in.noalias() += p.at(prefix + "input_weight").transpose() * d_proj;
    }
    d_x = std::move(d_in);
  }

  if (!cfg.conv_layers.empty()) {
    for (int b = 0; b < nb; ++b) {
      const ConvCache& cc = fc.conv[static_cast<std::size_t>(b)];
      const int frames = fc.frames[static_cast<std::size_t>(b)];
      Eigen::MatrixXd d_map(d_x.rows(), frames);
      for (int t = 0; t < frames; ++t) d_map.col(t) = d_x.col(static_cast<Eigen::Index>(t) * nb + b);
      for (int l = static_cast<int>(cfg.conv_layers.size()) - 1; l >= 0; --l) {
        const ConvLayerConfig& c = cfg.conv_layers[static_cast<std::size_t>(l)];
        const std::string name = "conv" + std::to_string(l);
        const int in_channels = l == 0 ? 1 : cfg.conv_layers[static_cast<std::size_t>(l - 1)].channels;
        const auto [in_frames, in_freq] = cc.in_shape[static_cast<std::size_t>(l)];
        d_map = conv_backward(d_map, in_channels, in_freq, in_frames, c, p.at(name + ".weight"),
                              cc.patches[static_cast<std::size_t>(l)],
                              cc.pre[static_cast<std::size_t>(l)], grads.at(name + ".weight"),
                              grads.at(name + ".bias"));
      }
    }
  }

  for (Tensor& t : grads.tensors()) {
    const bool frozen = std::find(options.frozen_layers.begin(), options.frozen_layers.end(),
                                  layer_of(t.name)) != options.frozen_layers.end();
    if (frozen || !t.trainable) t.value.setZero();
  }
  return grads;
}

ParameterSet backward(const Checkpoint& ckpt, const FeatureSequence& features,
                      const Eigen::MatrixXd& grad_log_probs, Mode mode,
                      const BackwardOptions& options) {
  ForwardCache cache;
  const FeatureSequence* one[] = {&features};
  const auto out = forward_batch(ckpt, one, mode, &cache);
  const Eigen::MatrixXd g = log_softmax_backward(out[0], grad_log_probs);
  return backward_batch(ckpt, cache, std::span<const Eigen::MatrixXd>(&g, 1), options);
}

double finite_difference_check(const Checkpoint& ckpt,
                               std::span<const FeatureSequence* const> batch, Mode mode,
                               double eps, std::uint64_t seed, double floor,
                               const BackwardOptions& options) {
  ForwardCache cache;
  const auto out = forward_batch(ckpt, batch, mode, &cache);
  UniformSource rng(seed);
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::MatrixXd> grad_logits;
  for (const auto& lp : out) {
    Eigen::MatrixXd w(lp.rows(), lp.cols());
    rng.fill(w, 1.0);
    grad_logits.push_back(log_softmax_backward(lp, w));
    weights.push_back(std::move(w));
  }
  const ParameterSet analytic = backward_batch(ckpt, cache, grad_logits, options);
  auto objective = [&](const Checkpoint& probe) {
    const auto lp = forward_batch(probe, batch, mode);
    double total = 0.0;
    for (std::size_t b = 0; b < lp.size(); ++b) total += (lp[b].array() * weights[b].array()).sum();
    return total;
  };
  Checkpoint probe = ckpt;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.parameters.size(); ++k) {
    Tensor& tensor = probe.parameters.tensors()[k];
    const bool frozen = std::find(options.frozen_layers.begin(), options.frozen_layers.end(),
                                  layer_of(tensor.name)) != options.frozen_layers.end();
    if (!tensor.trainable || frozen) continue;
    const Eigen::MatrixXd& a = analytic.tensors()[k].value;
    for (Eigen::Index c = 0; c < tensor.value.cols(); ++c) {
      for (Eigen::Index r = 0; r < tensor.value.rows(); ++r) {
        const double saved = tensor.value(r, c);
        auto at = [&](double offset) {
          tensor.value(r, c) = saved + offset;
          return objective(probe);
        };
        const double near = at(eps) - at(-eps);
        const double far = at(2.0 * eps) - at(-2.0 * eps);
        tensor.value(r, c) = saved;
        const double numeric = (8.0 * near - far) / (12.0 * eps);
        const double scale = std::max(std::abs(a(r, c)), std::abs(numeric));
        if (scale <= floor) continue;
        worst = std::max(worst, std::abs(a(r, c) - numeric) / scale);
      }
    }
  }
  return worst;
}

void update_running_stats(Checkpoint& ckpt, const ForwardCache& cache, double momentum) {
  if (!ckpt.config.batch_norm || cache.mode != Mode::kTrain) return;
  const double valid = cache.mask.sum();
  const double unbias = valid > 1.0 ? valid / (valid - 1.0) : 1.0;
  for (std::size_t layer = 0; layer < cache.recurrent.size(); ++layer) {
    for (std::size_t d = 0; d < cache.recurrent[layer].directions.size(); ++d) {
      const DirectionCache& dc = cache.recurrent[layer].directions[d];
      const std::string prefix = rnn_prefix(static_cast<int>(layer), static_cast<int>(d));
      auto mean = ckpt.parameters.at(prefix + "bn_running_mean").col(0);
      auto var = ckpt.parameters.at(prefix + "bn_running_var").col(0);
      mean = (1.0 - momentum) * mean + momentum * dc.batch_mean;
      var = (1.0 - momentum) * var + momentum * unbias * dc.batch_var;
    }
  }
}

// ---------------------------------------------------------------------------
// Surgery

Checkpoint replace_output_layer(const Checkpoint& ckpt, const Vocabulary& vocab,
                                std::uint64_t seed) {
  const std::u32string old_base = ckpt.vocabulary.base_graphemes();
  const std::u32string new_base = vocab.base_graphemes();
  if (new_base.size() < old_base.size() || new_base.compare(0, old_base.size(), old_base) != 0) {
    throw Error(ErrorKind::kTransferMismatch,
                "target vocabulary does not start with the source grapheme block (" +
                    std::to_string(old_base.size()) + " graphemes)");
  }
  Checkpoint out;
  out.config = ckpt.config;
  out.config.output_units = static_cast<int>(vocab.size());
  out.vocabulary = vocab;
  for (const Tensor& t : ckpt.parameters.tensors()) {
    if (layer_of(t.name) == "output") continue;
    out.parameters.add(t.name, t.value.rows(), t.value.cols(), t.trainable) = t.value;
  }
  UniformSource rng(seed);
  add_output_layer(out.parameters, out.config.output_units, out.config.top_dim(), rng);
  out.meta.chain = ckpt.meta.chain;
  out.meta.chain.push_back(ckpt.meta.stage.empty() ? "unnamed" : ckpt.meta.stage);
  return out;
}

Checkpoint attach_speaker_input(const Checkpoint& ckpt, int dim) {
  if (ckpt.config.speaker_vector_dim > 0) {
    throw Error(ErrorKind::kState, "model already has a speaker input of dim " +
                                       std::to_string(ckpt.config.speaker_vector_dim));
  }
  if (dim < 0) throw Error(ErrorKind::kConfiguration, "speaker dim must be >= 0");
  if (dim == 0) return ckpt;
  Checkpoint out = ckpt;
  out.config.speaker_vector_dim = dim;
  out.parameters = ParameterSet{};
  const int dirs = ckpt.config.bidirectional ? 2 : 1;
  for (const Tensor& t : ckpt.parameters.tensors()) {
    out.parameters.add(t.name, t.value.rows(), t.value.cols(), t.trainable) = t.value;
    for (int d = 0; d < dirs; ++d) {
      // Keep manifest order identical to initialize().
      const std::string prefix = rnn_prefix(0, d);
      const std::string last = ckpt.config.batch_norm ? "bn_running_var" : "bias";
      if (t.name == prefix + last) {
        out.parameters.add(prefix + "speaker_weight", 4 * ckpt.config.hidden_size, dim);
      }
    }
  }
  return out;
}

}  // namespace ctcslu::model
