#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "linefl/windowing.hpp"

namespace linefl::adapter {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class PositionalEncoding { Sinusoidal, Learned, None };

const char* to_string(PositionalEncoding p);
PositionalEncoding positional_from_string(const std::string& s);

struct AdapterConfig {
  std::uint32_t input_dim = 1024;   // D, width of the frozen encoder's states
  std::uint32_t model_dim = 512;    // d
  std::uint32_t n_layers = 2;       // 0 is the linear-probe ablation
  std::uint32_t n_heads = 8;
  std::uint32_t ff_multiplier = 4;
  double dropout = 0.1;
  PositionalEncoding positional = PositionalEncoding::Sinusoidal;
  std::uint32_t window = windowing::kDefaultCapacity;  // positions a sample may hold

  std::uint32_t head_dim() const { return model_dim / n_heads; }
  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  bool operator==(const AdapterConfig&) const = default;
};

/// Parameters of one pre-norm encoder layer. Biases are 1 x n rows. There is
/// no key bias: softmax is invariant to it.
template <class T>
struct LayerParams {
  Mat<T> ln1_gain, ln1_bias;
  Mat<T> w_query, b_query, w_key, w_value, b_value, w_out, b_out;
  Mat<T> ln2_gain, ln2_bias;
  Mat<T> w_ff1, b_ff1, w_ff2, b_ff2;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("ln1_gain", self.ln1_gain);
    f("ln1_bias", self.ln1_bias);
    f("w_query", self.w_query);
    f("b_query", self.b_query);
    f("w_key", self.w_key);
    f("w_value", self.w_value);
    f("b_value", self.b_value);
    f("w_out", self.w_out);
    f("b_out", self.b_out);
    f("ln2_gain", self.ln2_gain);
    f("ln2_bias", self.ln2_bias);
    f("w_ff1", self.w_ff1);
    f("b_ff1", self.b_ff1);
    f("w_ff2", self.w_ff2);
    f("b_ff2", self.b_ff2);
  }
};

/// Every learnable tensor of the adapter; also used to hold gradients and
/// optimizer moments.
template <class T>
struct AdapterParams {
  Mat<T> reduce;           // D x d, no bias
  Mat<T> positions;        // window x d when learned, else empty
  std::vector<LayerParams<T>> layers;
  Mat<T> final_gain, final_bias;  // empty when n_layers == 0
  Mat<T> head;             // d x 1
  Mat<T> head_bias;        // 1 x 1

  /// Calls f(name, tensor) for every tensor in a fixed order.
  template <class F>
  void for_each(F&& f) {
    visit_all(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit_all(*this, f);
  }

  AdapterParams zeros_like() const;
  std::size_t size() const;

  template <class U>
  AdapterParams<U> cast() const;

 private:
  template <class Self, class F>
  static void visit_all(Self& self, F& f) {
    f(std::string("reduce"), self.reduce);
    f(std::string("positions"), self.positions);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      LayerParams<T>::visit(self.layers[l], [&](const char* name, auto& m) { f(prefix + name, m); });
    }
    f(std::string("final_gain"), self.final_gain);
    f(std::string("final_bias"), self.final_bias);
    f(std::string("head"), self.head);
    f(std::string("head_bias"), self.head_bias);
  }
};

template <class T>
class AdapterModel {
 public:
  AdapterModel() = default;
  AdapterModel(AdapterConfig config, AdapterParams<T> params);

  const AdapterConfig& config() const { return config_; }
  const AdapterParams<T>& params() const { return params_; }
  /// Mutable access invalidates outstanding forward traces.
  AdapterParams<T>& mutable_params() {
    ++revision_;
    return params_;
  }
  std::uint64_t revision() const { return revision_; }
  std::uint64_t identity() const { return identity_; }

  template <class U>
  AdapterModel<U> cast() const {
    return AdapterModel<U>(config_, params_.template cast<U>());
  }

 private:
  AdapterConfig config_;
  AdapterParams<T> params_;
  std::uint64_t identity_ = next_identity();
  std::uint64_t revision_ = 0;

  static std::uint64_t next_identity();
};

template <class T>
AdapterModel<T> init(const AdapterConfig& config, std::uint64_t seed);

using Batch = std::span<const windowing::WindowSample>;

/// Cached activations of one sample; only the `valid` leading rows of the
/// window are ever computed, so padding cannot influence anything.
template <class T>
struct SampleTrace {
  struct LayerNormCache {
    Mat<T> normalized;  // x_hat
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };
  struct LayerCache {
    Mat<T> input;
    LayerNormCache ln1;
    Mat<T> ln1_out, query, key, value;
    std::vector<Mat<T>> attention;  // per head, valid x valid
    Mat<T> context;                 // concatenated head outputs
    Mat<T> attn_drop;               // dropout scale per element, empty when inactive
    Mat<T> mid;                     // residual stream after attention
    LayerNormCache ln2;
    Mat<T> ln2_out, ff_pre, ff_act;
    Mat<T> ff_drop;
  };

  std::uint32_t valid = 0;
  Mat<T> inputs;  // valid x D
  std::vector<LayerCache> layers;
  LayerNormCache final_ln;
  Mat<T> features;  // A: valid x d, what the head consumes
  Eigen::Matrix<T, Eigen::Dynamic, 1> logits;
};

template <class T>
struct ForwardTrace {
  /// Per sample, `capacity` probabilities; padded positions hold 0.
  std::vector<std::vector<T>> probabilities;
  std::vector<SampleTrace<T>> samples;
  std::uint64_t model_identity = 0;
  std::uint64_t model_revision = 0;
  std::vector<const windowing::WindowSample*> batch_ptrs;
};

/// `rng` drives dropout and is required only when training with dropout > 0.
template <class T>
ForwardTrace<T> forward(const AdapterModel<T>& model, Batch batch, bool training,
                        std::mt19937_64* rng = nullptr);

/// Mean binary cross-entropy over unmasked positions, from logits.
template <class T>
double loss(const ForwardTrace<T>& trace, Batch batch);

template <class T>
AdapterParams<T> backward(const AdapterModel<T>& model, const ForwardTrace<T>& trace, Batch batch);

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the
/// checked parameters, using central differences in extended precision.
/// `max_params == 0` checks every parameter; otherwise a seeded sample of
/// that many.
double grad_check(const AdapterModel<double>& model, Batch batch, double eps, std::size_t max_params = 0,
                  std::uint64_t seed = 0);
/// Same, against a caller-supplied gradient.
double grad_check(const AdapterModel<double>& model, Batch batch, double eps,
                  const AdapterParams<double>& analytic, std::size_t max_params = 0, std::uint64_t seed = 0);

/// Checkpoint container: config, f32 parameters, seed lineage, step counter.
struct Checkpoint {
  AdapterModel<float> model;
  std::vector<std::uint64_t> seed_lineage;
  std::uint64_t step = 0;
  std::uint32_t best_epoch = 0;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <class T>
template <class U>
AdapterParams<U> AdapterParams<T>::cast() const {
  AdapterParams<U> out;
  out.reduce = reduce.template cast<U>();
  out.positions = positions.template cast<U>();
  out.layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<const Mat<T>*> src;
    LayerParams<T>::visit(layers[l], [&](const char*, const Mat<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    LayerParams<U>::visit(out.layers[l], [&](const char*, Mat<U>& m) { m = src[i++]->template cast<U>(); });
  }
  out.final_gain = final_gain.template cast<U>();
  out.final_bias = final_bias.template cast<U>();
  out.head = head.template cast<U>();
  out.head_bias = head_bias.template cast<U>();
  return out;
}

}  // namespace linefl::adapter
