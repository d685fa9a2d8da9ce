#include "linefl/adapter.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>

#include "linefl/error.hpp"

namespace linefl::adapter {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

template <class T>
void check_finite(const Mat<T>& m, const std::string& where) {
  if (!all_finite(m)) throw NumericError("non-finite activation in " + where);
}

template <class T>
void layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias,
                typename SampleTrace<T>::LayerNormCache& cache, Mat<T>& out) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.normalized.resize(n, d);
  cache.inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T inv_std = T(1) / std::sqrt(var + T(kLayerNormEps));
    cache.inv_std(r) = inv_std;
    cache.normalized.row(r) = (x.row(r).array() - mean) * inv_std;
  }
  out = (cache.normalized.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& grad_out, const typename SampleTrace<T>::LayerNormCache& cache,
                           const Mat<T>& gain, Mat<T>& grad_gain, Mat<T>& grad_bias) {
  const Mat<T>& xhat = cache.normalized;
  grad_gain += (grad_out.array() * xhat.array()).colwise().sum().matrix();
  grad_bias += grad_out.colwise().sum();
  Mat<T> dxhat = (grad_out.array().rowwise() * gain.row(0).array()).matrix();
  Mat<T> dx(grad_out.rows(), grad_out.cols());
  for (Eigen::Index r = 0; r < dx.rows(); ++r) {
    const T m1 = dxhat.row(r).mean();
    const T m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <class T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <class T>
void add_row_bias(Mat<T>& m, const Mat<T>& bias) {
  m.array().rowwise() += bias.row(0).array();
}

template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  Mat<T> mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
  return mask;
}

template <class T>
Mat<T> sinusoidal_positions(std::uint32_t count, std::uint32_t dim) {
  Mat<T> pe(count, dim);
  for (std::uint32_t pos = 0; pos < count; ++pos) {
    for (std::uint32_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
      const double angle = pos * freq;
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

bool uses_positions(const AdapterConfig& c) {
  return c.n_layers > 0 && c.positional != PositionalEncoding::None;
}

template <class T>
AdapterParams<T> allocate(const AdapterConfig& c) {
  const Eigen::Index D = c.input_dim, d = c.model_dim, ff = static_cast<Eigen::Index>(c.model_dim) * c.ff_multiplier;
  AdapterParams<T> p;
  p.reduce = Mat<T>::Zero(D, d);
  if (c.n_layers > 0 && c.positional == PositionalEncoding::Learned) p.positions = Mat<T>::Zero(c.window, d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.ln1_gain = Mat<T>::Ones(1, d);
    l.ln1_bias = Mat<T>::Zero(1, d);
    l.w_query = Mat<T>::Zero(d, d);
    l.b_query = Mat<T>::Zero(1, d);
    l.w_key = Mat<T>::Zero(d, d);
    l.w_value = Mat<T>::Zero(d, d);
    l.b_value = Mat<T>::Zero(1, d);
    l.w_out = Mat<T>::Zero(d, d);
    l.b_out = Mat<T>::Zero(1, d);
    l.ln2_gain = Mat<T>::Ones(1, d);
    l.ln2_bias = Mat<T>::Zero(1, d);
    l.w_ff1 = Mat<T>::Zero(d, ff);
    l.b_ff1 = Mat<T>::Zero(1, ff);
    l.w_ff2 = Mat<T>::Zero(ff, d);
    l.b_ff2 = Mat<T>::Zero(1, d);
  }
  if (c.n_layers > 0) {
    p.final_gain = Mat<T>::Ones(1, d);
    p.final_bias = Mat<T>::Zero(1, d);
  }
  p.head = Mat<T>::Zero(d, 1);
  p.head_bias = Mat<T>::Zero(1, 1);
  return p;
}

template <class T>
void fill_normal(Mat<T>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <class T>
void check_batch(const AdapterModel<T>& model, Batch batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  const auto& c = model.config();
  for (const auto& s : batch) {
    if (s.dim != c.input_dim) {
      throw ConfigError("sample dimension " + std::to_string(s.dim) + " does not match model input dimension " +
                        std::to_string(c.input_dim));
    }
    if (s.spec.length > s.capacity || s.states.size() != std::size_t{s.capacity} * s.dim ||
        s.labels.size() != s.capacity || s.mask.size() != s.capacity) {
      throw ConfigError(s.spec.doc_id + ": inconsistent window sample shape");
    }
    if (s.spec.length > c.window && c.positional == PositionalEncoding::Learned && c.n_layers > 0) {
      throw ConfigError(s.spec.doc_id + ": window of " + std::to_string(s.spec.length) +
                        " lines exceeds the learned position table of " + std::to_string(c.window));
    }
  }
}

}  // namespace

const char* to_string(PositionalEncoding p) {
  switch (p) {
    case PositionalEncoding::Sinusoidal: return "sinusoidal";
    case PositionalEncoding::Learned: return "learned";
    case PositionalEncoding::None: return "none";
  }
  return "?";
}

PositionalEncoding positional_from_string(const std::string& s) {
  if (s == "sinusoidal") return PositionalEncoding::Sinusoidal;
  if (s == "learned") return PositionalEncoding::Learned;
  if (s == "none") return PositionalEncoding::None;
  throw ConfigError("unknown positional encoding '" + s + "'");
}

void AdapterConfig::validate() const {
  if (input_dim == 0 || model_dim == 0) throw ConfigError("adapter dimensions must be positive");
  if (n_heads == 0) throw ConfigError("attention head count must be positive");
  if (model_dim % n_heads != 0) {
    throw ConfigError("model dimension " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (ff_multiplier == 0) throw ConfigError("feed-forward multiplier must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (window == 0) throw ConfigError("window capacity must be positive");
}

template <class T>
AdapterParams<T> AdapterParams<T>::zeros_like() const {
  AdapterParams out = *this;
  out.for_each([](const std::string&, Mat<T>& m) { m.setZero(); });
  return out;
}

template <class T>
std::size_t AdapterParams<T>::size() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
AdapterModel<T>::AdapterModel(AdapterConfig config, AdapterParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

template <class T>
std::uint64_t AdapterModel<T>::next_identity() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <class T>
AdapterModel<T> init(const AdapterConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  AdapterParams<T> p = allocate<T>(config);
  const double D = config.input_dim, d = config.model_dim, ff = d * config.ff_multiplier;
  fill_normal(p.reduce, 1.0 / std::sqrt(D), rng);
  if (p.positions.size() > 0) fill_normal(p.positions, 1.0 / std::sqrt(d), rng);
  for (auto& l : p.layers) {
    fill_normal(l.w_query, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w_key, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w_value, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w_out, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w_ff1, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w_ff2, 1.0 / std::sqrt(ff), rng);
  }
  fill_normal(p.head, 1.0 / std::sqrt(d), rng);
  return AdapterModel<T>(config, std::move(p));
}

template <class T>
ForwardTrace<T> forward(const AdapterModel<T>& model, Batch batch, bool training, std::mt19937_64* rng) {
  check_batch(model, batch);
  const auto& c = model.config();
  const auto& p = model.params();
  const bool dropout_on = training && c.dropout > 0.0;
  if (dropout_on && rng == nullptr) throw UsageError("training forward with dropout needs an RNG");

  const Eigen::Index dh = c.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ForwardTrace<T> trace;
  trace.model_identity = model.identity();
  trace.model_revision = model.revision();
  trace.samples.resize(batch.size());
  trace.probabilities.resize(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& sample = batch[b];
    trace.batch_ptrs.push_back(&sample);
    SampleTrace<T>& st = trace.samples[b];
    const Eigen::Index n = sample.valid();
    st.valid = sample.valid();
    trace.probabilities[b].assign(sample.capacity, T(0));
    if (n == 0) continue;  // fully padded sample

    st.inputs.resize(n, c.input_dim);
    for (Eigen::Index r = 0; r < n; ++r) {
      const float* src = sample.row(static_cast<std::uint32_t>(r));
      for (Eigen::Index k = 0; k < st.inputs.cols(); ++k) st.inputs(r, k) = static_cast<T>(src[k]);
    }

    Mat<T> h = st.inputs * p.reduce;
    if (uses_positions(c)) {
      if (c.positional == PositionalEncoding::Learned) h += p.positions.topRows(n);
      else h += sinusoidal_positions<T>(static_cast<std::uint32_t>(n), c.model_dim);
    }
    check_finite(h, "input reduction");

    st.layers.resize(c.n_layers);
    for (std::uint32_t li = 0; li < c.n_layers; ++li) {
      const auto& lp = p.layers[li];
      auto& lc = st.layers[li];
      const std::string where = "layer " + std::to_string(li);
      lc.input = h;

      layer_norm(h, lp.ln1_gain, lp.ln1_bias, lc.ln1, lc.ln1_out);
      lc.query = lc.ln1_out * lp.w_query;
      add_row_bias(lc.query, lp.b_query);
      lc.key = lc.ln1_out * lp.w_key;
      lc.value = lc.ln1_out * lp.w_value;
      add_row_bias(lc.value, lp.b_value);

      // Bidirectional: every valid position attends to every valid position.
      lc.context.resize(n, c.model_dim);
      lc.attention.resize(c.n_heads);
      for (std::uint32_t hd = 0; hd < c.n_heads; ++hd) {
        const auto q = lc.query.middleCols(hd * dh, dh);
        const auto k = lc.key.middleCols(hd * dh, dh);
        const auto v = lc.value.middleCols(hd * dh, dh);
        Mat<T> scores = (q * k.transpose()) * scale;
        for (Eigen::Index r = 0; r < n; ++r) {
          const T mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        lc.context.middleCols(hd * dh, dh) = scores * v;
        lc.attention[hd] = std::move(scores);
      }
      Mat<T> attn = lc.context * lp.w_out;
      add_row_bias(attn, lp.b_out);
      if (dropout_on) {
        lc.attn_drop = dropout_mask<T>(n, c.model_dim, c.dropout, *rng);
        attn.array() *= lc.attn_drop.array();
      }
      lc.mid = h + attn;
      check_finite(lc.mid, where + " attention");

      layer_norm(lc.mid, lp.ln2_gain, lp.ln2_bias, lc.ln2, lc.ln2_out);
      lc.ff_pre = lc.ln2_out * lp.w_ff1;
      add_row_bias(lc.ff_pre, lp.b_ff1);
      lc.ff_act = lc.ff_pre.unaryExpr([](T x) { return gelu(x); });
      Mat<T> ff = lc.ff_act * lp.w_ff2;
      add_row_bias(ff, lp.b_ff2);
      if (dropout_on) {
        lc.ff_drop = dropout_mask<T>(n, c.model_dim, c.dropout, *rng);
        ff.array() *= lc.ff_drop.array();
      }
      h = lc.mid + ff;
      check_finite(h, where + " feed-forward");
    }

    if (c.n_layers > 0) {
      layer_norm(h, p.final_gain, p.final_bias, st.final_ln, st.features);
    } else {
      st.features = std::move(h);
    }
    st.logits = (st.features * p.head).col(0);
    st.logits.array() += p.head_bias(0, 0);
    if (!st.logits.allFinite()) throw NumericError("non-finite activation in output head");

    auto& probs = trace.probabilities[b];
    for (Eigen::Index r = 0; r < n; ++r) probs[r] = sigmoid(st.logits(r));
  }
  return trace;
}

namespace {

std::size_t unmasked_count(Batch batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.valid();
  return n;
}

template <class T>
void check_trace(const ForwardTrace<T>& trace, Batch batch) {
  if (trace.samples.size() != batch.size()) throw UsageError("forward trace belongs to a different batch");
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (trace.batch_ptrs[b] != &batch[b] || trace.samples[b].valid != batch[b].valid()) {
      throw UsageError("forward trace belongs to a different batch");
    }
  }
}

}  // namespace

// Mean loss accumulated in T, so an extended-precision model gives an
// extended-precision loss.
template <class T>
T loss_in(const ForwardTrace<T>& trace, Batch batch) {
  check_trace(trace, batch);
  const std::size_t count = unmasked_count(batch);
  if (count == 0) throw NumericError("degenerate batch: every position is masked");
  T total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& st = trace.samples[b];
    for (std::uint32_t r = 0; r < st.valid; ++r) {
      const T z = st.logits(r);
      const T t = batch[b].labels[r];
      // -[t log s(z) + (1 - t) log(1 - s(z))] = softplus(z) - t z
      total += std::max(z, T(0)) - t * z + std::log1p(std::exp(-std::abs(z)));
    }
  }
  return total / static_cast<T>(count);
}

template <class T>
double loss(const ForwardTrace<T>& trace, Batch batch) {
  return static_cast<double>(loss_in<T>(trace, batch));
}

template <class T>
AdapterParams<T> backward(const AdapterModel<T>& model, const ForwardTrace<T>& trace, Batch batch) {
  if (trace.model_identity != model.identity() || trace.model_revision != model.revision()) {
    throw UsageError("stale forward trace: the model changed since forward");
  }
  check_trace(trace, batch);
  const std::size_t count = unmasked_count(batch);
  if (count == 0) throw NumericError("degenerate batch: every position is masked");

  const auto& c = model.config();
  const auto& p = model.params();
  const Eigen::Index dh = c.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T inv_count = T(1) / static_cast<T>(count);

  AdapterParams<T> g = p.zeros_like();

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& st = trace.samples[b];
    const Eigen::Index n = st.valid;
    if (n == 0) continue;

    Vec<T> dlogits(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      dlogits(r) = (sigmoid(st.logits(r)) - static_cast<T>(batch[b].labels[r])) * inv_count;
    }
    g.head.col(0) += st.features.transpose() * dlogits;
    g.head_bias(0, 0) += dlogits.sum();
    Mat<T> dh_stream = dlogits * p.head.col(0).transpose();

    if (c.n_layers > 0) {
      dh_stream = layer_norm_backward<T>(dh_stream, st.final_ln, p.final_gain, g.final_gain, g.final_bias);
    }

    for (std::uint32_t li = c.n_layers; li-- > 0;) {
      const auto& lp = p.layers[li];
      const auto& lc = st.layers[li];
      auto& lg = g.layers[li];

      // Feed-forward block.
      Mat<T> dff = dh_stream;
      if (lc.ff_drop.size() > 0) dff.array() *= lc.ff_drop.array();
      lg.w_ff2 += lc.ff_act.transpose() * dff;
      lg.b_ff2 += dff.colwise().sum();
      Mat<T> dact = dff * lp.w_ff2.transpose();
      Mat<T> dpre = dact.array() * lc.ff_pre.unaryExpr([](T x) { return gelu_grad(x); }).array();
      lg.w_ff1 += lc.ln2_out.transpose() * dpre;
      lg.b_ff1 += dpre.colwise().sum();
      Mat<T> dln2 = dpre * lp.w_ff1.transpose();
      Mat<T> dmid = dh_stream + layer_norm_backward<T>(dln2, lc.ln2, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias);

      // Attention block.
      Mat<T> dattn = dmid;
      if (lc.attn_drop.size() > 0) dattn.array() *= lc.attn_drop.array();
      lg.w_out += lc.context.transpose() * dattn;
      lg.b_out += dattn.colwise().sum();
      Mat<T> dcontext = dattn * lp.w_out.transpose();

      Mat<T> dq(n, c.model_dim), dk(n, c.model_dim), dv(n, c.model_dim);
      for (std::uint32_t hd = 0; hd < c.n_heads; ++hd) {
        const Mat<T>& a = lc.attention[hd];
        const auto dctx = dcontext.middleCols(hd * dh, dh);
        Mat<T> da = dctx * lc.value.middleCols(hd * dh, dh).transpose();
        dv.middleCols(hd * dh, dh) = a.transpose() * dctx;
        Vec<T> row_dot = (da.array() * a.array()).rowwise().sum();
        Mat<T> dscores = a.array() * (da.colwise() - row_dot).array();
        dq.middleCols(hd * dh, dh) = (dscores * lc.key.middleCols(hd * dh, dh)) * scale;
        dk.middleCols(hd * dh, dh) = (dscores.transpose() * lc.query.middleCols(hd * dh, dh)) * scale;
      }
      lg.w_query += lc.ln1_out.transpose() * dq;
      lg.b_query += dq.colwise().sum();
      lg.w_key += lc.ln1_out.transpose() * dk;
      lg.w_value += lc.ln1_out.transpose() * dv;
      lg.b_value += dv.colwise().sum();
      Mat<T> dln1 = dq * lp.w_query.transpose() + dk * lp.w_key.transpose() + dv * lp.w_value.transpose();
      dh_stream = dmid + layer_norm_backward<T>(dln1, lc.ln1, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias);
    }

    if (uses_positions(c) && c.positional == PositionalEncoding::Learned) g.positions.topRows(n) += dh_stream;
    // The frozen states are inputs, not parameters: the chain stops here.
    g.reduce += st.inputs.transpose() * dh_stream;
  }
  return g;
}

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace

double grad_check(const AdapterModel<double>& model, Batch batch, double eps, std::size_t max_params,
                  std::uint64_t seed) {
  auto trace = forward(model, batch, false);
  return grad_check(model, batch, eps, backward(model, trace, batch), max_params, seed);
}

double grad_check(const AdapterModel<double>& model, Batch batch, double eps, const AdapterParams<double>& analytic,
                  std::size_t max_params, std::uint64_t seed) {
  // Central differences in extended precision keep roundoff well below the
  // smallest gradients worth resolving.
  AdapterModel<long double> probe = model.cast<long double>();
  auto& params = probe.mutable_params();

  std::vector<std::pair<Mat<long double>*, Eigen::Index>> refs;
  params.for_each([&](const std::string&, Mat<long double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) refs.push_back({&m, i});
  });
  std::vector<const double*> analytic_values;
  analytic.for_each([&](const std::string&, const Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) analytic_values.push_back(m.data() + i);
  });
  if (analytic_values.size() != refs.size()) throw UsageError("gradient shape does not match the model");

  std::vector<std::size_t> order(refs.size());
  std::iota(order.begin(), order.end(), 0);
  if (max_params > 0 && max_params < order.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(max_params);
  }

  auto loss_at = [&] { return loss_in(forward(probe, batch, false), batch); };

  double worst = 0.0;
  for (std::size_t idx : order) {
    long double& value = refs[idx].first->data()[refs[idx].second];
    const long double saved = value;
    value = saved + eps;
    const long double plus = loss_at();
    value = saved - eps;
    const long double minus = loss_at();
    value = saved;
    const double numeric = static_cast<double>((plus - minus) / (2.0L * eps));
    worst = std::max(worst, relative_error(*analytic_values[idx], numeric));
  }
  return worst;
}

template struct AdapterParams<float>;
template struct AdapterParams<double>;
template class AdapterModel<float>;
template class AdapterModel<double>;
template struct AdapterParams<long double>;
template class AdapterModel<long double>;
template AdapterModel<float> init<float>(const AdapterConfig&, std::uint64_t);
template AdapterModel<double> init<double>(const AdapterConfig&, std::uint64_t);
template ForwardTrace<float> forward<float>(const AdapterModel<float>&, Batch, bool, std::mt19937_64*);
template ForwardTrace<double> forward<double>(const AdapterModel<double>&, Batch, bool, std::mt19937_64*);
template ForwardTrace<long double> forward<long double>(const AdapterModel<long double>&, Batch, bool,
                                                        std::mt19937_64*);
template double loss<float>(const ForwardTrace<float>&, Batch);
template double loss<double>(const ForwardTrace<double>&, Batch);
template AdapterParams<float> backward<float>(const AdapterModel<float>&, const ForwardTrace<float>&, Batch);
template AdapterParams<double> backward<double>(const AdapterModel<double>&, const ForwardTrace<double>&, Batch);

}  // namespace linefl::adapter
