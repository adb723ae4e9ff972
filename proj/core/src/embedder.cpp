#include "xvf/embedder.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "xvf/error.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

PoolingVariant parse_pooling(const std::string& name) {
  if (name == "stats") return PoolingVariant::kStats;
  if (name == "sa") return PoolingVariant::kSelfAttention;
  if (name == "ia") return PoolingVariant::kIvectorAttention;
  if (name == "ba") return PoolingVariant::kBaumWelchAttention;
  fail<ConfigError>("unknown pooling variant '", name, "' (expected stats, sa, ia or ba)");
}

LayerSpec parse_layer(const std::string& text) {
  std::istringstream in(text);
  std::string kind, conv;
  LayerSpec spec;
  in >> kind >> spec.out_channels >> spec.kernel_width >> spec.dilation >> spec.num_filter_sets >> conv;
  if (in.fail() || (kind != "tdnn" && kind != "mscnn") || (conv != "full" && conv != "separable")) {
    fail<ConfigError>("malformed layer spec '", text,
                      "' (expected: tdnn|mscnn channels width dilation sets full|separable)");
  }
  spec.kind = kind == "tdnn" ? LayerKind::kTdnn : LayerKind::kMscnn;
  spec.separable = conv == "separable";
  return spec;
}

constexpr std::string_view kModelKeys[] = {
    "preset",       "scale",          "input_dim",       "num_speakers", "dropout",
    "seed",         "frame_channels", "utterance_dims",  "layers",       "layer.*",
    "pooling",      "pooling.*",      "batchnorm.*",
};

}  // namespace

std::string_view pooling_name(PoolingVariant variant) {
  switch (variant) {
    case PoolingVariant::kStats: return "stats";
    case PoolingVariant::kSelfAttention: return "sa";
    case PoolingVariant::kIvectorAttention: return "ia";
    case PoolingVariant::kBaumWelchAttention: return "ba";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Configuration

void EmbedderConfig::validate() const {
  require<ConfigError>(input_dim >= 1, "embedder: input_dim must be positive");
  require<ConfigError>(!layers.empty(), "embedder: at least one frame-level layer is required");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    require<ConfigError>(l.out_channels >= 1, "embedder: layer ", i + 1, " has no channels");
    require<ConfigError>(l.kernel_width % 2 == 1, "embedder: layer ", i + 1,
                         " kernel width must be odd, got ", l.kernel_width);
    require<ConfigError>(l.dilation >= 1, "embedder: layer ", i + 1, " dilation must be >= 1");
    require<ConfigError>(l.num_filter_sets >= 1, "embedder: layer ", i + 1,
                         " needs at least one filter set");
    require<ConfigError>(l.kind == LayerKind::kMscnn || l.num_filter_sets == 1, "embedder: layer ",
                         i + 1, " is tdnn but has ", l.num_filter_sets, " filter sets");
    require<ConfigError>(l.out_channels % l.num_filter_sets == 0, "embedder: layer ", i + 1, " has ",
                         l.out_channels, " channels, not divisible by K = ", l.num_filter_sets);
  }
  require<ConfigError>(!utterance_dims.empty(), "embedder: need at least one utterance layer");
  require<ConfigError>(num_speakers >= 1, "embedder: num_speakers must be positive");
  require<ConfigError>(dropout >= 0.0 && dropout < 1.0, "embedder: dropout must be in [0, 1)");
  require<ConfigError>(bn_epsilon > 0.0, "embedder: batchnorm epsilon must be positive");
  const PoolingSpec& p = pooling;
  switch (p.variant) {
    case PoolingVariant::kStats: break;
    case PoolingVariant::kSelfAttention:
      require<ConfigError>(p.attention_hidden >= 1, "embedder: SA hidden size must be positive");
      break;
    case PoolingVariant::kIvectorAttention:
      require<ConfigError>(p.ivector_dim >= 1, "embedder: IA i-vector dimension must be positive");
      break;
    case PoolingVariant::kBaumWelchAttention:
      require<ConfigError>(p.num_components >= 1 && p.stats_dim >= 1 && p.key_dim >= 1 &&
                               p.stats_hidden >= 1,
                           "embedder: BA dimensions must be positive");
      break;
  }
}

std::string EmbedderConfig::to_text() const {
  std::ostringstream os;
  os << "preset = " << preset << '\n'
     << "input_dim = " << input_dim << '\n'
     << "layers = " << layers.size() << '\n';
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    os << "layer." << i << " = " << (l.kind == LayerKind::kTdnn ? "tdnn" : "mscnn") << ' '
       << l.out_channels << ' ' << l.kernel_width << ' ' << l.dilation << ' '
       << l.num_filter_sets << ' ' << (l.separable ? "separable" : "full") << '\n';
  }
  os << "pooling = " << pooling_name(pooling.variant) << '\n'
     << "pooling.attention_hidden = " << pooling.attention_hidden << '\n'
     << "pooling.ivector_dim = " << pooling.ivector_dim << '\n'
     << "pooling.num_components = " << pooling.num_components << '\n'
     << "pooling.stats_dim = " << pooling.stats_dim << '\n'
     << "pooling.num_keys = " << pooling.num_keys << '\n'
     << "pooling.key_dim = " << pooling.key_dim << '\n'
     << "pooling.stats_hidden = " << pooling.stats_hidden << '\n'
     << "utterance_dims = " << join(utterance_dims) << '\n'
     << "num_speakers = " << num_speakers << '\n'
     << "dropout = " << format_double(dropout) << '\n'
     << "batchnorm.momentum = " << format_double(bn_momentum) << '\n'
     << "batchnorm.epsilon = " << format_double(bn_epsilon) << '\n'
     << "seed = " << seed << '\n';
  return os.str();
}

EmbedderConfig EmbedderConfig::from_text(std::string_view text) {
  return embedder_config_from(KeyValueConfig::parse(text, "<model config>"));
}

std::vector<std::string> embedder_presets() {
  return {"baseline", "x-vector", "SA", "IA", "BA", "MS-1L", "MS-2L", "MS-3L", "MS-3L*", "BA+MS-3L"};
}

EmbedderConfig make_embedder_config(std::string_view preset, ModelScale scale) {
  const bool desk = scale == ModelScale::kDesk;
  EmbedderConfig c;
  c.preset = std::string(preset);
  const std::size_t hidden = desk ? 64 : 512;
  const std::size_t top = desk ? 192 : 1500;
  // Context of the Kaldi x-vector TDNN: widths 5,3,3,1,1 with dilations 1,2,3,1,1.
  c.layers = {
      {LayerKind::kTdnn, hidden, 5, 1, 1, false}, {LayerKind::kTdnn, hidden, 3, 2, 1, false},
      {LayerKind::kTdnn, hidden, 3, 3, 1, false}, {LayerKind::kTdnn, hidden, 1, 1, 1, false},
      {LayerKind::kTdnn, top, 1, 1, 1, false},
  };
  c.utterance_dims = desk ? std::vector<std::size_t>{128, 128} : std::vector<std::size_t>{512, 512};
  c.pooling.attention_hidden = desk ? 64 : 512;
  c.pooling.ivector_dim = desk ? 100 : 400;
  c.pooling.num_components = desk ? 64 : 512;
  c.pooling.stats_dim = c.input_dim;
  c.pooling.num_keys = 32;
  c.pooling.key_dim = desk ? 64 : 512;
  c.pooling.stats_hidden = desk ? 64 : 512;

  auto multi_scale = [&](std::size_t num_layers, std::size_t sets, std::size_t channels) {
    for (std::size_t i = 0; i < num_layers; ++i) {
      c.layers[i].kind = LayerKind::kMscnn;
      c.layers[i].num_filter_sets = sets;
      c.layers[i].separable = true;
      c.layers[i].out_channels = channels;
    }
  };

  if (preset == "baseline" || preset == "x-vector") {
  } else if (preset == "SA") {
    c.pooling.variant = PoolingVariant::kSelfAttention;
  } else if (preset == "IA") {
    c.pooling.variant = PoolingVariant::kIvectorAttention;
  } else if (preset == "BA") {
    c.pooling.variant = PoolingVariant::kBaumWelchAttention;
  } else if (preset == "MS-1L") {
    multi_scale(1, 2, hidden);
  } else if (preset == "MS-2L") {
    multi_scale(2, 2, hidden);
  } else if (preset == "MS-3L") {
    multi_scale(3, 2, hidden);
  } else if (preset == "MS-3L*") {
    multi_scale(3, 3, desk ? 96 : 756);
  } else if (preset == "BA+MS-3L") {
    multi_scale(3, 2, hidden);
    c.pooling.variant = PoolingVariant::kBaumWelchAttention;
  } else {
    fail<ConfigError>("unknown embedder preset '", preset, "'");
  }
  return c;
}

EmbedderConfig embedder_config_from(const KeyValueConfig& kv) {
  kv.require_known(kModelKeys);
  const std::string scale_name = kv.get("scale", "paper");
  require<ConfigError>(scale_name == "paper" || scale_name == "desk", "unknown model scale '",
                       scale_name, "' (expected paper or desk)");
  EmbedderConfig c = make_embedder_config(kv.get("preset", "baseline"),
                                          scale_name == "desk" ? ModelScale::kDesk : ModelScale::kPaper);
  c.input_dim = kv.get_size("input_dim", c.input_dim);
  c.pooling.stats_dim = c.input_dim;
  if (kv.contains("layers")) {
    const std::size_t n = kv.get_size("layers", 0);
    c.layers.clear();
    for (std::size_t i = 0; i < n; ++i) c.layers.push_back(parse_layer(kv.get("layer." + std::to_string(i))));
  }
  if (kv.contains("frame_channels")) {
    const auto channels = kv.get_sizes("frame_channels", {});
    require<ConfigError>(channels.size() == c.layers.size(), "frame_channels lists ",
                         channels.size(), " values for ", c.layers.size(), " layers");
    for (std::size_t i = 0; i < channels.size(); ++i) c.layers[i].out_channels = channels[i];
  }
  if (kv.contains("pooling")) c.pooling.variant = parse_pooling(kv.get("pooling"));
  c.pooling.attention_hidden = kv.get_size("pooling.attention_hidden", c.pooling.attention_hidden);
  c.pooling.ivector_dim = kv.get_size("pooling.ivector_dim", c.pooling.ivector_dim);
  c.pooling.num_components = kv.get_size("pooling.num_components", c.pooling.num_components);
  c.pooling.stats_dim = kv.get_size("pooling.stats_dim", c.pooling.stats_dim);
  c.pooling.num_keys = kv.get_size("pooling.num_keys", c.pooling.num_keys);
  c.pooling.key_dim = kv.get_size("pooling.key_dim", c.pooling.key_dim);
  c.pooling.stats_hidden = kv.get_size("pooling.stats_hidden", c.pooling.stats_hidden);
  c.utterance_dims = kv.get_sizes("utterance_dims", c.utterance_dims);
  c.num_speakers = kv.get_size("num_speakers", c.num_speakers);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.bn_momentum = kv.get_double("batchnorm.momentum", c.bn_momentum);
  c.bn_epsilon = kv.get_double("batchnorm.epsilon", c.bn_epsilon);
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Attention scoring

Var attention_scores_sa(const Var& frames, const Var& weight, const Var& bias, const Var& v) {
  const Shape& s = frames.shape();
  require<ShapeError>(s.size() == 3, "attention_scores_sa: frames must be [B, T, D]");
  require<ShapeError>(v.value().size() == weight.value().dim(0), "attention_scores_sa: v has ",
                      v.value().size(), " entries but W has ", weight.value().dim(0), " rows");
  const Var v_row = v.shape().size() == 2 ? v : reshape(v, {1, v.value().size()});
  const Var e = affine(tanh(affine(frames, weight, bias)), v_row, Var());
  return reshape(e, {s[0], s[1]});
}

Var attention_scores_ia(const Var& frames, const Var& key) { return cosine_scores(frames, key); }

Var attention_scores_ba(const Var& query_frames, const Var& stats,
                        const BaumWelchAttentionParams& p) {
  const Shape& qs = query_frames.shape();
  const Shape& ss = stats.shape();
  require<ShapeError>(qs.size() == 3 && ss.size() == 3 && qs[0] == ss[0],
                      "attention_scores_ba: expected query [B, T, D'] and stats [B, M, d], got ",
                      shape_string(qs), " and ", shape_string(ss));
  const std::size_t num_keys_total = ss[1] + p.keys.value().dim(0);
  require<ShapeError>(p.score_bias.value().size() == num_keys_total &&
                          p.score_weight.value().size() == num_keys_total,
                      "attention_scores_ba: score parameters expect ",
                      p.score_bias.value().size(), " keys, statistics give ", ss[1], " + ",
                      p.keys.value().dim(0));
  require<ShapeError>(p.stats_weight2.value().dim(0) == p.keys.value().dim(1),
                      "attention_scores_ba: transformed statistics have dimension ",
                      p.stats_weight2.value().dim(0), " but trainable keys have dimension ",
                      p.keys.value().dim(1));
  const Var query = tanh(affine(query_frames, p.query_weight, p.query_bias));
  const Var stats_keys = affine(tanh(affine(stats, p.stats_weight1, p.stats_bias1)), p.stats_weight2, Var());
  const Var keys = append_shared_rows(stats_keys, p.keys);
  const Var hidden = tanh(add_bias(batched_matmul_nt(query, keys), p.score_bias));
  const Var e = affine(hidden, p.score_weight, Var());
  return reshape(e, {qs[0], qs[1]});
}

// ---------------------------------------------------------------------------
// Model

std::size_t EmbedderModel::add_parameter(std::string name, Tensor value, bool trainable) {
  for (const auto& p : params_) {
    require(p.name != name, "duplicate parameter name '", name, "'");
  }
  params_.push_back(Parameter{std::move(name), Var::leaf(std::move(value), trainable), trainable});
  return params_.size() - 1;
}

EmbedderModel::EmbedderModel(EmbedderConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  auto normal = [&](Shape shape, double fan_in, double gain) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(gain / fan_in));
  };
  auto add_bn = [&](const std::string& prefix, std::size_t channels, std::size_t& gamma,
                    std::size_t& beta, std::size_t& bn) {
    gamma = add_parameter(prefix + ".bn.gamma", Tensor({channels}, 1.0));
    beta = add_parameter(prefix + ".bn.beta", Tensor({channels}, 0.0));
    bn = bn_states_.size();
    bn_states_.emplace_back(channels, config_.bn_momentum, config_.bn_epsilon);
    bn_names_.push_back(prefix + ".bn");
  };

  std::size_t in_ch = config_.input_dim;
  for (std::size_t l = 0; l < config_.layers.size(); ++l) {
    FrameLayer layer;
    layer.spec = config_.layers[l];
    const std::string prefix = "frame" + std::to_string(l + 1);
    const std::size_t width = layer.spec.kernel_width;
    const std::size_t lambda = layer.spec.set_channels();
    for (std::size_t k = 0; k < layer.spec.num_filter_sets; ++k) {
      const std::string set = prefix + ".set" + std::to_string(k + 1);
      if (layer.spec.separable) {
        layer.kernels.push_back(add_parameter(set + ".depthwise", normal({width, in_ch}, double(width), 1.0)));
        layer.pointwise.push_back(add_parameter(set + ".pointwise", normal({1, in_ch, lambda}, double(in_ch), 2.0)));
      } else {
        layer.kernels.push_back(add_parameter(set + ".kernel", normal({width, in_ch, lambda}, double(width * in_ch), 2.0)));
      }
      layer.biases.push_back(add_parameter(set + ".bias", Tensor({lambda}, 0.0)));
    }
    add_bn(prefix, layer.spec.out_channels, layer.gamma, layer.beta, layer.bn);
    frame_layers_.push_back(std::move(layer));
    in_ch = config_.layers[l].out_channels;
  }

  const std::size_t D = config_.frame_output_dim();
  const PoolingSpec& ps = config_.pooling;
  switch (ps.variant) {
    case PoolingVariant::kStats:
      break;
    case PoolingVariant::kSelfAttention:
      attention_ = {add_parameter("pool.sa.weight", normal({ps.attention_hidden, D}, double(D), 1.0)),
                    add_parameter("pool.sa.bias", Tensor({ps.attention_hidden}, 0.0)),
                    add_parameter("pool.sa.v", normal({1, ps.attention_hidden}, double(ps.attention_hidden), 1.0))};
      break;
    case PoolingVariant::kIvectorAttention:
      attention_ = {add_parameter("pool.ia.weight", normal({D, ps.ivector_dim}, double(ps.ivector_dim), 1.0)),
                    add_parameter("pool.ia.bias", Tensor({D}, 0.0))};
      break;
    case PoolingVariant::kBaumWelchAttention: {
      const std::size_t Dq = config_.penultimate_dim();
      const std::size_t total_keys = ps.num_components + ps.num_keys;
      attention_ = {
          add_parameter("pool.ba.query_weight", normal({ps.key_dim, Dq}, double(Dq), 1.0)),
          add_parameter("pool.ba.query_bias", Tensor({ps.key_dim}, 0.0)),
          add_parameter("pool.ba.v1", normal({ps.stats_hidden, ps.stats_dim}, double(ps.stats_dim), 1.0)),
          add_parameter("pool.ba.b1", Tensor({ps.stats_hidden}, 0.0)),
          add_parameter("pool.ba.v2", normal({ps.key_dim, ps.stats_hidden}, double(ps.stats_hidden), 1.0)),
          add_parameter("pool.ba.keys", normal({ps.num_keys, ps.key_dim}, double(ps.key_dim), 1.0)),
          add_parameter("pool.ba.score_bias", Tensor({total_keys}, 0.0)),
          add_parameter("pool.ba.v", normal({1, total_keys}, double(total_keys), 1.0)),
      };
      break;
    }
  }

  std::size_t in_dim = 2 * D;
  for (std::size_t i = 0; i < config_.utterance_dims.size(); ++i) {
    const std::size_t out = config_.utterance_dims[i];
    const std::string prefix = "utt" + std::to_string(i + 1);
    DenseLayer layer;
    layer.weight = add_parameter(prefix + ".weight", normal({out, in_dim}, double(in_dim), 2.0));
    layer.bias = add_parameter(prefix + ".bias", Tensor({out}, 0.0));
    add_bn(prefix, out, layer.gamma, layer.beta, layer.bn);
    utterance_layers_.push_back(layer);
    in_dim = out;
  }
  // Zero output layer: every class starts equiprobable.
  output_weight_ = add_parameter("output.weight", Tensor({config_.num_speakers, in_dim}, 0.0));
  output_bias_ = add_parameter("output.bias", Tensor({config_.num_speakers}, 0.0));
}

Parameter& EmbedderModel::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  fail("model has no parameter named '", name, "'");
}

const Parameter& EmbedderModel::parameter(std::string_view name) const {
  return const_cast<EmbedderModel*>(this)->parameter(name);
}

BaumWelchAttentionParams EmbedderModel::ba_params() const {
  return {var(attention_[0]), var(attention_[1]), var(attention_[2]), var(attention_[3]),
          var(attention_[4]), var(attention_[5]), var(attention_[6]), var(attention_[7])};
}

FrameOutputs EmbedderModel::frame_forward(const Var& features, Mode mode) {
  require<ShapeError>(features.value().cols() == config_.input_dim, "embedder: feature dimension ",
                      features.value().cols(), " does not match model input ", config_.input_dim);
  Var x = features;
  Var previous = features;
  for (const auto& layer : frame_layers_) {
    std::vector<Var> parts;
    for (std::size_t k = 0; k < layer.spec.num_filter_sets; ++k) {
      const std::size_t dil = layer.spec.set_dilation(k);
      Var y;
      if (layer.spec.separable) {
        y = conv1d(x, var(layer.kernels[k]), Var(), dil, ConvMode::kDepthwise);
        y = conv1d(y, var(layer.pointwise[k]), var(layer.biases[k]), 1, ConvMode::kPointwise);
      } else {
        y = conv1d(x, var(layer.kernels[k]), var(layer.biases[k]), dil, ConvMode::kFull);
      }
      parts.push_back(relu(y));
    }
    Var h = parts.size() == 1 ? parts.front() : concat_channels(parts);
    h = batchnorm(h, var(layer.gamma), var(layer.beta), bn_states_[layer.bn], mode);
    previous = x;
    x = h;
  }
  return {x, previous};
}

ForwardOutputs EmbedderModel::forward(const EmbedderInput& input, Mode mode, Rng* dropout_rng) {
  return forward_impl(input, mode, dropout_rng);
}

ForwardOutputs EmbedderModel::forward_impl(const EmbedderInput& input, Mode mode,
                                           Rng* dropout_rng) const {
  require<ShapeError>(input.features.rank() == 3, "embedder: features must be [B, T, d], got ",
                      shape_string(input.features.shape()));
  const std::size_t B = input.features.dim(0);
  ForwardOutputs out;
  out.frames = const_cast<EmbedderModel*>(this)->frame_forward(Var::constant(input.features), mode);

  const PoolingSpec& ps = config_.pooling;
  switch (ps.variant) {
    case PoolingVariant::kStats:
      break;
    case PoolingVariant::kSelfAttention:
      out.scores = attention_scores_sa(out.frames.last, var(attention_[0]), var(attention_[1]),
                                       var(attention_[2]));
      break;
    case PoolingVariant::kIvectorAttention: {
      require(!input.ivectors.empty(), "IA pooling requires an i-vector for every utterance");
      require<ShapeError>(input.ivectors.size() == B * ps.ivector_dim, "IA pooling: expected ",
                          B, " i-vectors of dimension ", ps.ivector_dim, ", got ",
                          shape_string(input.ivectors.shape()));
      const Var ivec = Var::constant(input.ivectors.reshaped({B, ps.ivector_dim}));
      const Var key = tanh(affine(ivec, var(attention_[0]), var(attention_[1])));
      out.scores = attention_scores_ia(out.frames.last, key);
      break;
    }
    case PoolingVariant::kBaumWelchAttention: {
      require(!input.stats.empty(), "BA pooling requires Baum-Welch statistics for every utterance");
      require<ShapeError>(input.stats.rank() == 3 && input.stats.dim(0) == B &&
                              input.stats.dim(1) == ps.num_components &&
                              input.stats.dim(2) == ps.stats_dim,
                          "BA pooling: statistics must be [", B, ", ", ps.num_components, ", ",
                          ps.stats_dim, "], got ", shape_string(input.stats.shape()));
      out.scores = attention_scores_ba(out.frames.penultimate, Var::constant(input.stats), ba_params());
      break;
    }
  }
  out.pooled = attentive_pool(out.frames.last, out.scores);

  Var h = out.pooled;
  for (std::size_t i = 0; i < utterance_layers_.size(); ++i) {
    const DenseLayer& layer = utterance_layers_[i];
    const Var a = affine(h, var(layer.weight), var(layer.bias));
    if (i == 0) out.embedding = a;
    h = batchnorm(relu(a), var(layer.gamma), var(layer.beta), bn_states_[layer.bn], mode);
    if (dropout_rng != nullptr) h = dropout(h, config_.dropout, *dropout_rng, mode);
  }
  out.logits = affine(h, var(output_weight_), var(output_bias_));
  return out;
}

EmbedderInput EmbedderModel::make_input(const FeatureMatrix& feats, const BwStats* stats,
                                        const Vector* ivector) const {
  EmbedderInput in;
  const std::size_t T = feats.num_frames();
  require(T > 0, "embedder: empty feature matrix");
  require<ShapeError>(feats.dim() == config_.input_dim, "embedder: feature dimension ", feats.dim(),
                      " does not match model input ", config_.input_dim);
  in.features = Tensor({1, T, feats.dim()},
                       std::vector<double>(feats.frames.data(), feats.frames.data() + feats.frames.size()));
  const PoolingSpec& ps = config_.pooling;
  if (ps.variant == PoolingVariant::kBaumWelchAttention) {
    require(stats != nullptr, "BA embedder requires Baum-Welch statistics");
    const RowMatrix& F = stats->first_order;
    in.stats = Tensor({1, static_cast<std::size_t>(F.rows()), static_cast<std::size_t>(F.cols())},
                      std::vector<double>(F.data(), F.data() + F.size()));
  }
  if (ps.variant == PoolingVariant::kIvectorAttention) {
    require(ivector != nullptr, "IA embedder requires an i-vector");
    in.ivectors = Tensor({1, static_cast<std::size_t>(ivector->size())},
                         std::vector<double>(ivector->data(), ivector->data() + ivector->size()));
  }
  return in;
}

Vector EmbedderModel::extract_embedding(const FeatureMatrix& feats, const BwStats* stats,
                                        const Vector* ivector) const {
  NoGradGuard no_grad;
  const ForwardOutputs out = forward_impl(make_input(feats, stats, ivector), Mode::kInference, nullptr);
  const Tensor& e = out.embedding.value();
  return Eigen::Map<const Vector>(e.ptr(), static_cast<Eigen::Index>(e.size()));
}

void EmbedderModel::save(Archive& archive, DType storage) const {
  archive.put_text("config", config_.to_text());
  for (const auto& p : params_) archive.put(p.name, p.value(), storage);
  for (std::size_t i = 0; i < bn_states_.size(); ++i) {
    archive.put(bn_names_[i] + ".running_mean", bn_states_[i].running_mean, storage);
    archive.put(bn_names_[i] + ".running_var", bn_states_[i].running_var, storage);
  }
}

EmbedderModel EmbedderModel::load(const Archive& archive) {
  EmbedderModel model(EmbedderConfig::from_text(archive.text("config")));
  for (auto& p : model.params_) {
    Tensor value = archive.tensor(p.name);
    require<IoError>(value.shape() == p.value().shape(), "parameter '", p.name, "' has shape ",
                     shape_string(value.shape()), " in the archive but the model expects ",
                     shape_string(p.value().shape()));
    p.var.mutable_value() = std::move(value);
  }
  for (std::size_t i = 0; i < model.bn_states_.size(); ++i) {
    model.bn_states_[i].running_mean = archive.tensor(model.bn_names_[i] + ".running_mean");
    model.bn_states_[i].running_var = archive.tensor(model.bn_names_[i] + ".running_var");
  }
  return model;
}

void EmbedderModel::save(const std::filesystem::path& path, DType storage) const {
  Archive archive;
  save(archive, storage);
  archive.save(path);
}

EmbedderModel EmbedderModel::load(const std::filesystem::path& path) {
  return load(Archive::load(path));
}

}  // namespace xvf
