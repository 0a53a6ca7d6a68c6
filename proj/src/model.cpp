#include "altpe/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "altpe/errors.hpp"

namespace altpe {

using ad::Tensor;

// ---- configuration -------------------------------------------------------------

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "desk") {
    c.d_model = 64;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 256;
  } else if (name == "paper-base") {
    c.d_model = 512;
    c.n_layers = 6;
    c.n_heads = 8;
    c.d_ff = 2048;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) +
                      "' (expected desk or paper-base)");
  }
  c.dropout_p = 0.1;
  return c;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (n_layers < 1 || d_ff < 1) throw ConfigError("n_layers and d_ff must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (src_vocab_size <= kNumSpecials || tgt_vocab_size <= kNumSpecials) {
    throw ConfigError("vocabulary sizes must exceed the four special tokens");
  }
  if (rope_enabled && d_k() % 2 != 0) {
    throw ConfigError("rope needs an even per-head width d_model / n_heads");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"dropout_p", c.dropout_p},
          {"max_len", c.max_len},
          {"src_vocab_size", c.src_vocab_size},
          {"tgt_vocab_size", c.tgt_vocab_size},
          {"encoding", std::string(to_string(c.encoding))},
          {"pe_base", c.pe_base},
          {"embed_scaling", c.embed_scaling},
          {"rope_enabled", c.rope_enabled},
          {"rope_base", c.rope_base}};
}

void apply_json(ModelConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "d_model") c.d_model = value.get<int>();
      else if (key == "n_layers") c.n_layers = value.get<int>();
      else if (key == "n_heads") c.n_heads = value.get<int>();
      else if (key == "d_ff") c.d_ff = value.get<int>();
      else if (key == "dropout_p") c.dropout_p = value.get<double>();
      else if (key == "max_len") c.max_len = value.get<int>();
      else if (key == "src_vocab_size") c.src_vocab_size = value.get<int>();
      else if (key == "tgt_vocab_size") c.tgt_vocab_size = value.get<int>();
      else if (key == "encoding") c.encoding = parse_kind(value.get<std::string>());
      else if (key == "pe_base") c.pe_base = value.get<double>();
      else if (key == "embed_scaling") c.embed_scaling = value.get<bool>();
      else if (key == "rope_enabled") c.rope_enabled = value.get<bool>();
      else if (key == "rope_base") c.rope_base = value.get<double>();
      else throw ConfigError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

// ---- construction ----------------------------------------------------------------

namespace {

std::vector<double> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = dist(rng);
  return w;
}

PEConfig pe_config(const ModelConfig& c) {
  return {c.d_model, c.max_len, c.pe_base, c.encoding};
}

// Additive mask [B, Tq, Tk]: padded keys, and keys after the query when causal.
Tensor attention_mask(std::size_t batch, std::size_t tq, std::size_t tk,
                      const std::vector<bool>& key_pad, bool causal) {
  std::vector<double> m(batch * tq * tk, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk; ++j) {
        if (key_pad[b * tk + j] || (causal && j > i)) m[(b * tq + i) * tk + j] = ad::kMaskedLogit;
      }
  return Tensor::from({batch, tq, tk}, std::move(m));
}

}  // namespace

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed)
    : config_(config), pe_table_(build_table(pe_config(config))) {
  config_.validate();
  if (config_.rope_enabled) {
    rope_ = rope_coefficients({config_.d_k(), config_.rope_base, config_.encoding},
                              static_cast<std::size_t>(config_.max_len));
  }
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(config_.d_model);
  auto embedding = [&](const std::string& name, int vocab) {
    const auto v = static_cast<std::size_t>(vocab);
    Tensor t = Tensor::from({v, d}, xavier(v, d, rng), true);
    params_.push_back({name, t});
    return t;
  };
  src_embedding_ = embedding("src_embedding", config_.src_vocab_size);
  tgt_embedding_ = embedding("tgt_embedding", config_.tgt_vocab_size);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm1 = make_norm(p + "norm1", config_.d_model);
    layer.ff1 = make_linear(p + "ff1", config_.d_model, config_.d_ff, rng);
    layer.ff2 = make_linear(p + "ff2", config_.d_ff, config_.d_model, rng);
    layer.norm2 = make_norm(p + "norm2", config_.d_model);
    encoder_.push_back(std::move(layer));
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l) + ".";
    DecoderLayer layer;
    layer.self_attn = make_attention(p + "self_attn", rng);
    layer.norm1 = make_norm(p + "norm1", config_.d_model);
    layer.cross_attn = make_attention(p + "cross_attn", rng);
    layer.norm2 = make_norm(p + "norm2", config_.d_model);
    layer.ff1 = make_linear(p + "ff1", config_.d_model, config_.d_ff, rng);
    layer.ff2 = make_linear(p + "ff2", config_.d_ff, config_.d_model, rng);
    layer.norm3 = make_norm(p + "norm3", config_.d_model);
    decoder_.push_back(std::move(layer));
  }
  output_ = make_linear("output", config_.d_model, config_.tgt_vocab_size, rng);
}

Transformer::Linear Transformer::make_linear(const std::string& name, int in, int out,
                                             std::mt19937_64& rng) {
  const auto i = static_cast<std::size_t>(in), o = static_cast<std::size_t>(out);
  Linear l{Tensor::from({i, o}, xavier(i, o, rng), true), Tensor::zeros({o}, true)};
  params_.push_back({name + ".weight", l.weight});
  params_.push_back({name + ".bias", l.bias});
  return l;
}

Transformer::Norm Transformer::make_norm(const std::string& name, int width) {
  const auto w = static_cast<std::size_t>(width);
  Norm n{Tensor::from({w}, std::vector<double>(w, 1.0), true), Tensor::zeros({w}, true)};
  params_.push_back({name + ".gamma", n.gamma});
  params_.push_back({name + ".beta", n.beta});
  return n;
}

Transformer::Attention Transformer::make_attention(const std::string& name,
                                                   std::mt19937_64& rng) {
  Attention a;
  a.q = make_linear(name + ".q", config_.d_model, config_.d_model, rng);
  a.k = make_linear(name + ".k", config_.d_model, config_.d_model, rng);
  a.v = make_linear(name + ".v", config_.d_model, config_.d_model, rng);
  a.o = make_linear(name + ".o", config_.d_model, config_.d_model, rng);
  return a;
}

std::size_t Transformer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Transformer::set_positional_table(PETable table) {
  if (table.d_model() != static_cast<std::size_t>(config_.d_model) ||
      table.max_len() < static_cast<std::size_t>(config_.max_len)) {
    throw ShapeError("positional table does not match the model configuration");
  }
  pe_table_ = std::move(table);
}

// ---- forward pass ------------------------------------------------------------------

Tensor Transformer::embed(const Tensor& table, const IdMatrix& ids, Mode mode,
                          std::mt19937_64* rng) const {
  if (ids.cols > static_cast<std::size_t>(config_.max_len)) {
    throw LengthError("sequence length " + std::to_string(ids.cols) + " exceeds max_len " +
                      std::to_string(config_.max_len));
  }
  const auto d = static_cast<std::size_t>(config_.d_model);
  Tensor x = ad::embedding_lookup(table, ids.data);
  if (config_.embed_scaling) x = ad::scale(x, std::sqrt(static_cast<double>(d)));
  if (!config_.rope_enabled) {
    std::vector<double> pe(ids.rows * ids.cols * d);
    for (std::size_t b = 0; b < ids.rows; ++b) {
      for (std::size_t t = 0; t < ids.cols; ++t) {
        const auto row = pe_table_.row(t);
        std::copy(row.begin(), row.end(), pe.begin() + static_cast<std::ptrdiff_t>((b * ids.cols + t) * d));
      }
    }
    x = ad::add(x, Tensor::from(x.shape(), std::move(pe)));
  }
  if (mode == Mode::Train) x = ad::dropout(x, config_.dropout_p, *rng, true);
  return x;
}

Tensor Transformer::attention(const Attention& w, const Tensor& q_in, const Tensor& kv_in,
                              std::size_t batch, const Tensor& mask, bool rotary) const {
  const auto heads = static_cast<std::size_t>(config_.n_heads);
  auto project = [](const Linear& l, const Tensor& x) {
    return ad::add_bias(ad::matmul(x, l.weight), l.bias);
  };
  Tensor q = ad::split_heads(project(w.q, q_in), batch, heads);
  Tensor k = ad::split_heads(project(w.k, kv_in), batch, heads);
  Tensor v = ad::split_heads(project(w.v, kv_in), batch, heads);
  if (rotary) {
    q = ad::block_rotate(q, rope_);
    k = ad::block_rotate(k, rope_);
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(config_.d_k()));
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dk);
  Tensor probs = ad::softmax(scores, mask);
  Tensor context = ad::merge_heads(ad::matmul(probs, v), batch, heads);
  return project(w.o, context);
}

Tensor Transformer::feed_forward(const Linear& ff1, const Linear& ff2, const Tensor& x) const {
  Tensor h = ad::relu(ad::add_bias(ad::matmul(x, ff1.weight), ff1.bias));
  return ad::add_bias(ad::matmul(h, ff2.weight), ff2.bias);
}

Tensor Transformer::residual_norm(const Tensor& x, const Tensor& sub, const Norm& norm,
                                  Mode mode, std::mt19937_64* rng) const {
  Tensor s = mode == Mode::Train ? ad::dropout(sub, config_.dropout_p, *rng, true) : sub;
  return ad::layer_norm(ad::add(x, s), norm.gamma, norm.beta);
}

Tensor Transformer::encode(const IdMatrix& src, const std::vector<bool>& src_pad, Mode mode,
                           std::mt19937_64* rng) const {
  if (mode == Mode::Train && rng == nullptr) {
    throw ContractError("training-mode forward needs a random generator");
  }
  Tensor x = embed(src_embedding_, src, mode, rng);
  const Tensor mask = attention_mask(src.rows, src.cols, src.cols, src_pad, false);
  for (const auto& layer : encoder_) {
    x = residual_norm(x, attention(layer.self_attn, x, x, src.rows, mask, config_.rope_enabled),
                      layer.norm1, mode, rng);
    x = residual_norm(x, feed_forward(layer.ff1, layer.ff2, x), layer.norm2, mode, rng);
  }
  return x;
}

Tensor Transformer::decode(const IdMatrix& tgt_in, const std::vector<bool>& tgt_pad,
                           const Tensor& memory, const IdMatrix& src,
                           const std::vector<bool>& src_pad, Mode mode,
                           std::mt19937_64* rng) const {
  if (mode == Mode::Train && rng == nullptr) {
    throw ContractError("training-mode forward needs a random generator");
  }
  const std::size_t batch = tgt_in.rows;
  Tensor y = embed(tgt_embedding_, tgt_in, mode, rng);
  const Tensor self_mask = attention_mask(batch, tgt_in.cols, tgt_in.cols, tgt_pad, true);
  const Tensor cross_mask = attention_mask(batch, tgt_in.cols, src.cols, src_pad, false);
  for (const auto& layer : decoder_) {
    y = residual_norm(y, attention(layer.self_attn, y, y, batch, self_mask, config_.rope_enabled),
                      layer.norm1, mode, rng);
    y = residual_norm(y, attention(layer.cross_attn, y, memory, batch, cross_mask, false),
                      layer.norm2, mode, rng);
    y = residual_norm(y, feed_forward(layer.ff1, layer.ff2, y), layer.norm3, mode, rng);
  }
  return ad::add_bias(ad::matmul(y, output_.weight), output_.bias);
}

Tensor Transformer::forward(const Batch& batch, Mode mode, std::mt19937_64* rng) const {
  const Tensor memory = encode(batch.src, batch.src_pad_mask, mode, rng);
  const IdMatrix tgt_in = batch.decoder_input();
  const Tensor logits = decode(tgt_in, batch.decoder_input_pad_mask(), memory, batch.src,
                               batch.src_pad_mask, mode, rng);
  return ad::reshape(logits, {tgt_in.rows, tgt_in.cols,
                              static_cast<std::size_t>(config_.tgt_vocab_size)});
}

std::vector<IdSeq> Transformer::greedy_decode(std::span<const IdSeq> sources,
                                              std::size_t max_steps) const {
  std::vector<IdSeq> out(sources.size());
  if (sources.empty() || max_steps == 0) return out;
  ad::NoGradGuard no_grad;
  std::vector<Example> examples;
  for (const auto& s : sources) examples.push_back({s, {}});
  const Batch batch = make_batch(examples);
  const Tensor memory = encode(batch.src, batch.src_pad_mask, Mode::Eval, nullptr);

  const std::size_t rows = sources.size();
  const auto vocab = static_cast<std::size_t>(config_.tgt_vocab_size);
  const std::size_t steps =
      std::min(max_steps, static_cast<std::size_t>(config_.max_len) - 1);
  std::vector<bool> done(rows, false);
  IdMatrix prefix{rows, 1, std::vector<int>(rows, kSos)};
  for (std::size_t step = 0; step < steps; ++step) {
    const std::vector<bool> no_pad(rows * prefix.cols, false);
    const Tensor logits =
        decode(prefix, no_pad, memory, batch.src, batch.src_pad_mask, Mode::Eval, nullptr);
    const auto values = logits.data();
    IdMatrix next{rows, prefix.cols + 1, {}};
    next.data.reserve(rows * next.cols);
    bool all_done = true;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = values.subspan((r * prefix.cols + prefix.cols - 1) * vocab, vocab);
      const int arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (!done[r]) {
        if (arg == kEos) {
          done[r] = true;
        } else {
          out[r].push_back(arg);
        }
      }
      all_done = all_done && done[r];
      for (std::size_t c = 0; c < prefix.cols; ++c) next.data.push_back(prefix(r, c));
      next.data.push_back(arg);
    }
    if (all_done) break;
    prefix = std::move(next);
  }
  return out;
}

IdSeq Transformer::greedy_decode(const IdSeq& source, std::size_t max_steps) const {
  return greedy_decode(std::span<const IdSeq>(&source, 1), max_steps).front();
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'L', 'T', 'P', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const Vocab& src_vocab, const Vocab& tgt_vocab) {
  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["src_vocab"] = src_vocab.tokens();
  header["tgt_vocab"] = tgt_vocab.tokens();
  auto& params = header["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters()) {
    const auto data = p.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint header is truncated");

  try {
    const auto header = nlohmann::json::parse(text);
    ModelConfig config;
    apply_json(config, header.at("config"));
    Checkpoint ck{Transformer(config, 0),
                  Vocab::from_tokens(header.at("src_vocab").get<std::vector<std::string>>()),
                  Vocab::from_tokens(header.at("tgt_vocab").get<std::vector<std::string>>())};
    const auto& params = header.at("parameters");
    const auto expected = ck.model.parameters();
    if (params.size() != expected.size()) throw DataError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      auto tensor = expected[i].tensor;
      if (params[i].at("name").get<std::string>() != expected[i].name ||
          params[i].at("shape").get<ad::Shape>() != tensor.shape()) {
        throw DataError("checkpoint parameter '" + expected[i].name + "' does not match");
      }
      auto data = tensor.mutable_data();
      in.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
      if (!in) throw DataError("checkpoint parameter data is truncated");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace altpe
