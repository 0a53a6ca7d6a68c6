#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "altpe/autodiff.hpp"
#include "altpe/data.hpp"
#include "altpe/periodic_kernels.hpp"
#include "altpe/positional_encoding.hpp"
#include "altpe/rope.hpp"

namespace altpe {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  double dropout_p = 0.1;
  int max_len = 256;
  int src_vocab_size = 0;
  int tgt_vocab_size = 0;
  PeriodicKind encoding = PeriodicKind::Sinusoidal;
  double pe_base = 10000.0;
  /// Multiply token embeddings by sqrt(d_model) before adding the encoding.
  bool embed_scaling = true;
  /// Inject positions through the block transform in self-attention instead
  /// of the additive table.
  bool rope_enabled = false;
  double rope_base = 10000.0;

  /// "desk" (d_model 64, 2 layers, 4 heads, d_ff 256) or "paper-base"
  /// (512, 6, 8, 2048). Both use dropout 0.1. Throws ConfigError otherwise.
  static ModelConfig preset(std::string_view name);

  int d_k() const { return d_model / n_heads; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
/// Overwrites the fields present in `j`; unknown keys raise ConfigError.
void apply_json(ModelConfig& config, const nlohmann::json& j);

enum class Mode { Train, Eval };

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

/// Post-norm encoder-decoder transformer.
class Transformer {
 public:
  /// Xavier-uniform weights, zero biases, unit layer-norm gains; deterministic in seed.
  Transformer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::span<const NamedTensor> parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Logits of shape [B, T_tgt - 1, tgt_vocab] for teacher-forced decoding of
  /// batch.tgt. `rng` drives dropout and is required in Train mode.
  ad::Tensor forward(const Batch& batch, Mode mode, std::mt19937_64* rng = nullptr) const;

  /// Encoder output [B*T_src, d_model].
  ad::Tensor encode(const IdMatrix& src, const std::vector<bool>& src_pad, Mode mode,
                    std::mt19937_64* rng) const;
  /// Decoder logits [B*T, tgt_vocab] given encoder memory.
  ad::Tensor decode(const IdMatrix& tgt_in, const std::vector<bool>& tgt_pad,
                    const ad::Tensor& memory, const IdMatrix& src,
                    const std::vector<bool>& src_pad, Mode mode, std::mt19937_64* rng) const;

  /// Greedy autoregressive decoding of every source sequence (ids without
  /// specials). Stops a row at <eos> (not included) or after max_steps tokens.
  std::vector<IdSeq> greedy_decode(std::span<const IdSeq> sources, std::size_t max_steps) const;
  IdSeq greedy_decode(const IdSeq& source, std::size_t max_steps) const;

  /// Replaces the additive positional table (used by tests to zero it).
  void set_positional_table(PETable table);
  const PETable& positional_table() const { return pe_table_; }

 private:
  struct Linear {
    ad::Tensor weight;  // [in, out]
    ad::Tensor bias;    // [out]
  };
  struct Norm {
    ad::Tensor gamma;
    ad::Tensor beta;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    Attention self_attn;
    Norm norm1, norm2;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    Attention self_attn, cross_attn;
    Norm norm1, norm2, norm3;
    Linear ff1, ff2;
  };

  Linear make_linear(const std::string& name, int in, int out, std::mt19937_64& rng);
  Norm make_norm(const std::string& name, int width);
  Attention make_attention(const std::string& name, std::mt19937_64& rng);

  ad::Tensor embed(const ad::Tensor& table, const IdMatrix& ids, Mode mode,
                   std::mt19937_64* rng) const;
  ad::Tensor attention(const Attention& w, const ad::Tensor& q_in, const ad::Tensor& kv_in,
                       std::size_t batch, const ad::Tensor& mask, bool rotary) const;
  ad::Tensor feed_forward(const Linear& ff1, const Linear& ff2, const ad::Tensor& x) const;
  ad::Tensor residual_norm(const ad::Tensor& x, const ad::Tensor& sub, const Norm& norm,
                           Mode mode, std::mt19937_64* rng) const;

  ModelConfig config_;
  PETable pe_table_;
  RopeCoefficients rope_;
  std::vector<NamedTensor> params_;
  ad::Tensor src_embedding_, tgt_embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Linear output_;
};

/// Everything needed to resume evaluation: model plus both vocabularies.
struct Checkpoint {
  Transformer model;
  Vocab src_vocab;
  Vocab tgt_vocab;
};

/// Binary container, little-endian:
///   8 bytes  magic "ALTPECKP"
///   u32      format version (1)
///   u64      header length N
///   N bytes  UTF-8 JSON header {config, src_vocab, tgt_vocab, parameters:[{name, shape}]}
///   float64  parameter values, concatenated in header order
void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const Vocab& src_vocab, const Vocab& tgt_vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace altpe
