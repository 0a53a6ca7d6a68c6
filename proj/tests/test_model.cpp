#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "altpe/errors.hpp"
#include "altpe/model.hpp"
#include "altpe/training.hpp"

using namespace altpe;
using ad::Tensor;

namespace {

ModelConfig small_config(PeriodicKind kind = PeriodicKind::Sinusoidal) {
  ModelConfig c = ModelConfig::preset("desk");
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_layers = 2;
  c.max_len = 32;
  c.src_vocab_size = 12;
  c.tgt_vocab_size = 11;
  c.encoding = kind;
  return c;
}

std::vector<Example> random_examples(std::mt19937_64& rng, std::size_t n, int vocab,
                                     std::size_t max_len = 6) {
  std::uniform_int_distribution<int> tok(kNumSpecials, vocab - 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::vector<Example> out(n);
  for (auto& e : out) {
    e.src.resize(len(rng));
    e.tgt.resize(len(rng));
    for (auto& t : e.src) t = tok(rng);
    for (auto& t : e.tgt) t = tok(rng);
  }
  return out;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("transformer_model") {

TEST_CASE("config presets and validation") {
  const auto paper = ModelConfig::preset("paper-base");
  CHECK(paper.d_model == 512);
  CHECK(paper.n_layers == 6);
  CHECK(paper.n_heads == 8);
  CHECK(paper.d_ff == 2048);
  CHECK(paper.dropout_p == 0.1);
  const auto desk = ModelConfig::preset("desk");
  CHECK(desk.d_model == 64);
  CHECK(desk.n_layers == 2);
  CHECK(desk.n_heads == 4);
  CHECK(desk.d_ff == 256);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);

  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.d_model = 6;
  c.n_heads = 2;  // d_k = 3
  CHECK_NOTHROW(c.validate());
  c.rope_enabled = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  auto j = to_json(small_config());
  ModelConfig round;
  apply_json(round, j);
  CHECK(to_json(round) == j);
  CHECK_THROWS_AS(apply_json(round, nlohmann::json{{"d_modle", 3}}), ConfigError);
}

TEST_CASE("parameter count follows the architecture") {
  const auto c = small_config();
  const long d = c.d_model, f = c.d_ff, vs = c.src_vocab_size, vt = c.tgt_vocab_size;
  const long attn = 4 * (d * d + d), norm = 2 * d, ff = d * f + f + f * d + d;
  const long expected = vs * d + vt * d + c.n_layers * (attn + 2 * norm + ff) +
                        c.n_layers * (2 * attn + 3 * norm + ff) + d * vt + vt;
  CHECK(Transformer(c, 1).parameter_count() == static_cast<std::size_t>(expected));
  CHECK(Transformer(c, 1).parameter_count() == Transformer(c, 2).parameter_count());
}

TEST_CASE("forward shape and finiteness") {
  std::mt19937_64 rng(1);
  for (bool rope : {false, true}) {
    auto c = ModelConfig::preset("desk");
    c.src_vocab_size = 30;
    c.tgt_vocab_size = 25;
    c.rope_enabled = rope;
    const Transformer model(c, 7);
    const auto ex = random_examples(rng, 3, 25);
    const Batch b = make_batch(ex);
    const Tensor logits = model.forward(b, Mode::Eval);
    CHECK(logits.shape() == ad::Shape{3, b.tgt.cols - 1, 25});
    for (double v : logits.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("initialisation is seeded") {
  const auto c = small_config();
  const Transformer a(c, 3), b(c, 3), other(c, 4);
  CHECK(values(a.parameters()[0].tensor) == values(b.parameters()[0].tensor));
  CHECK(values(a.parameters()[0].tensor) != values(other.parameters()[0].tensor));
}

TEST_CASE("padded slots do not influence real positions") {
  std::mt19937_64 rng(2);
  const Transformer model(small_config(), 5);
  const std::vector<Example> ex{{{4, 5, 6, 7, 8}, {4, 5, 6, 7}}, {{9}, {10}}};
  const Batch b = make_batch(ex);
  Batch noisy = b;
  std::uniform_int_distribution<int> tok(kNumSpecials, 10);
  for (std::size_t i = 0; i < noisy.src.data.size(); ++i)
    if (noisy.src_pad_mask[i]) noisy.src.data[i] = tok(rng);
  for (std::size_t i = 0; i < noisy.tgt.data.size(); ++i)
    if (noisy.tgt_pad_mask[i]) noisy.tgt.data[i] = tok(rng);
  REQUIRE(noisy.src.data != b.src.data);

  const Tensor clean = model.forward(b, Mode::Eval);
  const Tensor perturbed = model.forward(noisy, Mode::Eval);
  const auto mask = b.decoder_input_pad_mask();
  const std::size_t vocab = 11;
  double worst = 0.0;
  for (std::size_t row = 0; row < mask.size(); ++row) {
    if (mask[row]) continue;
    worst = std::max(worst, max_abs_diff(clean.data().subspan(row * vocab, vocab),
                                         perturbed.data().subspan(row * vocab, vocab)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("without positions a repeated token looks the same everywhere") {
  Transformer model(small_config(), 8);
  const auto& cfg = model.positional_table().config();
  model.set_positional_table(PETable(cfg, Matrix(cfg.max_len, static_cast<std::size_t>(cfg.d_model))));
  const IdMatrix src{1, 6, std::vector<int>(6, 5)};
  const std::vector<bool> no_pad(6, false);
  const Tensor memory = model.encode(src, no_pad, Mode::Eval, nullptr);
  for (std::size_t t = 1; t < 6; ++t) {
    CHECK(max_abs_diff(memory.data().subspan(0, 16), memory.data().subspan(t * 16, 16)) <= 1e-12);
  }
  const IdMatrix tgt{1, 5, std::vector<int>(5, 6)};
  const Tensor logits = model.decode(tgt, std::vector<bool>(5, false), memory, src, no_pad, Mode::Eval, nullptr);
  for (std::size_t t = 1; t < 5; ++t) {
    CHECK(max_abs_diff(logits.data().subspan(0, 11), logits.data().subspan(t * 11, 11)) <= 1e-12);
  }
}

TEST_CASE("decoder is causal") {
  std::mt19937_64 rng(3);
  const Transformer model(small_config(), 9);
  const std::vector<Example> ex{{{4, 5, 6}, {4, 5, 6, 7, 8, 9}}};
  const Batch b = make_batch(ex);
  const Tensor base = model.forward(b, Mode::Eval);
  const std::size_t steps = b.tgt.cols - 1, vocab = 11;
  for (std::size_t t = 0; t + 1 < steps; ++t) {
    Batch changed = b;
    for (std::size_t c = t + 1; c < b.tgt.cols; ++c) changed.tgt(0, c) = 4 + static_cast<int>((c * 3) % 7);
    const Tensor out = model.forward(changed, Mode::Eval);
    CHECK(max_abs_diff(base.data().subspan(0, (t + 1) * vocab), out.data().subspan(0, (t + 1) * vocab)) <= 1e-12);
  }
}

TEST_CASE("every encoding makes the encoder position-aware") {
  const IdMatrix src{1, 4, {kSos, 5, 6, kEos}};
  const IdMatrix swapped{1, 4, {kSos, 6, 5, kEos}};
  const std::vector<bool> no_pad(4, false);
  const std::size_t d = 16;
  for (auto kind : kAllKinds) {
    CAPTURE(to_string(kind));
    for (bool rope : {false, true}) {
      auto c = small_config(kind);
      c.rope_enabled = rope;
      const Transformer model(c, 10);
      const Tensor a = model.encode(src, no_pad, Mode::Eval, nullptr);
      const Tensor b = model.encode(swapped, no_pad, Mode::Eval, nullptr);
      // Token 5 sits at position 1 in `a` and position 2 in `b`.
      CHECK(max_abs_diff(a.data().subspan(1 * d, d), b.data().subspan(2 * d, d)) > 1e-6);
    }
  }
  // Contrast: with the table zeroed, swapping only permutes the encoder rows.
  Transformer plain(small_config(), 10);
  const auto& cfg = plain.positional_table().config();
  plain.set_positional_table(PETable(cfg, Matrix(cfg.max_len, d)));
  const Tensor a = plain.encode(src, no_pad, Mode::Eval, nullptr);
  const Tensor b = plain.encode(swapped, no_pad, Mode::Eval, nullptr);
  CHECK(max_abs_diff(a.data().subspan(1 * d, d), b.data().subspan(2 * d, d)) <= 1e-12);
}

TEST_CASE("length and vocabulary errors") {
  const Transformer model(small_config(), 1);
  const std::vector<Example> too_long{{IdSeq(40, 5), {5}}};
  CHECK_THROWS_AS(model.forward(make_batch(too_long), Mode::Eval), LengthError);
  const std::vector<Example> bad_id{{{5, 99}, {5}}};
  CHECK_THROWS_AS(model.forward(make_batch(bad_id), Mode::Eval), DataError);
  ad::Tape::current().clear();
}

TEST_CASE("greedy decoding contract") {
  const Transformer model(small_config(), 11);
  CHECK(model.greedy_decode(IdSeq{4, 5, 6}, 0).empty());
  const auto out = model.greedy_decode(IdSeq{4, 5, 6}, 7);
  CHECK(out.size() <= 7);
  for (int t : out) CHECK(t != kEos);
  CHECK(model.greedy_decode(IdSeq{4, 5, 6}, 7) == out);
  const std::vector<IdSeq> many{{4, 5, 6}, {7}, {8, 9}};
  const auto batch = model.greedy_decode(many, 7);
  CHECK(batch[0] == out);
  CHECK(batch[1] == model.greedy_decode(IdSeq{7}, 7));
}

TEST_CASE("tiny batch overfits for every encoding") {
  std::mt19937_64 data_rng(4);
  const auto ex = random_examples(data_rng, 4, 11, 5);
  const Batch b = make_batch(ex);
  const auto targets = b.decoder_target();
  for (auto kind : kAllKinds) {
    CAPTURE(to_string(kind));
    Transformer model(small_config(kind), 12);
    TrainConfig tc = TrainConfig::preset("desk");
    Optimizer opt(model, tc);
    std::mt19937_64 rng(5);
    auto eval_loss = [&] {
      ad::NoGradGuard guard;
      const Tensor logits = ad::reshape(model.forward(b, Mode::Eval), {targets.size(), 11});
      return ad::cross_entropy_with_ignore(logits, targets, kPad).item();
    };
    const double before = eval_loss();
    for (int step = 0; step < 50; ++step) {
      const Tensor logits = model.forward(b, Mode::Train, &rng);
      ad::backward(ad::cross_entropy_with_ignore(ad::reshape(logits, {targets.size(), 11}), targets, kPad));
      opt.step(tc.lr_init);
    }
    CHECK(eval_loss() <= 0.5 * before);
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto dir = std::filesystem::temp_directory_path() / "altpe_model_test";
  std::filesystem::create_directories(dir);
  auto c = small_config(PeriodicKind::Sawtooth);
  c.rope_enabled = true;
  const Transformer model(c, 13);
  const Vocab sv = Vocab::from_tokens({"<sos>", "<eos>", "<unk>", "<pad>", "a", "b", "c", "d", "e", "f", "g", "h"});
  const Vocab tv = Vocab::from_tokens({"<sos>", "<eos>", "<unk>", "<pad>", "x", "y", "z", "u", "v", "w", "q"});
  save_checkpoint(dir / "m.ckpt", model, sv, tv);
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(to_json(back.model.config()) == to_json(c));
  CHECK(back.src_vocab.tokens() == sv.tokens());
  CHECK(back.tgt_vocab.tokens() == tv.tokens());
  REQUIRE(back.model.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(back.model.parameters()[i].name == model.parameters()[i].name);
    CHECK(values(back.model.parameters()[i].tensor) == values(model.parameters()[i].tensor));
  }
  const std::vector<Example> ex{{{4, 5, 6}, {4, 5}}};
  CHECK(values(back.model.forward(make_batch(ex), Mode::Eval)) ==
        values(model.forward(make_batch(ex), Mode::Eval)));

  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 8);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
