// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "hierform/config.hpp"
#include "hierform/io.hpp"
#include "oracles.hpp"

using namespace hierform;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hierform_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

FeatureSequence float_sequence(std::size_t t, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureSequence seq;
  seq.values = Matrix(t, d);
  // Values representable in f32, so the on-disk narrowing is lossless.
  for (double& v : seq.values.values()) v = static_cast<float>(oracle::random_matrix(1, 1, rng, -3, 3)(0, 0));
  seq.hop_ms = 12.5;
  return seq;
}

FeatureErrorCode decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_features(bytes);
  } catch (const FeatureFormatError& e) {
    return e.code();
  }
  FAIL("decode accepted malformed bytes");
  return FeatureErrorCode::io;
}

void put_f32(std::vector<std::uint8_t>& bytes, std::size_t offset, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("binary layout") {
  FeatureSequence seq;
  seq.values = Matrix::from_rows({{1.0, -2.0}});
  seq.hop_ms = 20.0;
  const std::vector<std::uint8_t> bytes = encode_features(seq);
  const std::vector<std::uint8_t> expected{'H', 'F', 'M', '1', 1, 0, 0, 0, 2, 0, 0, 0,
                                           0, 0, 0xA0, 0x41,            // 20.0f
                                           0, 0, 0x80, 0x3F,            // 1.0f
                                           0, 0, 0, 0xC0};              // -2.0f
  CHECK(bytes == expected);

  seq.label = 3;
  const std::vector<std::uint8_t> labeled = encode_features(seq);
  CHECK(labeled.size() == expected.size() + 8);
  CHECK(std::vector<std::uint8_t>(labeled.end() - 8, labeled.end()) ==
        std::vector<std::uint8_t>{0xFE, 0xFF, 0xFF, 0xFF, 3, 0, 0, 0});
}

TEST_CASE("round trips are bit-exact") {
  TempDir dir;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FeatureSequence seq = float_sequence(1 + seed * 7, 1 + seed * 3, seed);
    if (seed % 2 == 1) seq.label = static_cast<std::uint32_t>(seed);
    for (const char* name : {"a.hfm", "a.csv"}) {
      const fs::path path = dir.path / name;
      save_features(path, seq);
      const FeatureSequence back = load_features(path);
      CHECK(back.values == seq.values);
      CHECK(back.hop_ms == seq.hop_ms);
      CHECK(back.label == seq.label);
    }
    CHECK(decode_features(encode_features(seq)).values == seq.values);
    CHECK(parse_features_csv(format_features_csv(seq)).values == seq.values);
  }
}

TEST_CASE("malformed binary input has distinct error codes") {
  FeatureSequence seq = float_sequence(3, 2, 1);
  const std::vector<std::uint8_t> good = encode_features(seq);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{15}, good.size() - 1}) {
    std::vector<std::uint8_t> bytes(good.begin(), good.begin() + cut);
    const FeatureErrorCode code = decode_error(bytes);
    CHECK((code == FeatureErrorCode::truncated || (cut < 4 && code == FeatureErrorCode::bad_magic)));
  }
  CHECK(decode_error(std::vector<std::uint8_t>(good.begin(), good.end() - 1)) == FeatureErrorCode::truncated);

  std::vector<std::uint8_t> bytes = good;
  bytes[0] = 'X';
  CHECK(decode_error(bytes) == FeatureErrorCode::bad_magic);

  bytes = good;
  put_f32(bytes, 16 + 4 * 3, std::numeric_limits<float>::quiet_NaN());
  CHECK(decode_error(bytes) == FeatureErrorCode::non_finite);
  bytes = good;
  put_f32(bytes, 16, std::numeric_limits<float>::infinity());
  CHECK(decode_error(bytes) == FeatureErrorCode::non_finite);

  bytes = good;
  bytes[4] = 0;  // T = 0
  CHECK(decode_error(bytes) == FeatureErrorCode::bad_header);
  bytes = good;
  put_f32(bytes, 12, -1.0f);
  CHECK(decode_error(bytes) == FeatureErrorCode::bad_header);

  bytes = good;
  bytes.insert(bytes.end(), {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(decode_error(bytes) == FeatureErrorCode::bad_label);
  bytes = good;
  bytes.push_back(0);
  CHECK(decode_error(bytes) == FeatureErrorCode::truncated);
  seq.label = 1;
  bytes = encode_features(seq);
  bytes.push_back(0);
  CHECK(decode_error(bytes) == FeatureErrorCode::trailing_data);

  try {
    load_features("/nonexistent/hierform/file.hfm");
    FAIL("missing file loaded");
  } catch (const FeatureFormatError& e) {
    CHECK(e.code() == FeatureErrorCode::io);
  }
}

TEST_CASE("CSV fallback") {
  const FeatureSequence seq = parse_features_csv("2,3,10\n1,2,3\n4,5,6\n");
  CHECK(seq.values == Matrix::from_rows({{1, 2, 3}, {4, 5, 6}}));
  CHECK(seq.hop_ms == 10.0);
  CHECK_FALSE(seq.label.has_value());
  CHECK(parse_features_csv("1,1,20,2\n0.5\n").label == 2u);

  for (const char* bad : {"", "2,3\n", "2,3,10\n1,2,3\n", "1,2,10\n1\n", "1,1,10\nabc\n", "1,1,10\n1\n2\n"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_features_csv(bad), FeatureFormatError);
  }
  try {
    parse_features_csv("1,1,10\nnan\n");
    FAIL("nan accepted");
  } catch (const FeatureFormatError& e) {
    CHECK(e.code() == FeatureErrorCode::non_finite);
  }
}

TEST_CASE("pad or truncate") {
  const FeatureSequence full = float_sequence(326, 4, 2);
  PaddedSequence p = pad_or_truncate(full, 326);
  CHECK(p.sequence.values == full.values);
  CHECK(std::all_of(p.valid.begin(), p.valid.end(), [](bool v) { return v; }));

  const FeatureSequence longer = float_sequence(400, 4, 3);
  p = pad_or_truncate(longer, 326);
  CHECK(p.sequence.frames() == 326);
  for (std::size_t r = 0; r < 326; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.sequence.values(r, c) == longer.values(r, c));

  const FeatureSequence shorter = float_sequence(100, 4, 4);
  p = pad_or_truncate(shorter, 326);
  CHECK(p.sequence.frames() == 326);
  CHECK(std::count(p.valid.begin(), p.valid.end(), true) == 100);
  for (std::size_t r = 100; r < 326; ++r) {
    CHECK_FALSE(p.valid[r]);
    for (std::size_t c = 0; c < 4; ++c) CHECK(p.sequence.values(r, c) == 0.0);
  }

  CHECK_THROWS_AS(pad_or_truncate(full, 0), UsageError);
}

TEST_CASE("padded frames drop out of the pooled representation") {
  // Constant input, 100 real frames padded to 326.
  FeatureSequence seq;
  seq.values = Matrix(100, 8, 0.75);
  for (std::size_t r = 0; r < 100; ++r) seq.values(r, r % 8) = -1.0;
  const PaddedSequence padded = pad_or_truncate(seq, 326);

  ModelDims dims;
  dims.input_width = 8;
  dims.d = 8;
  dims.heads = 2;
  dims.classes = 3;
  for (std::size_t layers : {0u, 2u}) {
    const ModelParams model = init_baseline(dims, layers, 17);
    Tape t;
    ParameterStore store = model.store;
    ParamBinding bind(t, store);
    const Matrix masked =
        baseline_transformer_forward(bind, padded.sequence.values, padded.valid, model, layers).logits.value();
    const Matrix raw = baseline_transformer_forward(bind, seq.values, {}, model, layers).logits.value();
    CHECK(max_abs_diff(masked, raw) < 1e-12);
    if (layers == 0) {
      // Masked-mean oracle: classifier applied to the mean of the 100 real rows.
      Matrix mean(1, 8);
      for (std::size_t r = 0; r < 100; ++r)
        for (std::size_t c = 0; c < 8; ++c) mean(0, c) += seq.values(r, c) / 100.0;
      Matrix hidden = oracle::naive_matmul(mean, store.value(model.classifier.hidden.weight));
      for (std::size_t c = 0; c < hidden.cols(); ++c)
        hidden(0, c) = std::max(0.0, hidden(0, c) + store.value(model.classifier.hidden.bias)(0, c));
      Matrix logits = oracle::naive_matmul(hidden, store.value(model.classifier.output.weight));
      for (std::size_t c = 0; c < 3; ++c) logits(0, c) += store.value(model.classifier.output.bias)(0, c);
      CHECK(max_abs_diff(masked, logits) < 1e-12);
    }
  }
}

TEST_CASE("a 326 x 1024 file at 20 ms yields the corpus plan") {
  TempDir dir;
  FeatureSequence seq;
  seq.values = Matrix(326, 1024, 0.5);
  seq.hop_ms = 20.0;
  save_features(dir.path / "u.hfm", seq);
  const FeatureSequence back = load_features(dir.path / "u.hfm");
  const StagePlan plan = derive_stage_plan({}, back.hop_ms, back.frames());
  CHECK(plan.window == std::array<std::size_t, 3>{3, 7, 7});
  CHECK(plan.merge == std::array<std::size_t, 3>{3, 5, 4});
  CHECK(plan.length == std::array<std::size_t, 4>{326, 109, 22, 6});
  CHECK(plan.word_tokens == 7);
}

TEST_CASE("weights round trip and reject mismatches") {
  TempDir dir;
  ParameterStore a;
  std::mt19937_64 rng(5);
  a.add("w", oracle::random_matrix(3, 4, rng));
  a.add("b", oracle::random_matrix(1, 4, rng));
  save_weights(dir.path / "w.bin", a);

  ParameterStore b;
  b.add("w", Matrix(3, 4));
  b.add("b", Matrix(1, 4));
  load_weights(dir.path / "w.bin", b);
  for (std::size_t i = 0; i < 2; ++i) CHECK(b.value(b.id(i)) == a.value(a.id(i)));

  ParameterStore wrong_shape;
  wrong_shape.add("w", Matrix(4, 3));
  wrong_shape.add("b", Matrix(1, 4));
  CHECK_THROWS_AS(load_weights(dir.path / "w.bin", wrong_shape), UsageError);
  CHECK(wrong_shape.value(wrong_shape.id(1)) == Matrix(1, 4));

  ParameterStore wrong_name;
  wrong_name.add("w", Matrix(3, 4));
  wrong_name.add("bias", Matrix(1, 4));
  CHECK_THROWS_AS(load_weights(dir.path / "w.bin", wrong_name), UsageError);

  {
    std::ofstream out(dir.path / "bad.bin", std::ios::binary);
    out << "HFW1\x01";
  }
  CHECK_THROWS(load_weights(dir.path / "bad.bin", b));
  CHECK_THROWS(load_weights(dir.path / "missing.bin", b));
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.d == 1024);
  CHECK(c.heads == 8);
  CHECK(c.layers == std::array<std::size_t, 4>{2, 2, 4, 4});
  CHECK(c.max_len == 326);
  CHECK(c.hop_ms == 20.0);
  CHECK(c.durations.mismatch == 1.0);
  CHECK(c.ablations.unit_encoder);
  CHECK(c.ablations.word_encoder);
  CHECK(c.ablations.merging);
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(tiny_preset().validate());
  CHECK(config_keys().size() >= 20);
}

TEST_CASE("parsing a config file") {
  RunConfig c;
  apply_config_text(c,
                    "# comment\n"
                    "d = 64\n"
                    "heads=4\n"
                    "\n"
                    "layers=1,2,3,4\n"
                    "windows=5,9,11\n"
                    "merging=off\n"
                    "mismatch=2\n"
                    "pad_policy=none\n"
                    "lr=0.01\n");
  CHECK(c.d == 64);
  CHECK(c.heads == 4);
  CHECK(c.layers == std::array<std::size_t, 4>{1, 2, 3, 4});
  CHECK(c.windows == std::array<std::size_t, 3>{5, 9, 11});
  CHECK_FALSE(c.ablations.merging);
  CHECK(c.durations.mismatch == 2.0);
  CHECK(c.pad_policy == PadPolicy::none);
  CHECK(c.lr == 0.01);

  const StagePlan plan = derive_stage_plan(c.durations, c.hop_ms, 326, plan_overrides(c));
  CHECK(plan.window == std::array<std::size_t, 3>{5, 9, 11});
  CHECK(model_dims(c, 40).input_width == 40);
  CHECK(train_config(c).lr == 0.01);
}

TEST_CASE("overrides win over the file") {
  TempDir dir;
  {
    std::ofstream out(dir.path / "run.cfg");
    out << "d=32\nheads=4\nseed=3\n";
  }
  const RunConfig c = load_config(dir.path / "run.cfg", {"d=16", "seed=9"});
  CHECK(c.d == 16);
  CHECK(c.heads == 4);
  CHECK(c.seed == 9);
  const RunConfig tiny = load_config(std::nullopt, {"classes=3"}, tiny_preset());
  CHECK(tiny.d == 8);
  CHECK(tiny.classes == 3);
  CHECK_THROWS_AS(load_config(dir.path / "nope.cfg"), Error);
}

TEST_CASE("bad settings are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(apply_setting(c, "colour", "red"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "d", "-3"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "d", "12abc"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "layers", "1,2"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "merging", "maybe"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "pad_policy", "crop"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
  try {
    apply_config_text(c, "d=8\nbogus=1\n");
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config(std::nullopt, {"d=10", "heads=3"}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {"max_len=0"}), UsageError);
}

}  // TEST_SUITE
