// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace hierform {

namespace {

constexpr std::uint8_t kFeatureMagic[4] = {'H', 'F', 'M', '1'};
constexpr std::uint8_t kWeightMagic[4] = {'H', 'F', 'W', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, FeatureErrorCode short_code)
      : bytes_(bytes), short_code_(short_code) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FeatureFormatError(short_code_, "payload ends " + std::to_string(n - remaining()) +
                                                " bytes early");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  FeatureErrorCode short_code_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureFormatError(FeatureErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FeatureFormatError(FeatureErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FeatureFormatError(FeatureErrorCode::io, "write failed for " + path.string());
}

bool has_csv_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".csv";
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FeatureFormatError(FeatureErrorCode::bad_csv,
                             "line " + std::to_string(line) + ": not a number '" + text + "'");
  }
}

}  // namespace

const char* to_string(FeatureErrorCode code) {
  switch (code) {
    case FeatureErrorCode::io: return "io";
    case FeatureErrorCode::bad_magic: return "bad_magic";
    case FeatureErrorCode::truncated: return "truncated";
    case FeatureErrorCode::non_finite: return "non_finite";
    case FeatureErrorCode::bad_header: return "bad_header";
    case FeatureErrorCode::bad_label: return "bad_label";
    case FeatureErrorCode::trailing_data: return "trailing_data";
    case FeatureErrorCode::bad_csv: return "bad_csv";
  }
  return "unknown";
}

void FeatureSequence::validate() const {
  if (values.rows() < 1 || values.cols() < 1) {
    throw FeatureFormatError(FeatureErrorCode::bad_header, "need T >= 1 and d >= 1");
  }
  if (!(hop_ms > 0.0) || !std::isfinite(hop_ms)) {
    throw FeatureFormatError(FeatureErrorCode::bad_header, "hop_ms must be positive");
  }
  if (!values.all_finite()) throw FeatureFormatError(FeatureErrorCode::non_finite, "NaN/Inf in values");
  if (label && *label == kLabelSentinel) {
    throw FeatureFormatError(FeatureErrorCode::bad_label, "label collides with the sentinel");
  }
}

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
  seq.validate();
  std::vector<std::uint8_t> out(std::begin(kFeatureMagic), std::end(kFeatureMagic));
  out.reserve(16 + seq.values.size() * 4 + 8);
  put_u32(out, static_cast<std::uint32_t>(seq.frames()));
  put_u32(out, static_cast<std::uint32_t>(seq.width()));
  put_f32(out, static_cast<float>(seq.hop_ms));
  for (double v : seq.values.values()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw FeatureFormatError(FeatureErrorCode::non_finite, "value overflows f32");
    put_f32(out, f);
  }
  if (seq.label) {
    put_u32(out, kLabelSentinel);
    put_u32(out, *seq.label);
  }
  return out;
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kFeatureMagic), std::end(kFeatureMagic), bytes.begin())) {
    if (bytes.size() < 4) throw FeatureFormatError(FeatureErrorCode::truncated, "missing magic");
    throw FeatureFormatError(FeatureErrorCode::bad_magic, "expected HFM1");
  }
  Reader r(bytes.subspan(4), FeatureErrorCode::truncated);
  const std::uint32_t t = r.u32();
  const std::uint32_t d = r.u32();
  const float hop = r.f32();
  if (t == 0 || d == 0) throw FeatureFormatError(FeatureErrorCode::bad_header, "T and d must be >= 1");
  if (!(hop > 0.0f) || !std::isfinite(hop)) {
    throw FeatureFormatError(FeatureErrorCode::bad_header, "hop_ms must be positive");
  }
  const std::uint64_t count = static_cast<std::uint64_t>(t) * d;
  if (r.remaining() / 4 < count) {
    throw FeatureFormatError(FeatureErrorCode::truncated,
                             "expected " + std::to_string(count) + " values, found " +
                                 std::to_string(r.remaining() / 4));
  }
  FeatureSequence seq;
  seq.hop_ms = hop;
  seq.values = Matrix(t, d);
  for (double& v : seq.values.values()) {
    const float f = r.f32();
    if (!std::isfinite(f)) throw FeatureFormatError(FeatureErrorCode::non_finite, "NaN/Inf in payload");
    v = f;
  }
  if (r.remaining() > 0) {
    if (r.remaining() < 8) throw FeatureFormatError(FeatureErrorCode::truncated, "partial label block");
    if (r.u32() != kLabelSentinel) throw FeatureFormatError(FeatureErrorCode::bad_label, "bad label sentinel");
    seq.label = r.u32();
    if (r.remaining() > 0) {
      throw FeatureFormatError(FeatureErrorCode::trailing_data,
                               std::to_string(r.remaining()) + " unexpected trailing bytes");
    }
  }
  return seq;
}

FeatureSequence parse_features_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  const auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw FeatureFormatError(FeatureErrorCode::bad_csv, "empty file");
  const auto header = split_fields(line);
  if (header.size() != 3 && header.size() != 4) {
    throw FeatureFormatError(FeatureErrorCode::bad_header, "header must be T,d,hop_ms[,label]");
  }
  const double t = parse_number(header[0], lineno);
  const double d = parse_number(header[1], lineno);
  FeatureSequence seq;
  seq.hop_ms = parse_number(header[2], lineno);
  if (t < 1 || d < 1 || t != std::floor(t) || d != std::floor(d)) {
    throw FeatureFormatError(FeatureErrorCode::bad_header, "T and d must be positive integers");
  }
  if (header.size() == 4) {
    const double label = parse_number(header[3], lineno);
    if (label < 0 || label != std::floor(label) || label >= kLabelSentinel) {
      throw FeatureFormatError(FeatureErrorCode::bad_label, "label must be a small non-negative integer");
    }
    seq.label = static_cast<std::uint32_t>(label);
  }
  const auto rows = static_cast<std::size_t>(t), cols = static_cast<std::size_t>(d);
  seq.values = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!next_line()) {
      throw FeatureFormatError(FeatureErrorCode::truncated,
                               "expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
    }
    const auto fields = split_fields(line);
    if (fields.size() != cols) {
      throw FeatureFormatError(FeatureErrorCode::bad_csv, "line " + std::to_string(lineno) + ": expected " +
                                                              std::to_string(cols) + " values");
    }
    for (std::size_t c = 0; c < cols; ++c) seq.values(r, c) = parse_number(fields[c], lineno);
  }
  if (next_line()) throw FeatureFormatError(FeatureErrorCode::trailing_data, "rows beyond T");
  seq.validate();
  return seq;
}

std::string format_features_csv(const FeatureSequence& seq) {
  seq.validate();
  std::ostringstream os;
  os.precision(17);
  os << seq.frames() << ',' << seq.width() << ',' << seq.hop_ms;
  if (seq.label) os << ',' << *seq.label;
  os << '\n';
  for (std::size_t r = 0; r < seq.frames(); ++r) {
    for (std::size_t c = 0; c < seq.width(); ++c) os << (c ? "," : "") << seq.values(r, c);
    os << '\n';
  }
  return os.str();
}

FeatureSequence load_features(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (has_csv_extension(path)) return parse_features_csv(std::string(bytes.begin(), bytes.end()));
  return decode_features(bytes);
}

void save_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  if (has_csv_extension(path)) {
    const std::string text = format_features_csv(seq);
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } else {
    write_file(path, encode_features(seq));
  }
}

PaddedSequence pad_or_truncate(const FeatureSequence& seq, std::size_t max_frames) {
  if (max_frames < 1) throw UsageError("pad_or_truncate: max length must be >= 1");
  PaddedSequence out;
  out.sequence.hop_ms = seq.hop_ms;
  out.sequence.label = seq.label;
  out.sequence.values = Matrix(max_frames, seq.width());
  const std::size_t keep = std::min(max_frames, seq.frames());
  std::copy_n(seq.values.values().begin(), keep * seq.width(), out.sequence.values.values().begin());
  out.valid.assign(max_frames, false);
  std::fill_n(out.valid.begin(), keep, true);
  return out;
}

void save_weights(const std::filesystem::path& path, const ParameterStore& store) {
  std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamId id = store.id(i);
    const std::string& name = store.name(id);
    const Matrix& m = store.value(id);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  write_file(path, out);
}

void load_weights(const std::filesystem::path& path, ParameterStore& store) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 4 || !std::equal(std::begin(kWeightMagic), std::end(kWeightMagic), bytes.begin())) {
    throw FeatureFormatError(FeatureErrorCode::bad_magic, "expected HFW1 in " + path.string());
  }
  Reader r(std::span<const std::uint8_t>(bytes).subspan(4), FeatureErrorCode::truncated);
  const std::uint32_t count = r.u32();
  if (count != store.size()) {
    throw UsageError("weights: file holds " + std::to_string(count) + " tensors, model has " +
                     std::to_string(store.size()));
  }
  // Decode fully before touching the store.
  std::vector<Matrix> staged;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_bytes = r.take(r.u32());
    const std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rows = r.u32(), cols = r.u32();
    const Matrix& target = store.value(store.find(name));
    if (target.rows() != rows || target.cols() != cols || store.find(name).index != i) {
      throw UsageError("weights: tensor '" + name + "' does not match the model layout");
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) v = std::bit_cast<double>(r.u64());
    if (!m.all_finite()) throw FeatureFormatError(FeatureErrorCode::non_finite, "weights contain NaN/Inf");
    staged.push_back(std::move(m));
  }
  if (r.remaining() > 0) throw FeatureFormatError(FeatureErrorCode::trailing_data, "weights file");
  for (std::size_t i = 0; i < staged.size(); ++i) store.value(store.id(i)) = std::move(staged[i]);
}

}  // namespace hierform
