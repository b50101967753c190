#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pqdl/data.hpp"
#include "pqdl/error.hpp"
#include "pqdl/hash.hpp"
#include "pqdl/prequential.hpp"
#include "pqdl/serialize.hpp"

namespace pqdl {

inline constexpr unsigned kDefaultPrecision = 16;
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'P', 'Q', 'D', 'L'};

/// Integer frequencies summing to exactly 2^precision, every entry >= 1.
struct FrequencyTable {
  unsigned precision = kDefaultPrecision;
  std::vector<std::uint32_t> freq;
  std::vector<std::uint32_t> cum;  // cum[k] = sum of freq[0..k); size K + 1

  std::uint32_t total() const noexcept { return std::uint32_t{1} << precision; }
  std::size_t size() const noexcept { return freq.size(); }
};

/// Largest-remainder rounding of `probs` (renormalized) to 2^precision,
/// with a minimum frequency of 1. Remainder ties go to the lower index.
inline FrequencyTable quantize(std::span<const double> probs,
                               unsigned precision = kDefaultPrecision) {
  if (precision < 2 || precision > 24) throw CodecError("precision must lie in [2, 24]");
  const std::size_t k = probs.size();
  const std::uint64_t total = std::uint64_t{1} << precision;
  if (k < 1 || k > total - k) throw CodecError("too many classes for the coder precision");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw CodecError("invalid probability");
    sum += p;
  }
  if (!(sum > 0.0)) throw CodecError("probabilities sum to zero");

  FrequencyTable t;
  t.precision = precision;
  t.freq.resize(k);
  std::vector<double> rem(k);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double target = probs[i] / sum * static_cast<double>(total);
    const double fl = std::floor(target);
    t.freq[i] = static_cast<std::uint32_t>(std::max(1.0, fl));
    rem[i] = target - static_cast<double>(t.freq[i]);
    assigned += t.freq[i];
  }
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  if (assigned < total) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % k, ++assigned) ++t.freq[idx[i]];
  } else if (assigned > total) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rem[a] < rem[b]; });
    while (assigned > total) {
      bool moved = false;
      for (std::size_t i = 0; i < k && assigned > total; ++i) {
        if (t.freq[idx[i]] > 1) {
          --t.freq[idx[i]];
          --assigned;
          moved = true;
        }
      }
      if (!moved) throw CodecError("cannot quantize distribution");
    }
  }
  t.cum.assign(k + 1, 0);
  for (std::size_t i = 0; i < k; ++i) t.cum[i + 1] = t.cum[i] + t.freq[i];
  return t;
}

class BitWriter {
 public:
  void put(bool bit) {
    if (bits_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
  }
  std::uint64_t bit_length() const noexcept { return bits_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

namespace detail {
inline constexpr std::uint64_t kTop = 0xFFFFFFFFULL;
inline constexpr std::uint64_t kHalf = 0x80000000ULL;
inline constexpr std::uint64_t kQuarter = 0x40000000ULL;
inline constexpr std::uint64_t kThreeQuarters = 0xC0000000ULL;
}  // namespace detail

/// Binary arithmetic coder with 32-bit low/high registers and deferred
/// (pending) bits for carry handling.
class ArithmeticEncoder {
 public:
  void encode(const FrequencyTable& t, std::size_t symbol) {
    if (finished_) throw CodecError("encoder already finished");
    if (symbol >= t.size()) throw CodecError("symbol outside frequency table");
    const std::uint64_t range = high_ - low_ + 1;
    high_ = low_ + ((range * t.cum[symbol + 1]) >> t.precision) - 1;
    low_ = low_ + ((range * t.cum[symbol]) >> t.precision);
    using namespace detail;
    for (;;) {
      if (high_ < kHalf) {
        emit(false);
      } else if (low_ >= kHalf) {
        emit(true);
        low_ -= kHalf;
        high_ -= kHalf;
      } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
        ++pending_;
        low_ -= kQuarter;
        high_ -= kQuarter;
      } else {
        break;
      }
      low_ <<= 1;
      high_ = (high_ << 1) | 1;
    }
  }

  /// Two bits pin a value inside the final interval; the decoder pads the
  /// stream with zeros.
  void finish() {
    if (finished_) return;
    ++pending_;
    emit(low_ >= detail::kQuarter);
    finished_ = true;
  }

  std::uint64_t bit_length() const noexcept { return out_.bit_length(); }
  std::vector<std::uint8_t> take_bytes() { return out_.take(); }

 private:
  void emit(bool bit) {
    out_.put(bit);
    for (; pending_ > 0; --pending_) out_.put(!bit);
  }

  std::uint64_t low_ = 0;
  std::uint64_t high_ = detail::kTop;
  std::uint64_t pending_ = 0;
  BitWriter out_;
  bool finished_ = false;
};

class ArithmeticDecoder {
 public:
  ArithmeticDecoder(std::span<const std::uint8_t> bytes, std::uint64_t bit_length)
      : bytes_(bytes), bit_length_(bit_length) {
    if ((bit_length + 7) / 8 > bytes.size()) throw CodecError("payload shorter than declared");
    for (int i = 0; i < 32; ++i) value_ = (value_ << 1) | next_bit();
  }

  std::size_t decode(const FrequencyTable& t) {
    using namespace detail;
    const std::uint64_t range = high_ - low_ + 1;
    if (value_ < low_ || value_ > high_) throw CodecError("corrupted bitstream");
    const std::uint64_t count = (((value_ - low_ + 1) << t.precision) - 1) / range;
    if (count >= t.total()) throw CodecError("corrupted bitstream");
    const auto it = std::upper_bound(t.cum.begin(), t.cum.end(), static_cast<std::uint32_t>(count));
    const auto symbol = static_cast<std::size_t>(std::distance(t.cum.begin(), it) - 1);
    high_ = low_ + ((range * t.cum[symbol + 1]) >> t.precision) - 1;
    low_ = low_ + ((range * t.cum[symbol]) >> t.precision);
    for (;;) {
      if (high_ < kHalf) {
      } else if (low_ >= kHalf) {
        low_ -= kHalf;
        high_ -= kHalf;
        value_ -= kHalf;
      } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
        low_ -= kQuarter;
        high_ -= kQuarter;
        value_ -= kQuarter;
      } else {
        break;
      }
      low_ <<= 1;
      high_ = (high_ << 1) | 1;
      value_ = (value_ << 1) | next_bit();
    }
    return symbol;
  }

 private:
  std::uint64_t next_bit() {
    if (pos_ >= bit_length_) {
      ++pos_;
      return 0;
    }
    const std::uint64_t bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return bit;
  }

  std::span<const std::uint8_t> bytes_;
  std::uint64_t bit_length_;
  std::uint64_t pos_ = 0;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = detail::kTop;
  std::uint64_t value_ = 0;
};

/// Container: "PQDL" | version u16 LE | header length u32 LE | header JSON |
/// payload (bit_length bits, zero-padded to a byte boundary).
struct EncodedMessage {
  json header;
  std::vector<std::uint8_t> payload;

  std::uint64_t bit_length() const { return header.at("bit_length").get<std::uint64_t>(); }
};

inline std::vector<std::uint8_t> serialize_message(const EncodedMessage& m) {
  const std::string head = m.header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(kFormatVersion & 0xff));
  out.push_back(static_cast<std::uint8_t>(kFormatVersion >> 8));
  const auto len = static_cast<std::uint32_t>(head.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), head.begin(), head.end());
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

inline EncodedMessage parse_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CodecError("not a PQDL message");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kFormatVersion)
    throw CodecError("unsupported message version " + std::to_string(version));
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t{bytes[6 + i]} << (8 * i);
  if (bytes.size() < 10 + std::size_t{len}) throw CodecError("truncated message header");
  EncodedMessage m;
  try {
    m.header = json::parse(bytes.begin() + 10, bytes.begin() + 10 + len);
  } catch (const json::exception& e) {
    throw CodecError(std::string("malformed message header: ") + e.what());
  }
  m.payload.assign(bytes.begin() + 10 + len, bytes.end());
  if (m.payload.size() != (m.bit_length() + 7) / 8)
    throw CodecError("payload length does not match declared bit length");
  return m;
}

inline void write_message(const std::string& path, const EncodedMessage& m) {
  const auto bytes = serialize_message(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CodecError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline EncodedMessage read_message(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CodecError("cannot read '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_message(bytes);
}

inline std::string inputs_checksum(const Matrix& inputs) {
  return hex64(Fnv1a().u64(inputs.rows()).u64(inputs.cols()).f64s(inputs.values()).value());
}

inline std::string labels_checksum(std::span<const std::size_t> labels) {
  Fnv1a h;
  h.u64(labels.size());
  for (std::size_t y : labels) h.u64(y);
  return hex64(h.value());
}

struct EncodeOptions {
  unsigned precision = kDefaultPrecision;
  /// Train every block twice and fail if the two parameter hashes differ.
  bool verify_determinism = false;
};

struct EncodeResult {
  EncodedMessage message;
  CodeLedger ledger;          // nats under the floored distributions p'
  double shannon_bits = 0.0;  // sum of -log2 q(y) under the quantized tables
};

/// Arithmetic-codes the labels of `dataset` along the prequential schedule,
/// sharing prequential_dl's training path. The header records everything
/// the receiver needs to replay the training, plus per-block model hashes.
inline EncodeResult encode_dataset(const Dataset& dataset, const ModelSpec& spec,
                                   const TrainingRecipe& recipe, const BlockSchedule& schedule,
                                   std::uint64_t seed, const EncodeOptions& options = {}) {
  if (dataset.size() > 0) dataset.validate();
  if (spec.num_classes != dataset.num_classes || spec.input.size() != dataset.inputs.cols())
    throw CodecError("model does not match dataset");
  EncodeResult out;
  ArithmeticEncoder enc;
  json block_hashes = json::array();
  const double uniform_nats = std::log(static_cast<double>(dataset.num_classes));
  CompensatedSum grand;
  walk_prequential(
      spec, recipe, dataset.inputs, dataset.shape, dataset.num_classes, schedule, seed,
      [&](std::size_t b, const std::vector<std::size_t>& rows, const BlockPrediction& pred) {
        if (options.verify_determinism && b > 0) {
          TrainingRecipe r = recipe;
          if (r.full_dataset_size == 0) r.full_dataset_size = dataset.size();
          const auto order = transmission_order(dataset.size(), seed);
          const std::size_t done = schedule.boundaries[b - 1];
          const Dataset prefix = dataset.subset(std::span(order).first(done));
          const Batch blk = dataset.batch(rows);
          if (predict_block(spec, r, prefix, blk.inputs, seed).model_hash != pred.model_hash)
            throw CodecError("training is not deterministic: model hash differs on replay");
        }
        block_hashes.push_back(hex64(pred.model_hash));
        BlockRecord rec;
        rec.n_train = b == 0 ? 0 : schedule.boundaries[b - 1];
        rec.example_indices = rows;
        rec.model_hash = pred.model_hash;
        rec.learning_rate = pred.learning_rate;
        rec.temperature = pred.temperature;
        std::vector<std::size_t> labels;
        CompensatedSum block;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const std::size_t y = dataset.labels[rows[i]];
          const FrequencyTable table = quantize(pred.probs.row(i), options.precision);
          enc.encode(table, y);
          out.shannon_bits += -std::log2(static_cast<double>(table.freq[y]) /
                                         static_cast<double>(table.total()));
          const double nats = b == 0 ? uniform_nats : -std::log(pred.probs(i, y));
          rec.nats.push_back(nats);
          block.add(nats);
          grand.add(nats);
          labels.push_back(y);
        }
        rec.total = block.value();
        out.ledger.blocks.push_back(std::move(rec));
        return labels;
      });
  out.ledger.total_nats = grand.value();
  if (dataset.size() > 0) enc.finish();

  json& h = out.message.header;
  h["format"] = "PQDL";
  h["version"] = kFormatVersion;
  h["dataset"] = {{"name", dataset.name},
                  {"provenance", dataset.provenance},
                  {"size", dataset.size()},
                  {"num_classes", dataset.num_classes},
                  {"shape", dataset.shape},
                  {"inputs_checksum", inputs_checksum(dataset.inputs)}};
  h["model"] = spec;
  h["spec_hash"] = hex64(json_hash(json(spec)));
  h["recipe"] = recipe;
  h["schedule"] = schedule;
  h["seed"] = seed;
  h["precision"] = options.precision;
  h["probability_floor"] = kProbabilityFloor;
  h["bit_length"] = enc.bit_length();
  h["block_hashes"] = block_hashes;
  h["trace_checksum"] = hex64(json_hash(block_hashes));
  h["label_checksum"] = labels_checksum(dataset.labels);
  out.message.payload = enc.take_bytes();
  return out;
}

/// Replays the sender's training from the decoded labels and returns the
/// labels in dataset row order. Any header, model-hash or checksum mismatch
/// raises CodecError.
inline std::vector<std::size_t> decode_dataset(const EncodedMessage& message,
                                               const Matrix& inputs) {
  const json& h = message.header;
  ModelSpec spec;
  TrainingRecipe recipe;
  BlockSchedule schedule;
  std::size_t n = 0;
  std::size_t k = 0;
  Shape shape;
  unsigned precision = kDefaultPrecision;
  std::uint64_t seed = 0;
  json block_hashes;
  try {
    if (h.at("format") != "PQDL" || h.at("version").get<std::uint16_t>() != kFormatVersion)
      throw CodecError("unsupported message format or version");
    spec = h.at("model").get<ModelSpec>();
    if (h.at("spec_hash").get<std::string>() != hex64(json_hash(h.at("model"))))
      throw CodecError("model spec hash mismatch");
    recipe = h.at("recipe").get<TrainingRecipe>();
    schedule = h.at("schedule").get<BlockSchedule>();
    n = h.at("dataset").at("size").get<std::size_t>();
    k = h.at("dataset").at("num_classes").get<std::size_t>();
    shape = h.at("dataset").at("shape").get<Shape>();
    precision = h.at("precision").get<unsigned>();
    seed = h.at("seed").get<std::uint64_t>();
    block_hashes = h.at("block_hashes");
    if (h.at("trace_checksum").get<std::string>() != hex64(json_hash(block_hashes)))
      throw CodecError("trace checksum mismatch");
  } catch (const json::exception& e) {
    throw CodecError(std::string("malformed message header: ") + e.what());
  }
  if (n == 0) return {};
  if (inputs.rows() != n || inputs.cols() != shape.size())
    throw CodecError("inputs do not match the message header");
  if (inputs_checksum(inputs) != h.at("dataset").at("inputs_checksum").get<std::string>())
    throw CodecError("inputs checksum mismatch");
  if (block_hashes.size() != schedule.blocks()) throw CodecError("block hash count mismatch");

  ArithmeticDecoder dec(message.payload, message.bit_length());
  std::vector<std::size_t> labels(n, 0);
  walk_prequential(spec, recipe, inputs, shape, k, schedule, seed,
                   [&](std::size_t b, const std::vector<std::size_t>& rows,
                       const BlockPrediction& pred) {
                     if (hex64(pred.model_hash) != block_hashes.at(b).get<std::string>())
                       throw CodecError("model hash mismatch in block " + std::to_string(b) +
                                        ": receiver training diverged");
                     std::vector<std::size_t> block;
                     for (std::size_t i = 0; i < rows.size(); ++i) {
                       const std::size_t y = dec.decode(quantize(pred.probs.row(i), precision));
                       labels[rows[i]] = y;
                       block.push_back(y);
                     }
                     return block;
                   });
  if (labels_checksum(labels) != h.at("label_checksum").get<std::string>())
    throw CodecError("label checksum mismatch: corrupted payload");
  return labels;
}

}  // namespace pqdl
