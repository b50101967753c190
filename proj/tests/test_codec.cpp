#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pqdl/codec.hpp"

using namespace pqdl;

namespace {

std::vector<double> random_distribution(Rng& rng, std::size_t k, double skew) {
  std::vector<double> p(k);
  double s = 0.0;
  for (double& x : p) s += (x = std::pow(rng.uniform(), skew));
  for (double& x : p) x /= s;
  return p;
}

TrainingRecipe quick_recipe() {
  TrainingRecipe r;
  r.optimizer.epochs = 4;
  r.optimizer.batch_size = 32;
  r.optimizer.learning_rates = {3e-3};
  return r;
}

}  // namespace

TEST(Quantize, UniformFour) {
  const std::vector<double> p(4, 0.25);
  const auto t = quantize(p, 16);
  EXPECT_EQ(t.freq, (std::vector<std::uint32_t>{16384, 16384, 16384, 16384}));
  EXPECT_EQ(t.cum.back(), 65536u);
}

TEST(Quantize, FlooredPointMassKeepsMinimumOne) {
  Matrix p = Matrix::from_rows({{1.0, 0.0}});
  apply_probability_floor(p);
  const auto t = quantize(p.row(0), 16);
  EXPECT_GE(t.freq[1], 1u);
  EXPECT_EQ(t.freq[0] + t.freq[1], 65536u);
  const std::vector<double> raw{1.0, 0.0, 0.0};
  const auto r = quantize(raw, 16);
  EXPECT_EQ(r.freq, (std::vector<std::uint32_t>{65534, 1, 1}));
}

TEST(Quantize, RandomTablesSumAndMonotone) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 2 + rng.below(300);
    const auto p = random_distribution(rng, k, 1.0 + 20.0 * rng.uniform());
    const auto t = quantize(p, 16);
    ASSERT_EQ(t.cum.back(), 65536u);
    for (std::size_t i = 0; i < k; ++i) {
      ASSERT_GE(t.freq[i], 1u);
      ASSERT_LT(t.cum[i], t.cum[i + 1]);
    }
  }
}

TEST(Quantize, RejectsImpossibleTables) {
  const std::vector<double> p(40000, 1.0 / 40000);
  EXPECT_THROW(quantize(p, 16), CodecError);
  const std::vector<double> bad{0.5, std::nan("")};
  EXPECT_THROW(quantize(bad, 16), CodecError);
}

TEST(Quantize, AmortizedExcessIsSmallUnderFloor) {
  Rng rng(2);
  double excess = 0.0;
  std::size_t count = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t k = 2 + rng.below(20);
    Matrix m(1, k);
    const auto p = random_distribution(rng, k, 3.0);
    std::copy(p.begin(), p.end(), m.values().begin());
    apply_probability_floor(m);
    const auto t = quantize(m.row(0), 16);
    // Expected excess when the symbol is drawn from p'.
    for (std::size_t y = 0; y < k; ++y)
      excess += m(0, y) * (std::log2(m(0, y)) - std::log2(t.freq[y] / 65536.0));
    ++count;
  }
  EXPECT_LE(excess / static_cast<double>(count), 0.001);
}

TEST(ArithmeticCoder, RandomRoundTrip) {
  Rng rng(3);
  std::vector<FrequencyTable> tables;
  std::vector<std::size_t> symbols;
  ArithmeticEncoder enc;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(50);
    tables.push_back(quantize(random_distribution(rng, k, 1.0 + 10 * rng.uniform()), 16));
    symbols.push_back(rng.below(k));
    enc.encode(tables.back(), symbols.back());
  }
  enc.finish();
  const auto bits = enc.bit_length();
  const auto bytes = enc.take_bytes();
  ArithmeticDecoder dec(bytes, bits);
  for (std::size_t i = 0; i < symbols.size(); ++i) ASSERT_EQ(dec.decode(tables[i]), symbols[i]) << i;
}

TEST(ArithmeticCoder, FairCoinCosts) {
  const std::vector<double> half{0.5, 0.5};
  const auto t = quantize(half, 16);
  ArithmeticEncoder one;
  one.encode(t, 1);
  one.finish();
  EXPECT_LE(one.bit_length(), 33u);

  Rng rng(4);
  ArithmeticEncoder enc;
  std::vector<std::size_t> sym;
  for (int i = 0; i < 10000; ++i) enc.encode(t, sym.emplace_back(rng.below(2)));
  enc.finish();
  const double per = static_cast<double>(enc.bit_length()) / 10000.0;
  EXPECT_GE(per, 1.0);
  EXPECT_LE(per, 1.001);
  const auto bits = enc.bit_length();
  const auto bytes = enc.take_bytes();
  ArithmeticDecoder dec(bytes, bits);
  for (std::size_t s : sym) ASSERT_EQ(dec.decode(t), s);
}

TEST(ArithmeticCoder, NearCertainSymbolIsAlmostFree) {
  const std::vector<double> p{1.0, 0.0, 0.0};
  const auto t = quantize(p, 16);
  ASSERT_EQ(t.freq[0], 65536u - 2u);
  ArithmeticEncoder enc;
  for (int i = 0; i < 10000; ++i) enc.encode(t, 0);
  enc.finish();
  EXPECT_LE(static_cast<double>(enc.bit_length()) / 10000.0, 0.001);
}

TEST(ArithmeticCoder, ShannonBoundSandwich) {
  Rng rng(5);
  ArithmeticEncoder enc;
  double shannon = 0.0;
  for (int i = 0; i < 5000; ++i) {
    const auto t = quantize(random_distribution(rng, 10, 4.0), 16);
    const std::size_t y = rng.below(10);
    shannon += -std::log2(t.freq[y] / 65536.0);
    enc.encode(t, y);
  }
  enc.finish();
  EXPECT_GE(static_cast<double>(enc.bit_length()), shannon);
  EXPECT_LE(static_cast<double>(enc.bit_length()), shannon + 32 + 1);
}

TEST(ArithmeticCoder, CorruptionIsDetectedOrChangesOutput) {
  Rng rng(6);
  const auto t = quantize(std::vector<double>{0.7, 0.2, 0.1}, 16);
  std::vector<std::size_t> sym;
  ArithmeticEncoder enc;
  for (int i = 0; i < 200; ++i) enc.encode(t, sym.emplace_back(rng.below(3)));
  enc.finish();
  const auto bits = enc.bit_length();
  auto bytes = enc.take_bytes();
  bytes[bytes.size() / 2] ^= 0x10;
  bool detected = false;
  try {
    ArithmeticDecoder dec(bytes, bits);
    for (std::size_t s : sym) detected |= dec.decode(t) != s;
  } catch (const CodecError&) {
    detected = true;
  }
  EXPECT_TRUE(detected);
}

TEST(Container, SerializeParseRoundTrip) {
  EncodedMessage m;
  m.header = {{"format", "PQDL"}, {"bit_length", 13}, {"x", 1}};
  m.payload = {0xAB, 0xC0};
  const auto bytes = serialize_message(m);
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PQDL");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  const auto back = parse_message(bytes);
  EXPECT_EQ(back.header, m.header);
  EXPECT_EQ(back.payload, m.payload);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_message(bad), CodecError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(parse_message(bad), CodecError);
}

TEST(EncodeDataset, UniformSingleBlockBinary) {
  const Dataset d = synth_mixture(2, 3, 150, 1.0, 1);
  const ModelSpec spec{d.shape, 2, {}};
  const auto r = encode_dataset(d, spec, quick_recipe(), BlockSchedule{{d.size()}}, 1);
  EXPECT_GE(r.message.bit_length(), d.size());
  EXPECT_LE(r.message.bit_length(), d.size() + 40);
  EXPECT_EQ(decode_dataset(r.message, d.inputs), d.labels);
}

TEST(EncodeDataset, EmptyDataset) {
  Dataset d = synth_mixture(2, 3, 1, 1.0, 1).subset(std::vector<std::size_t>{});
  const ModelSpec spec{d.shape, 2, {}};
  const auto r = encode_dataset(d, spec, quick_recipe(), BlockSchedule{}, 1);
  EXPECT_TRUE(r.message.payload.empty());
  EXPECT_EQ(r.message.bit_length(), 0u);
  EXPECT_TRUE(decode_dataset(r.message, d.inputs).empty());
}

class MixtureCodec : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data = new Dataset(synth_mixture(3, 6, 80, 3.0, 7));
    spec = new ModelSpec{data->shape, 3, {Dense{16, Activation::tanh}, Dropout{0.1}}};
    schedule = new BlockSchedule(BlockSchedule::geometric(6, data->size()));
    EncodeOptions opts;
    opts.verify_determinism = true;
    result = new EncodeResult(encode_dataset(*data, *spec, quick_recipe(), *schedule, 11, opts));
  }
  static void TearDownTestSuite() {
    delete data;
    delete spec;
    delete schedule;
    delete result;
  }
  static Dataset* data;
  static ModelSpec* spec;
  static BlockSchedule* schedule;
  static EncodeResult* result;
};
Dataset* MixtureCodec::data = nullptr;
ModelSpec* MixtureCodec::spec = nullptr;
BlockSchedule* MixtureCodec::schedule = nullptr;
EncodeResult* MixtureCodec::result = nullptr;

TEST_F(MixtureCodec, RoundTripThroughFile) {
  const auto path = (std::filesystem::temp_directory_path() / "pqdl_codec_test.pqdl").string();
  write_message(path, result->message);
  const auto back = read_message(path);
  std::filesystem::remove(path);
  EXPECT_EQ(decode_dataset(back, data->inputs), data->labels);
}

TEST_F(MixtureCodec, LengthMatchesPrequentialDl) {
  const auto pre = prequential_dl(*spec, quick_recipe(), *data, *schedule, 11);
  EXPECT_EQ(pre.dl_nats, result->ledger.total_nats);
  const double bits = static_cast<double>(result->message.bit_length());
  EXPECT_GE(bits, result->shannon_bits);
  EXPECT_LE(bits, result->shannon_bits + 32 + static_cast<double>(schedule->blocks()));
  EXPECT_LE(bits, pre.dl_nats / std::numbers::ln2 * (1 + 0x1p-10) + 64);
}

TEST_F(MixtureCodec, ReencodingIsByteIdentical) {
  const auto again = encode_dataset(*data, *spec, quick_recipe(), *schedule, 11);
  EXPECT_EQ(serialize_message(again.message), serialize_message(result->message));
}

TEST_F(MixtureCodec, TamperedPayloadIsRejected) {
  for (std::size_t at : {std::size_t{0}, result->message.payload.size() / 2}) {
    EncodedMessage m = result->message;
    m.payload[at] ^= 0x01;
    EXPECT_THROW(decode_dataset(m, data->inputs), CodecError) << "byte " << at;
  }
}

TEST_F(MixtureCodec, TamperedHeaderIsRejected) {
  EncodedMessage m = result->message;
  m.header["block_hashes"][1] = "0000000000000000";
  EXPECT_THROW(decode_dataset(m, data->inputs), CodecError);
  m = result->message;
  m.header["model"]["layers"][0]["width"] = 17;
  EXPECT_THROW(decode_dataset(m, data->inputs), CodecError);
  m = result->message;
  m.header["version"] = 2;
  EXPECT_THROW(decode_dataset(m, data->inputs), CodecError);
  Matrix other = data->inputs;
  other(0, 0) += 0.5;
  EXPECT_THROW(decode_dataset(result->message, other), CodecError);
}

TEST_F(MixtureCodec, HeaderCarriesReplayRecipe) {
  const auto& h = result->message.header;
  EXPECT_EQ(h.at("format"), "PQDL");
  EXPECT_EQ(h.at("schedule").get<std::vector<std::size_t>>(), schedule->boundaries);
  EXPECT_EQ(h.at("seed").get<std::uint64_t>(), 11u);
  EXPECT_EQ(h.at("block_hashes").size(), schedule->blocks());
}
