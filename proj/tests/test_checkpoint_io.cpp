#include "ckmerge/checkpoint_io.hpp"

#include <cstring>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace ckmerge;
using testutil::TempDir;

namespace {

// Builds checkpoint bytes by hand, independent of CheckpointWriter.
std::string raw_checkpoint(const std::string& header_json, const std::string& data) {
  std::string out;
  const std::uint64_t len = header_json.size();
  out.resize(8);
  std::memcpy(out.data(), &len, 8);
  out += header_json;
  out += data;
  return out;
}

std::string f32_bytes(std::initializer_list<float> values) {
  std::string out(values.size() * 4, '\0');
  std::size_t i = 0;
  for (float v : values) {
    std::memcpy(out.data() + 4 * i, &v, 4);
    ++i;
  }
  return out;
}

TensorMap sample_map() {
  TensorMap map;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
  auto values = [&](std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = dist(rng);
    return v;
  };
  map.add(make_record("layer.0.weight", Dtype::F32, {4, 3}, values(12)));
  map.add(make_record("layer.0.bias", Dtype::F16, {4}, values(4)));
  map.add(make_record("layer.1.weight", Dtype::BF16, {2, 2}, values(4)));
  map.add(make_record("layer.1.scale", Dtype::F64, {3}, values(3)));
  map.add(make_record("empty", Dtype::F32, {0, 7}, {}));
  map.metadata["format"] = "test";
  map.metadata["origin"] = "sample_map";
  return map;
}

TEST(CheckpointRead, HandCraftedSingleTensor) {
  TempDir dir("ckpt");
  const std::string header =
      R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})";
  testutil::write_file(dir / "a.st", raw_checkpoint(header, f32_bytes({1.0f, 0.0f, 0.0f, 1.0f})));
  const TensorMap map = read_checkpoint(dir / "a.st");
  ASSERT_EQ(map.tensors.size(), 1u);
  const TensorRecord& rec = map.tensors.at("w");
  EXPECT_EQ(rec.dtype, Dtype::F32);
  EXPECT_EQ(rec.shape, (std::vector<std::int64_t>{2, 2}));
  EXPECT_EQ(rec.to_f32(), (std::vector<float>{1.0f, 0.0f, 0.0f, 1.0f}));
  EXPECT_TRUE(map.metadata.empty());
}

TEST(CheckpointRead, EmptyTensorList) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "empty.st", raw_checkpoint("{}", ""));
  const TensorMap map = read_checkpoint(dir / "empty.st");
  EXPECT_TRUE(map.tensors.empty());
}

TEST(CheckpointRead, MetadataOnly) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "m.st", raw_checkpoint(R"({"__metadata__":{"k":"v"}})", ""));
  const TensorMap map = read_checkpoint(dir / "m.st");
  EXPECT_TRUE(map.tensors.empty());
  EXPECT_EQ(map.metadata.at("k"), "v");
}

TEST(CheckpointRead, RejectsTruncatedLengthField) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "bad.st", "\x02\x00");
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsOversizedHeaderLength) {
  TempDir dir("ckpt");
  std::string blob(8, '\0');
  blob[0] = '\xFF';
  blob[1] = '\xFF';
  testutil::write_file(dir / "bad.st", blob + "{}");
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsInvalidJson) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "bad.st", raw_checkpoint("{not json", ""));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsNonObjectHeader) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "bad.st", raw_checkpoint("[1,2]", ""));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsDuplicateTensorNames) {
  TempDir dir("ckpt");
  const std::string header =
      R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
      R"("w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, f32_bytes({1.0f, 2.0f})));
  try {
    read_checkpoint(dir / "bad.st");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("\"w\""), std::string::npos);
  }
}

TEST(CheckpointRead, RejectsUnknownDtype) {
  TempDir dir("ckpt");
  const std::string header = R"({"w":{"dtype":"I8","shape":[4],"data_offsets":[0,4]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcd"));
  try {
    read_checkpoint(dir / "bad.st");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("I8"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("\"w\""), std::string::npos);
  }
}

TEST(CheckpointRead, RejectsNegativeShape) {
  TempDir dir("ckpt");
  const std::string header = R"({"w":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcd"));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsOutOfBoundsOffsets) {
  TempDir dir("ckpt");
  const std::string header = R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcd"));  // only 4 data bytes
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsOverlappingOffsets) {
  TempDir dir("ckpt");
  const std::string header =
      R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
      R"("b":{"dtype":"F32","shape":[1],"data_offsets":[2,6]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcdef"));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsGapsBetweenTensors) {
  TempDir dir("ckpt");
  const std::string header =
      R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
      R"("b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, f32_bytes({1, 2, 3})));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsTrailingGarbage) {
  TempDir dir("ckpt");
  const std::string header = R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcdEXTRA"));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsSizeMismatchedOffsets) {
  TempDir dir("ckpt");
  const std::string header = R"({"w":{"dtype":"F32","shape":[3],"data_offsets":[0,4]}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcd"));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsUnknownEntryField) {
  TempDir dir("ckpt");
  const std::string header =
      R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4],"extra":1}})";
  testutil::write_file(dir / "bad.st", raw_checkpoint(header, "abcd"));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointRead, RejectsNonStringMetadataValue) {
  TempDir dir("ckpt");
  testutil::write_file(dir / "bad.st", raw_checkpoint(R"({"__metadata__":{"k":3}})", ""));
  EXPECT_THROW(read_checkpoint(dir / "bad.st"), FormatError);
}

TEST(CheckpointWrite, RoundTripsBitExactly) {
  TempDir dir("ckpt");
  const TensorMap map = sample_map();
  write_checkpoint(map, dir / "out.st");
  const TensorMap back = read_checkpoint(dir / "out.st");
  EXPECT_TRUE(map == back);
  for (const auto& [name, rec] : map.tensors)
    EXPECT_EQ(rec.data, back.tensors.at(name).data) << name;
}

TEST(CheckpointWrite, EmptyMapRoundTrips) {
  TempDir dir("ckpt");
  write_checkpoint(TensorMap{}, dir / "out.st");
  EXPECT_TRUE(read_checkpoint(dir / "out.st").tensors.empty());
}

TEST(CheckpointWrite, WritesAreByteDeterministic) {
  TempDir dir("ckpt");
  const TensorMap map = sample_map();
  write_checkpoint(map, dir / "a.st");
  write_checkpoint(map, dir / "b.st");
  EXPECT_EQ(testutil::read_file(dir / "a.st"), testutil::read_file(dir / "b.st"));
}

TEST(CheckpointWrite, HeaderKeysAreLexicographic) {
  TempDir dir("ckpt");
  TensorMap map;
  map.add(make_record("zz", Dtype::F32, {1}, std::vector<float>{1.0f}));
  map.add(make_record("aa", Dtype::F32, {1}, std::vector<float>{2.0f}));
  map.add(make_record("mm", Dtype::F32, {1}, std::vector<float>{3.0f}));
  write_checkpoint(map, dir / "out.st");
  const std::string blob = testutil::read_file(dir / "out.st");
  const auto aa = blob.find("\"aa\"");
  const auto mm = blob.find("\"mm\"");
  const auto zz = blob.find("\"zz\"");
  EXPECT_LT(aa, mm);
  EXPECT_LT(mm, zz);
  // data offsets follow the same order
  const TensorMap back = read_checkpoint(dir / "out.st");
  EXPECT_EQ(back.tensors.at("aa").to_f32()[0], 2.0f);
  EXPECT_EQ(back.tensors.at("zz").to_f32()[0], 1.0f);
}

TEST(CheckpointWrite, ZeroElementTensorsRoundTrip) {
  TempDir dir("ckpt");
  TensorMap map;
  map.add(make_record("a", Dtype::F32, {0}, {}));
  map.add(make_record("b", Dtype::F16, {2, 0, 3}, {}));
  write_checkpoint(map, dir / "out.st");
  const TensorMap back = read_checkpoint(dir / "out.st");
  EXPECT_EQ(back.tensors.at("a").elements(), 0u);
  EXPECT_EQ(back.tensors.at("b").shape, (std::vector<std::int64_t>{2, 0, 3}));
}

TEST(CheckpointReaderApi, ServesHeaderWithoutTouchingData) {
  TempDir dir("ckpt");
  write_checkpoint(sample_map(), dir / "out.st");
  CheckpointReader reader(dir / "out.st");
  EXPECT_EQ(reader.tensors().size(), 5u);
  EXPECT_EQ(reader.metadata().at("format"), "test");
  // names arrive sorted
  for (std::size_t i = 1; i < reader.tensors().size(); ++i)
    EXPECT_LT(reader.tensors()[i - 1].name, reader.tensors()[i].name);
}

TEST(CheckpointWrite, RefusesRecordBufferMismatch) {
  TensorMap map;
  TensorRecord rec;
  rec.name = "w";
  rec.dtype = Dtype::F32;
  rec.shape = {2};
  rec.data.resize(4);  // needs 8
  EXPECT_THROW(map.add(std::move(rec)), FormatError);
}

}  // namespace
