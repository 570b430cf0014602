#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "capslstm/data.hpp"
#include "capslstm/error.hpp"
#include "capslstm/image.hpp"
#include "doctest.h"
#include "../support/toy_data.hpp"

using namespace capslstm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "capslstm_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

void write_frame(const fs::path& p, std::size_t h, std::size_t w, float value) {
  write_ppm(p, Tensor<float>::full({h, w, 3}, value));
}

std::vector<ClipRecord> synthetic_records(std::size_t n, std::size_t fake_every) {
  std::vector<ClipRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"vid" + std::to_string(i), {}, i % fake_every == 0 ? Label::Real : Label::Fake});
  }
  return out;
}

}  // namespace

TEST_CASE("labels are exact and case sensitive") {
  CHECK(parse_label("REAL") == Label::Real);
  CHECK(parse_label("FAKE") == Label::Fake);
  CHECK(!parse_label("fake").has_value());
  CHECK(!parse_label("").has_value());
  CHECK(std::string(label_name(Label::Fake)) == "FAKE");
  CHECK(static_cast<int>(Label::Real) == 0);
  CHECK(static_cast<int>(Label::Fake) == 1);
}

TEST_CASE("metadata scan") {
  const fs::path root = fresh_dir("meta");
  fs::create_directories(root / "aaa");
  fs::create_directories(root / "bbb");
  fs::create_directories(root / "stray");
  write_text(root / "metadata.json",
             R"({"aaa.mp4": {"label": "FAKE", "split": "train", "original": "bbb.mp4"},
                 "bbb": {"label": "REAL"},
                 "gone.mp4": {"label": "REAL"}})");
  const MetadataScan scan = load_metadata(root);
  CHECK(scan.labels.size() == 2);
  CHECK(scan.labels.at("aaa") == Label::Fake);
  CHECK(scan.labels.at("bbb") == Label::Real);
  REQUIRE(scan.warnings.size() == 2);
  CHECK(scan.warnings[0].find("gone.mp4") != std::string::npos);
  CHECK(scan.warnings[1].find("stray") != std::string::npos);
}

TEST_CASE("metadata errors") {
  const fs::path root = fresh_dir("meta_bad");
  CHECK_THROWS_AS(load_metadata(root), DatasetError);

  write_text(root / "metadata.json", "{\"a\": {\"label\": \"REAL\"},, }");
  try {
    load_metadata(root);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() == 24);  // the second comma
  }
  write_text(root / "metadata.json", R"({"a": {"label": "real"}})");
  CHECK_THROWS_AS(load_metadata(root), ValidationError);
  write_text(root / "metadata.json", R"({"a": {"split": "train"}})");
  CHECK_THROWS_AS(load_metadata(root), ValidationError);
  write_text(root / "metadata.json", R"([1, 2])");
  CHECK_THROWS_AS(load_metadata(root), ValidationError);
}

TEST_CASE("frame selection") {
  const std::vector<fs::path> seven{"f0", "f1", "f2", "f3", "f4", "f5", "f6"};
  const auto five = select_frames(seven, 5);
  CHECK(five == std::vector<fs::path>{"f0", "f1", "f2", "f3", "f4"});
  const auto padded = select_frames({"f0", "f1"}, 5);
  CHECK(padded == std::vector<fs::path>{"f0", "f1", "f1", "f1", "f1"});
  CHECK_THROWS_AS(select_frames({}, 5), ValidationError);
}

TEST_CASE("clips take frames in lexicographic order and are rescaled") {
  const fs::path root = fresh_dir("clips");
  fs::create_directories(root / "c1");
  // Written out of order; 10 sorts before 2 lexicographically.
  write_frame(root / "c1" / "frame_2.ppm", 4, 4, 51.0f);
  write_frame(root / "c1" / "frame_10.ppm", 4, 4, 255.0f);
  write_frame(root / "c1" / "frame_1.ppm", 4, 4, 0.0f);
  write_text(root / "c1" / "notes.txt", "ignored");
  fs::create_directories(root / "empty");

  const auto clips = build_clips(root, {{"c1", Label::Fake}}, 5);
  REQUIRE(clips.size() == 1);
  CHECK(clips[0].frame_paths[0].filename() == "frame_1.ppm");
  CHECK(clips[0].frame_paths[1].filename() == "frame_10.ppm");
  CHECK(clips[0].frame_paths[2].filename() == "frame_2.ppm");
  CHECK(clips[0].frame_paths[4].filename() == "frame_2.ppm");

  const auto x = load_clip(clips[0], 4, 4);
  CHECK(x.shape() == Shape{5, 4, 4, 3});
  CHECK(x.at({0, 0, 0, 0}) == 0.0f);
  CHECK(x.at({1, 3, 3, 2}) == 1.0f);
  CHECK(x.at({2, 1, 1, 1}) == doctest::Approx(0.2f));

  const auto resized = load_clip(clips[0], 8, 6);
  CHECK(resized.shape() == Shape{5, 8, 6, 3});
  CHECK(resized.at({1, 7, 5, 0}) == doctest::Approx(1.0f));

  CHECK_THROWS_AS(build_clips(root, {{"empty", Label::Real}}, 5), ValidationError);
}

TEST_CASE("undecodable frames name the clip") {
  const fs::path root = fresh_dir("broken");
  fs::create_directories(root / "bad_clip");
  write_text(root / "bad_clip" / "f.ppm", "P6\n4 4\n255\nxx");
  const auto clips = build_clips(root, {{"bad_clip", Label::Real}}, 5);
  try {
    load_clip(clips[0], 4, 4);
    FAIL("expected a dataset error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("bad_clip") != std::string::npos);
  }
}

TEST_CASE("ppm decode and encode") {
  const std::string p6 = std::string("P6\n# comment\n2 1\n255\n") + std::string("\x00\x80\xff\x01\x02\x03", 6);
  const std::vector<unsigned char> bytes(p6.begin(), p6.end());
  const auto img = decode_ppm(bytes);
  CHECK(img.shape() == Shape{1, 2, 3});
  CHECK(img.values() == std::vector<float>{0, 128, 255, 1, 2, 3});
  const std::string expect = std::string("P6\n2 1\n255\n") + std::string("\x00\x80\xff\x01\x02\x03", 6);
  CHECK(encode_ppm(img) == std::vector<unsigned char>(expect.begin(), expect.end()));
  const auto round = decode_ppm(encode_ppm(img));
  CHECK(round == img);

  const std::string p5 = "P5\n1 1\n255\n\x10";
  CHECK_THROWS_AS(decode_ppm(std::vector<unsigned char>(p5.begin(), p5.end())), ValidationError);
  const std::string deep = "P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00";
  CHECK_THROWS_AS(decode_ppm(std::vector<unsigned char>(deep.begin(), deep.end())), FormatError);
  const std::string junk = "GIF89a";
  CHECK_THROWS_AS(decode_ppm(std::vector<unsigned char>(junk.begin(), junk.end())), FormatError);

  // Half-up rounding and clamping on encode.
  const auto enc = encode_ppm(Tensor<float>({1, 1, 3}, {127.5f, -4.0f, 300.0f}));
  CHECK(enc[enc.size() - 3] == 128);
  CHECK(enc[enc.size() - 2] == 0);
  CHECK(enc[enc.size() - 1] == 255);
}

TEST_CASE("bilinear resize") {
  Tensor<float> img({1, 2, 1}, {0.0f, 1.0f});
  const auto up = resize_bilinear(img, 1, 4);
  CHECK(up.values() == std::vector<float>{0.0f, 0.25f, 0.75f, 1.0f});
  const auto same = resize_bilinear(img, 1, 2);
  CHECK(same == img);
}

TEST_CASE("partition sizes") {
  const PartitionSizes s = partition_sizes(4948);
  CHECK(s.test == 989);
  CHECK(s.train_pool == 3959);
  CHECK(s.validation == 791);
  CHECK(s.train == 3168);
  // Within one clip of 3958 / 792 / 989.
  CHECK(std::abs(static_cast<long>(s.train_pool) - 3958) <= 1);
  CHECK(std::abs(static_cast<long>(s.validation) - 792) <= 1);

  const PartitionSizes t = partition_sizes(3);
  CHECK(t.test == 1);
  CHECK(t.validation == 1);
  CHECK(t.train == 1);
  CHECK_THROWS_AS(partition_sizes(2), DatasetError);
  CHECK_THROWS_AS(partition_sizes(10, {0.0, 0.2}), ArgumentError);
}

TEST_CASE("split is a seeded, stratified, disjoint cover") {
  const auto clips = synthetic_records(4948, 3);
  const SplitPlan a = split_dataset(clips, 99);
  const SplitPlan b = split_dataset(clips, 99);
  const SplitPlan c = split_dataset(clips, 100);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(a.test == b.test);
  CHECK(a.test != c.test);
  CHECK(a.train.size() == 3168);
  CHECK(a.validation.size() == 791);
  CHECK(a.test.size() == 989);

  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.validation, &a.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 4948);

  std::map<std::string, Label> label_of;
  for (const auto& r : clips) label_of[r.clip_id] = r.label;
  auto fake_share = [&](const std::vector<std::string>& ids) {
    double f = 0;
    for (const auto& id : ids) f += label_of[id] == Label::Fake;
    return f / static_cast<double>(ids.size());
  };
  const double overall = 2.0 / 3.0;
  CHECK(std::abs(fake_share(a.train) - overall) < 0.005);
  CHECK(std::abs(fake_share(a.validation) - overall) < 0.005);
  CHECK(std::abs(fake_share(a.test) - overall) < 0.005);

  const auto picked = select_clips(clips, a.test);
  REQUIRE(picked.size() == a.test.size());
  CHECK(picked[0].clip_id == a.test[0]);
  const std::vector<std::string> unknown{"nope"};
  CHECK_THROWS(select_clips(clips, unknown));
}

TEST_CASE("onehot") {
  const std::vector<Label> labels{Label::Fake, Label::Real};
  CHECK(onehot(labels).values() == std::vector<float>{0, 1, 1, 0});
}

TEST_CASE("batches keep order and do not depend on worker count") {
  const fs::path root = fresh_dir("batches");
  const auto cfg = ModelConfig::scaled_down();
  const auto clips = toy::planted_set(cfg, 7, 5);
  toy::write_dataset(root, clips);
  const auto scan = load_metadata(root);
  const auto records = build_clips(root, scan.labels);
  REQUIRE(records.size() == 7);

  std::vector<Batch> serial, threaded;
  {
    BatchIterator it(records, 3, 32, 32, 1);
    CHECK(it.batch_count() == 3);
    while (auto b = it.next()) serial.push_back(std::move(*b));
  }
  {
    BatchIterator it(records, 3, 32, 32, 4);
    while (auto b = it.next()) threaded.push_back(std::move(*b));
  }
  REQUIRE(serial.size() == 3);
  REQUIRE(threaded.size() == 3);
  CHECK(serial[2].clips.shape() == Shape{1, 5, 32, 32, 3});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial[i].clips == threaded[i].clips);
    CHECK(serial[i].clip_ids == threaded[i].clip_ids);
    CHECK(serial[i].onehot == threaded[i].onehot);
  }
  CHECK(serial[0].clip_ids[0] == "clip_000");
  CHECK(serial[0].labels[1] == Label::Fake);
  // Frames survive the byte quantization of the disk round trip.
  const auto& want = clips[0].frames;
  const auto got = serial[0].clips.slice(0);
  for (std::size_t i = 0; i < want.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) <= 0.5f / 255.0f + 1e-6f);
}
