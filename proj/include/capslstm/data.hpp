#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capslstm/tensor.hpp"

namespace capslstm {

// Class indices of the two-way head. FAKE is the positive class.
enum class Label : int { Real = 0, Fake = 1 };

inline constexpr std::size_t kClassCount = 2;
inline constexpr std::size_t kFramesPerClip = 5;

const char* label_name(Label label) noexcept;
// Exact, case-sensitive "REAL" / "FAKE".
std::optional<Label> parse_label(std::string_view text) noexcept;

struct MetadataScan {
  std::map<std::string, Label> labels;  // clip directory name -> label
  std::vector<std::string> warnings;
};

// Reads root/metadata.json ({"<clip>": {"label": "REAL"|"FAKE", ...}, ...}).
// Keys naming a video file ("abc.mp4") also match a directory named by the
// stem ("abc"). Labeled entries without a directory and directories without a
// label are reported in `warnings` and skipped.
MetadataScan load_metadata(const std::filesystem::path& root);

struct ClipRecord {
  std::string clip_id;
  std::vector<std::filesystem::path> frame_paths;
  Label label = Label::Real;
};

// First `frames` entries of `available`; shorter lists repeat their last entry.
std::vector<std::filesystem::path> select_frames(std::vector<std::filesystem::path> available, std::size_t frames);

// Frames of one clip directory; the clip id is the directory name.
ClipRecord clip_from_directory(const std::filesystem::path& dir, Label label = Label::Real,
                               std::size_t frames_per_clip = kFramesPerClip);

// One record per labeled directory, frames taken in lexicographic filename
// order from the image files (.ppm, and .png when supported) inside it.
std::vector<ClipRecord> build_clips(const std::filesystem::path& root, const std::map<std::string, Label>& labels,
                                    std::size_t frames_per_clip = kFramesPerClip);

struct SplitRatios {
  double test = 0.2;        // carved from the whole set
  double validation = 0.2;  // carved from what remains after the test carve
};

struct PartitionSizes {
  std::size_t train_pool = 0;  // everything but test
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

// test = floor(n * r_test), validation = floor(pool * r_val); each at least 1.
PartitionSizes partition_sizes(std::size_t clips, SplitRatios ratios = {});

struct SplitPlan {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  SplitRatios ratios;
};

// Stratified seeded split: per-label shuffles, per-label quotas by largest
// remainder so the partition sizes equal partition_sizes(n).
SplitPlan split_dataset(std::span<const ClipRecord> clips, std::uint64_t seed, SplitRatios ratios = {});

// Records for `ids`, in the order of `ids`.
std::vector<ClipRecord> select_clips(std::span<const ClipRecord> clips, std::span<const std::string> ids);

// [F,H,W,3] with values rescaled by 1/255; frames resized bilinearly when
// their size differs from height x width. Decode failures become
// DatasetError naming the clip and file.
Tensor<float> load_clip(const ClipRecord& clip, std::size_t height, std::size_t width);

Tensor<float> onehot(std::span<const Label> labels);

struct Batch {
  Tensor<float> clips;   // [B,F,H,W,3]
  Tensor<float> onehot;  // [B,2]
  std::vector<std::string> clip_ids;
  std::vector<Label> labels;
};

// Emits consecutive batches of `batch_size` clips in the given order; the
// last batch may be short. With workers > 1 up to `workers` batches are
// decoded ahead on background threads; emission order is unaffected.
class BatchIterator {
 public:
  BatchIterator(std::vector<ClipRecord> clips, std::size_t batch_size, std::size_t height, std::size_t width,
                std::size_t workers = 1);
  BatchIterator(const BatchIterator&) = delete;
  BatchIterator& operator=(const BatchIterator&) = delete;

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept;

 private:
  Batch load(std::size_t index) const;
  void fill_queue();

  std::vector<ClipRecord> clips_;
  std::size_t batch_size_, height_, width_, workers_;
  std::size_t next_to_schedule_ = 0;
  std::size_t next_to_emit_ = 0;
  std::deque<std::future<Batch>> pending_;
};

}  // namespace capslstm
