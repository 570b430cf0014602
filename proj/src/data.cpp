#include "capslstm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

#include "capslstm/image.hpp"
#include "capslstm/rng.hpp"

namespace capslstm {

namespace fs = std::filesystem;

const char* label_name(Label label) noexcept { return label == Label::Fake ? "FAKE" : "REAL"; }

std::optional<Label> parse_label(std::string_view text) noexcept {
  if (text == "REAL") return Label::Real;
  if (text == "FAKE") return Label::Fake;
  return std::nullopt;
}

MetadataScan load_metadata(const fs::path& root) {
  const fs::path file = root / "metadata.json";
  if (!fs::is_regular_file(file)) throw DatasetError("missing " + file.string());
  std::ifstream in(file, std::ios::binary);
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;  // 0-based index of the offending byte
    throw ParseError(file.string() + ": malformed JSON at byte " + std::to_string(offset) + ": " + e.what(), offset);
  }
  if (!doc.is_object()) throw ValidationError(file.string() + ": top level must be an object");

  MetadataScan scan;
  std::set<std::string> claimed;
  for (const auto& [key, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("label") || !entry["label"].is_string()) {
      throw ValidationError("clip '" + key + "': entry must be an object with a string \"label\"");
    }
    const std::string text_label = entry["label"].get<std::string>();
    const std::optional<Label> label = parse_label(text_label);
    if (!label) {
      throw ValidationError("clip '" + key + "': unknown label \"" + text_label + "\" (expected REAL or FAKE)");
    }
    std::string dir = key;
    if (!fs::is_directory(root / dir)) {
      const std::string stem = fs::path(key).stem().string();
      if (!stem.empty() && stem != key && fs::is_directory(root / stem)) dir = stem;
    }
    if (!fs::is_directory(root / dir)) {
      scan.warnings.push_back("clip '" + key + "' is labeled but has no directory; skipped");
      continue;
    }
    scan.labels[dir] = *label;
    claimed.insert(dir);
  }
  if (doc.empty()) scan.warnings.push_back(file.string() + " lists no clips");
  std::vector<std::string> unlabeled;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && !claimed.count(entry.path().filename().string())) {
      unlabeled.push_back(entry.path().filename().string());
    }
  }
  std::sort(unlabeled.begin(), unlabeled.end());
  for (const auto& name : unlabeled) scan.warnings.push_back("directory '" + name + "' has no label; skipped");
  return scan;
}

std::vector<fs::path> select_frames(std::vector<fs::path> available, std::size_t frames) {
  if (available.empty()) throw ValidationError("no frames to select from");
  if (available.size() > frames) available.resize(frames);
  while (available.size() < frames) available.push_back(available.back());
  return available;
}

namespace {

bool is_frame_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || (ext == ".png" && png_supported());
}

// Splits `total` across groups proportionally to `sizes`: floors first, then
// the leftover units go to the largest remainders (lower index on ties).
std::vector<std::size_t> proportional_quota(std::size_t total, const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (std::size_t s : sizes) n += s;
  std::vector<std::size_t> quota(sizes.size());
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, group)
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    quota[g] = n ? total * sizes[g] / n : 0;
    assigned += quota[g];
    remainders.push_back({n ? total * sizes[g] % n : 0, g});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < remainders.size(); ++k) {
    const std::size_t g = remainders[k].second;
    if (quota[g] < sizes[g]) {
      ++quota[g];
      ++assigned;
    }
  }
  return quota;
}

std::size_t floor_fraction(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
}

}  // namespace

ClipRecord clip_from_directory(const fs::path& dir, Label label, std::size_t frames_per_clip) {
  if (frames_per_clip == 0) throw ArgumentError("frames_per_clip must be positive");
  std::string clip_id = dir.filename().string();
  if (clip_id.empty()) clip_id = dir.parent_path().filename().string();
  if (!fs::is_directory(dir)) throw DatasetError("clip directory " + dir.string() + " does not exist");
  std::vector<fs::path> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_frame_file(entry.path())) frames.push_back(entry.path());
  }
  if (frames.empty()) throw ValidationError("clip '" + clip_id + "' has no image frames");
  std::sort(frames.begin(), frames.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return {clip_id, select_frames(std::move(frames), frames_per_clip), label};
}

std::vector<ClipRecord> build_clips(const fs::path& root, const std::map<std::string, Label>& labels,
                                    std::size_t frames_per_clip) {
  std::vector<ClipRecord> clips;
  for (const auto& [clip_id, label] : labels) {
    ClipRecord clip = clip_from_directory(root / clip_id, label, frames_per_clip);
    clip.clip_id = clip_id;
    clips.push_back(std::move(clip));
  }
  return clips;
}

PartitionSizes partition_sizes(std::size_t clips, SplitRatios ratios) {
  if (clips < 3) {
    throw DatasetError("need at least 3 clips to form train/validation/test partitions, got " +
                       std::to_string(clips));
  }
  if (!(ratios.test > 0 && ratios.test < 1 && ratios.validation > 0 && ratios.validation < 1)) {
    throw ArgumentError("split ratios must lie strictly between 0 and 1");
  }
  PartitionSizes s;
  s.test = std::clamp<std::size_t>(floor_fraction(clips, ratios.test), 1, clips - 2);
  s.train_pool = clips - s.test;
  s.validation = std::clamp<std::size_t>(floor_fraction(s.train_pool, ratios.validation), 1, s.train_pool - 1);
  s.train = s.train_pool - s.validation;
  return s;
}

SplitPlan split_dataset(std::span<const ClipRecord> clips, std::uint64_t seed, SplitRatios ratios) {
  const PartitionSizes sizes = partition_sizes(clips.size(), ratios);
  std::vector<std::vector<std::string>> groups(kClassCount);
  for (const auto& c : clips) groups[static_cast<std::size_t>(c.label)].push_back(c.clip_id);
  SeededRng rng(seed);
  std::vector<std::size_t> group_sizes;
  for (auto& g : groups) {
    std::sort(g.begin(), g.end());
    if (std::adjacent_find(g.begin(), g.end()) != g.end()) throw DatasetError("duplicate clip id in split input");
    shuffle(std::span<std::string>(g), rng);
    group_sizes.push_back(g.size());
  }
  const std::vector<std::size_t> test_quota = proportional_quota(sizes.test, group_sizes);
  std::vector<std::size_t> pool_sizes;
  for (std::size_t g = 0; g < groups.size(); ++g) pool_sizes.push_back(group_sizes[g] - test_quota[g]);
  const std::vector<std::size_t> val_quota = proportional_quota(sizes.validation, pool_sizes);

  SplitPlan plan;
  plan.seed = seed;
  plan.ratios = ratios;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& ids = groups[g];
    const std::size_t t = test_quota[g], v = val_quota[g];
    plan.test.insert(plan.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(t));
    plan.validation.insert(plan.validation.end(), ids.begin() + static_cast<std::ptrdiff_t>(t),
                           ids.begin() + static_cast<std::ptrdiff_t>(t + v));
    plan.train.insert(plan.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(t + v), ids.end());
  }
  shuffle(std::span<std::string>(plan.train), rng);
  shuffle(std::span<std::string>(plan.validation), rng);
  shuffle(std::span<std::string>(plan.test), rng);
  return plan;
}

std::vector<ClipRecord> select_clips(std::span<const ClipRecord> clips, std::span<const std::string> ids) {
  std::map<std::string_view, const ClipRecord*> by_id;
  for (const auto& c : clips) by_id[c.clip_id] = &c;
  std::vector<ClipRecord> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DatasetError("clip '" + id + "' not found");
    out.push_back(*it->second);
  }
  return out;
}

Tensor<float> load_clip(const ClipRecord& clip, std::size_t height, std::size_t width) {
  std::vector<Tensor<float>> frames;
  for (const auto& path : clip.frame_paths) {
    Tensor<float> image;
    try {
      image = decode_image(path);
    } catch (const FormatError& e) {
      throw DatasetError("clip '" + clip.clip_id + "': undecodable frame " + path.string() + ": " + e.what());
    } catch (const IoError& e) {
      throw DatasetError("clip '" + clip.clip_id + "': " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("clip '" + clip.clip_id + "': " + e.what());
    }
    image = resize_bilinear(image, height, width);
    image *= 1.0f / 255.0f;
    frames.push_back(std::move(image));
  }
  return stack<float>(frames);
}

Tensor<float> onehot(std::span<const Label> labels) {
  if (labels.empty()) throw ArgumentError("one-hot of an empty label list");
  Tensor<float> out({labels.size(), kClassCount});
  for (std::size_t i = 0; i < labels.size(); ++i) out[i * kClassCount + static_cast<std::size_t>(labels[i])] = 1.0f;
  return out;
}

BatchIterator::BatchIterator(std::vector<ClipRecord> clips, std::size_t batch_size, std::size_t height,
                             std::size_t width, std::size_t workers)
    : clips_(std::move(clips)), batch_size_(batch_size), height_(height), width_(width), workers_(workers) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (workers_ == 0) workers_ = 1;
}

std::size_t BatchIterator::batch_count() const noexcept { return (clips_.size() + batch_size_ - 1) / batch_size_; }

Batch BatchIterator::load(std::size_t index) const {
  const std::size_t first = index * batch_size_;
  const std::size_t last = std::min(clips_.size(), first + batch_size_);
  Batch batch;
  std::vector<Tensor<float>> tensors;
  for (std::size_t i = first; i < last; ++i) {
    tensors.push_back(load_clip(clips_[i], height_, width_));
    batch.clip_ids.push_back(clips_[i].clip_id);
    batch.labels.push_back(clips_[i].label);
  }
  batch.clips = stack<float>(tensors);
  batch.onehot = onehot(batch.labels);
  return batch;
}

void BatchIterator::fill_queue() {
  while (workers_ > 1 && pending_.size() < workers_ && next_to_schedule_ < batch_count()) {
    pending_.push_back(std::async(std::launch::async, &BatchIterator::load, this, next_to_schedule_++));
  }
}

std::optional<Batch> BatchIterator::next() {
  if (next_to_emit_ >= batch_count()) return std::nullopt;
  if (workers_ <= 1) return load(next_to_emit_++);
  fill_queue();
  Batch batch = pending_.front().get();
  pending_.pop_front();
  ++next_to_emit_;
  fill_queue();
  return batch;
}

}  // namespace capslstm
