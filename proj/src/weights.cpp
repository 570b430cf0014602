#include "capslstm/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace capslstm {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) throw FormatError("weights file truncated while reading " + what);
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_weights(std::span<const NamedTensor> tensors) {
  std::vector<char> out(kWeightsMagic, kWeightsMagic + 4);
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    put_u32(out, kDtypeF32);
    out.reserve(out.size() + 4 * t.value.size());
    for (float v : t.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_weights(std::span<const char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw FormatError("not a weights file: bad magic (expected \"CAPW\")");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32("version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weights version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string label = "tensor #" + std::to_string(k);
    const std::uint32_t name_len = r.u32(label + " name length");
    std::string name = r.text(name_len, label + " name");
    const std::uint32_t rank = r.u32("rank of '" + name + "'");
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::uint32_t e = r.u32("extents of '" + name + "'");
      if (e == 0) throw FormatError("tensor '" + name + "' has a zero extent");
      shape.push_back(e);
    }
    const std::uint32_t dtype = r.u32("dtype of '" + name + "'");
    if (dtype != kDtypeF32) {
      throw FormatError("tensor '" + name + "' has unsupported dtype tag " + std::to_string(dtype));
    }
    const std::size_t n = shape_size(shape);
    if (r.remaining() / 4 < n) throw FormatError("weights file truncated inside payload of '" + name + "'");
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(r.u32(name));
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(values))});
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the last tensor");
  return out;
}

void write_weights_file(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const std::vector<char> bytes = encode_weights(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> read_weights_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weights file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

void save_weights(const Model<float>& model, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.parameters()) tensors.push_back({p.name, p.param->value});
  write_weights_file(path, tensors);
}

void load_weights_into(Model<float>& model, const std::filesystem::path& path) {
  std::vector<NamedTensor> stored = read_weights_file(path);
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i >= stored.size()) {
      throw FormatError("weights file lacks tensor '" + params[i].name + "'");
    }
    if (stored[i].name != params[i].name) {
      throw FormatError("tensor #" + std::to_string(i) + " is '" + stored[i].name + "', architecture expects '" +
                        params[i].name + "'");
    }
    if (stored[i].value.shape() != params[i].param->value.shape()) {
      throw FormatError("tensor '" + params[i].name + "' has shape " + shape_string(stored[i].value.shape()) +
                        ", architecture expects " + shape_string(params[i].param->value.shape()));
    }
  }
  if (stored.size() != params.size()) {
    throw FormatError("weights file has extra tensor '" + stored[params.size()].name + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = std::move(stored[i].value);
}

Model<float> load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  Model<float> model(config);
  load_weights_into(model, path);
  return model;
}

}  // namespace capslstm
