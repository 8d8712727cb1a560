#include <cstring>
#include <fstream>
#include <map>

#include "attpool/model.hpp"

namespace attpool {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ofstream& f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(f, bits);
}

bool get_bytes(std::ifstream& f, void* out, std::size_t n) {
  return static_cast<bool>(f.read(reinterpret_cast<char*>(out),
                                  static_cast<std::streamsize>(n)));
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path,
                      const char* what) {
  unsigned char b[4];
  if (!get_bytes(f, b, 4))
    throw FormatError(path + ": truncated checkpoint reading " + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::ifstream& f, const std::string& path,
                      const char* what) {
  unsigned char b[8];
  if (!get_bytes(f, b, 8))
    throw FormatError(path + ": truncated checkpoint reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_tensor(std::ofstream& f, const std::string& name,
                const Tensor<float>& t) {
  put_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(f, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a)
    put_u64(f, static_cast<std::uint64_t>(t.extent(a)));
  for (std::size_t i = 0; i < t.numel(); ++i) put_f32(f, t[i]);
}

void put_scalar(std::ofstream& f, const std::string& name, double v) {
  put_tensor(f, name, Tensor<float>({1}, static_cast<float>(v)));
}

}  // namespace

void save_checkpoint(const ModelState<float>& state, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_checkpoint: cannot open " + path);
  f.write("AAGG", 4);
  put_u32(f, kVersion);

  put_scalar(f, "meta.input", state.input == InputKind::image ? 1 : 0);
  put_scalar(f, "meta.pooling",
             state.pooling == PoolKind::vlad   ? 0
             : state.pooling == PoolKind::bow ? 1
                                              : 2);
  put_scalar(f, "meta.attention",
             state.attention == AttentionMode::off  ? 0
             : state.attention == AttentionMode::on ? 1
                                                    : 2);
  put_scalar(f, "meta.classes", static_cast<double>(state.classes));
  put_scalar(f, "meta.feature_dim", static_cast<double>(state.feature_dim));
  put_scalar(f, "meta.backbone_width", static_cast<double>(state.backbone_width));
  put_scalar(f, "meta.alpha", static_cast<double>(state.cb.alpha));
  put_scalar(f, "meta.lambda", static_cast<double>(state.lambda));
  put_scalar(f, "meta.step", static_cast<double>(state.step));

  ModelState<float> copy = state;  // param_refs wants mutable access
  for (const auto& r : param_refs(copy)) put_tensor(f, r.name, *r.tensor);
  if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

ModelState<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!get_bytes(f, magic, 4))
    throw FormatError(path + ": truncated checkpoint reading magic");
  if (std::memcmp(magic, "AAGG", 4) != 0)
    throw FormatError(path + ": bad magic, not a checkpoint");
  const std::uint32_t version = get_u32(f, path, "version");
  if (version != kVersion)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));

  std::map<std::string, Tensor<float>> recs;
  for (;;) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) break;  // clean EOF
    std::uint32_t name_len = 0;
    for (int i = 0; i < 4; ++i)
      name_len |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    if (name_len == 0 || name_len > 4096)
      throw FormatError(path + ": implausible tensor name length " +
                        std::to_string(name_len));
    std::string name(name_len, '\0');
    if (!get_bytes(f, name.data(), name_len))
      throw FormatError(path + ": truncated checkpoint reading tensor name");
    const std::uint32_t rank = get_u32(f, path, "rank");
    if (rank > 8)
      throw FormatError(path + ": implausible tensor rank " +
                        std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::uint64_t dim = get_u64(f, path, "dimension");
      if (dim == 0 || dim > (1ull << 32))
        throw FormatError(path + ": implausible dimension " +
                          std::to_string(dim));
      shape[a] = static_cast<std::size_t>(dim);
      numel *= shape[a];
    }
    std::vector<float> data(numel);
    if (!get_bytes(f, data.data(), numel * 4))
      throw FormatError(path + ": truncated checkpoint reading payload of " +
                        name);
    recs.emplace(name, Tensor<float>(shape, std::move(data)));
  }

  auto scalar = [&](const std::string& name) {
    auto it = recs.find(name);
    if (it == recs.end())
      throw FormatError(path + ": checkpoint missing " + name);
    return static_cast<double>(it->second[0]);
  };
  auto take = [&](const std::string& name, Tensor<float>& into, bool required) {
    auto it = recs.find(name);
    if (it == recs.end()) {
      if (required)
        throw FormatError(path + ": checkpoint missing " + name);
      return;
    }
    into = std::move(it->second);
  };

  ModelState<float> s;
  s.input = scalar("meta.input") > 0.5 ? InputKind::image : InputKind::featuremap;
  const int pool = static_cast<int>(scalar("meta.pooling"));
  s.pooling = pool == 0 ? PoolKind::vlad : pool == 1 ? PoolKind::bow : PoolKind::gap;
  const int att = static_cast<int>(scalar("meta.attention"));
  s.attention = att == 0   ? AttentionMode::off
                : att == 1 ? AttentionMode::on
                           : AttentionMode::uniform;
  s.classes = static_cast<std::size_t>(scalar("meta.classes"));
  s.feature_dim = static_cast<std::size_t>(scalar("meta.feature_dim"));
  s.backbone_width = static_cast<std::size_t>(scalar("meta.backbone_width"));
  s.cb.alpha = static_cast<float>(scalar("meta.alpha"));
  s.lambda = static_cast<float>(scalar("meta.lambda"));
  s.step = static_cast<std::uint64_t>(scalar("meta.step"));

  const bool image = s.input == InputKind::image;
  take("conv1.weight", s.conv1_w, image);
  take("conv1.bias", s.conv1_b, image);
  take("conv2.weight", s.conv2_w, image);
  take("conv2.bias", s.conv2_b, image);
  take("att.ca.weight", s.att.w_ca, true);
  take("att.ca.bias", s.att.b_ca, true);
  take("att.cs.weight", s.att.w_cs, true);
  take("att.cs.bias", s.att.b_cs, true);
  const bool needs_codebook = s.pooling != PoolKind::gap;
  take("codebook.centers", s.cb.centers, needs_codebook);
  take("codebook.s", s.cb.s, needs_codebook);
  take("codebook.h", s.cb.h, needs_codebook);
  take("classifier.weight", s.cls_w, true);
  take("classifier.bias", s.cls_b, true);
  return s;
}

}  // namespace attpool
