// SPDX-License-Identifier: Apache-2.0
#include "gridcast/checkpoint.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "gridcast/serialize.hpp"

namespace gridcast {

namespace {

constexpr std::uint32_t kVersion = 1;

nlohmann::json read_header(std::istream& is, const std::string& path) {
  expect_magic(is, "GCCK");
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error(path + ": truncated checkpoint manifest");
  return nlohmann::json::parse(text);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::ios_base::failure("cannot open checkpoint " + path);
  return is;
}

}  // namespace

template <typename Dtype>
void save_checkpoint(const std::string& path, const SequenceModel<Dtype>& model,
                     const nlohmann::json& extra) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot write checkpoint " + path);
  nlohmann::json manifest = extra;
  manifest["model"] = model.manifest();
  manifest["parameters"] = model.params().scalar_count();
  const std::string text = manifest.dump();
  write_magic(os, "GCCK");
  write_u32(os, kVersion);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto names = model.params().names();
  write_u64(os, names.size());
  for (const auto& n : names) {
    write_u32(os, static_cast<std::uint32_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
    write_tensor(os, model.params().at(n).value);
  }
  if (!os) throw std::ios_base::failure("write failed for checkpoint " + path);
}

nlohmann::json read_checkpoint_manifest(const std::string& path) {
  auto is = open_in(path);
  return read_header(is, path);
}

template <typename Dtype>
std::unique_ptr<SequenceModel<Dtype>> load_checkpoint(const std::string& path,
                                                      nlohmann::json* manifest) {
  auto is = open_in(path);
  nlohmann::json m = read_header(is, path);
  auto model = build_model<Dtype>(m.at("model"), 0);
  auto& store = model->params();
  const std::uint64_t count = read_u64(is);
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Tensor<Dtype> value = read_tensor<Dtype>(is);
    Parameter<Dtype>* p = store.find(name);
    if (p == nullptr) throw std::runtime_error(path + ": unexpected parameter " + name);
    if (p->value.shape() != value.shape()) {
      throw ShapeError(path + ": parameter " + name + " stored as " + shape_str(value.shape()) +
                       ", model expects " + shape_str(p->value.shape()));
    }
    p->value = std::move(value);
    seen.insert(name);
  }
  if (seen.size() != store.names().size()) {
    throw std::runtime_error(path + ": checkpoint is missing parameters");
  }
  if (manifest != nullptr) *manifest = std::move(m);
  return model;
}

#define GRIDCAST_INSTANTIATE_CHECKPOINT(T)                                                   \
  template void save_checkpoint<T>(const std::string&, const SequenceModel<T>&,              \
                                   const nlohmann::json&);                                   \
  template std::unique_ptr<SequenceModel<T>> load_checkpoint<T>(const std::string&,          \
                                                                nlohmann::json*);

GRIDCAST_INSTANTIATE_CHECKPOINT(float)
GRIDCAST_INSTANTIATE_CHECKPOINT(double)

}  // namespace gridcast
