#include "tsft/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tsft {
namespace fs = std::filesystem;

namespace {

void put_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

float get_f32_le(const std::string& in, std::size_t off) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + b])) << (8 * b);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void save_checkpoint(const fs::path& dir, const std::vector<NamedTensor>& tensors, json meta) {
  fs::create_directories(dir);
  std::string blob;
  json entries = json::array();
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"dtype", "f32"}, {"byte_offset", blob.size()}});
    for (float v : t.tensor.data()) put_f32_le(blob, v);
  }
  write_file(dir / "weights.bin", blob);
  meta["tensors"] = std::move(entries);
  meta["weights_hash"] = fnv1a_hex(blob);
  write_file(dir / "manifest.json", meta.dump(2) + "\n");
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  try {
    ck.manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint: malformed manifest in " + dir.string() + ": " + e.what());
  }
  const std::string blob = read_file(dir / "weights.bin");
  if (!ck.manifest.contains("tensors") || !ck.manifest["tensors"].is_array())
    throw std::runtime_error("checkpoint: manifest has no tensor list");
  if (ck.manifest.contains("weights_hash") && ck.manifest["weights_hash"] != fnv1a_hex(blob))
    throw std::runtime_error("checkpoint: weights.bin in " + dir.string() + " does not match its recorded hash");
  for (const auto& e : ck.manifest["tensors"]) {
    if (e.at("dtype") != "f32") throw std::runtime_error("checkpoint: unsupported dtype " + e.at("dtype").dump());
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t off = e.at("byte_offset").get<std::size_t>();
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    if (off + 4 * n > blob.size()) throw std::runtime_error("checkpoint: tensor " + e.at("name").get<std::string>() + " overruns weights.bin");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f32_le(blob, off + 4 * i);
    ck.tensors.push_back({e.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(data))});
  }
  return ck;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string file_hash(const fs::path& file) { return fnv1a_hex(read_file(file)); }

json to_json(const BackboneConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"d_ff", c.d_ff},
          {"patch_len", c.patch_len}, {"stride", c.stride}, {"max_T", c.max_T}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig c;
  for (const auto& [key, val] : j.items()) {
    if (key == "d_model") c.d_model = val.get<int>();
    else if (key == "n_layers") c.n_layers = val.get<int>();
    else if (key == "n_heads") c.n_heads = val.get<int>();
    else if (key == "d_ff") c.d_ff = val.get<int>();
    else if (key == "patch_len") c.patch_len = val.get<int>();
    else if (key == "stride") c.stride = val.get<int>();
    else if (key == "max_T") c.max_T = val.get<int>();
    else throw std::invalid_argument("config: unknown key backbone." + key);
  }
  if (!j.contains("stride")) c.stride = c.patch_len;
  c.validate();
  return c;
}

void save_backbone(const fs::path& dir, Backbone<float>& backbone, json meta) {
  meta["kind"] = "backbone";
  meta["config"] = to_json(backbone.config());
  save_checkpoint(dir, to_named_tensors(backbone.parameters()), std::move(meta));
}

Backbone<float> load_backbone(const fs::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  if (!ck.manifest.contains("config")) throw std::runtime_error("checkpoint: " + dir.string() + " has no backbone config");
  Backbone<float> b(backbone_config_from_json(ck.manifest["config"]));
  assign_from(ck, b.parameters());
  b.freeze();
  return b;
}

}  // namespace tsft
