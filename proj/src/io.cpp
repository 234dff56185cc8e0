#include "iformer/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "iformer/fuse.hpp"

namespace iformer {

using nlohmann::json;

// ---- weight store ---------------------------------------------------------

void WeightStore::add(std::string name, Tensor t) {
  if (index_.count(name)) throw ArgumentError("duplicate weight name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(WeightEntry{std::move(name), std::move(t)});
}

bool WeightStore::has(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IoError("missing weight '" + name + "'");
  return entries_[it->second].tensor;
}

// ---- IFW1 binary format ---------------------------------------------------

uint32_t crc32(const unsigned char* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace {

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
}

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_f32(std::vector<unsigned char>& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

struct ByteReader {
  const std::vector<unsigned char>& bytes;
  size_t pos = 0;
  size_t limit = 0;  // exclusive; the checksum footer sits beyond it

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(msg + " at byte offset " + std::to_string(pos));
  }
  void need(size_t n) const {
    if (pos + n > limit) {
      throw IoError("file truncated at byte offset " + std::to_string(limit) + " (needed " +
                    std::to_string(n) + " more bytes from offset " + std::to_string(pos) + ")");
    }
  }
  uint16_t u16() {
    need(2);
    uint16_t v = bytes[pos] | (uint16_t(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<unsigned char> encode_weights(const WeightStore& store) {
  std::vector<unsigned char> out;
  out.push_back('I');
  out.push_back('F');
  out.push_back('W');
  out.push_back('1');
  put_u32(out, static_cast<uint32_t>(store.size()));
  for (const WeightEntry& e : store.entries()) {
    if (e.name.size() > 0xFFFF) throw ArgumentError("weight name too long: " + e.name);
    put_u16(out, static_cast<uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<unsigned char>(e.tensor.rank()));
    for (int64_t ext : e.tensor.shape()) put_u32(out, static_cast<uint32_t>(ext));
    for (int64_t i = 0; i < e.tensor.numel(); ++i) put_f32(out, e.tensor.data()[i]);
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

WeightStore decode_weights(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12) {
    throw IoError("file truncated at byte offset " + std::to_string(bytes.size()) +
                  " (shorter than the minimal header + checksum)");
  }
  size_t body = bytes.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= uint32_t(bytes[body + i]) << (8 * i);
  uint32_t computed = crc32(bytes.data(), body);
  if (stored != computed) {
    throw IoError("checksum mismatch at byte offset " + std::to_string(body) + " (stored " +
                  std::to_string(stored) + ", computed " + std::to_string(computed) + ")");
  }
  if (std::memcmp(bytes.data(), "IFW1", 4) != 0) {
    throw IoError("bad magic at byte offset 0");
  }

  ByteReader r{bytes, 4, body};
  uint32_t count = r.u32();
  WeightStore store;
  for (uint32_t i = 0; i < count; ++i) {
    size_t entry_pos = r.pos;
    uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    uint8_t rank = r.u8();
    if (rank < 1 || rank > 4) {
      throw IoError("invalid rank " + std::to_string(int(rank)) + " for weight '" + name +
                    "' at byte offset " + std::to_string(entry_pos));
    }
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (int a = 0; a < rank; ++a) {
      uint32_t ext = r.u32();
      if (ext == 0 || numel > (int64_t(1) << 33) / std::max<int64_t>(ext, 1)) {
        throw IoError("invalid extents for weight '" + name + "' at byte offset " +
                      std::to_string(entry_pos));
      }
      shape.push_back(ext);
      numel *= ext;
    }
    std::vector<float> data(static_cast<size_t>(numel));
    r.need(static_cast<size_t>(numel) * 4);
    for (int64_t e = 0; e < numel; ++e) data[static_cast<size_t>(e)] = r.f32();
    if (store.has(name)) {
      throw IoError("duplicate name '" + name + "' at byte offset " + std::to_string(entry_pos));
    }
    store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos != body) {
    throw IoError("trailing bytes at byte offset " + std::to_string(r.pos));
  }
  return store;
}

void save_weights(const WeightStore& store, const std::string& path) {
  std::vector<unsigned char> bytes = encode_weights(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> bytes(static_cast<size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw IoError("short read from '" + path + "'");
  return bytes;
}

}  // namespace

WeightStore load_weights(const std::string& path) { return decode_weights(read_file(path)); }

WeightStore collect_weights(const Model& m) {
  WeightStore store;
  for_each_weight(m, [&](const std::string& name, const Tensor& t, WeightRole) {
    store.add(name, t);
  });
  return store;
}

Model build_model(const ModelConfig& cfg, const WeightStore& store) {
  Model m = build_model(cfg, 0);
  // A snapshot with no BN tensors is a fused model; rebuild the skeleton in
  // fused form so names and shapes line up.
  if (!store.has("stem.conv1.bn.gamma")) m = fuse_model(m);
  for_each_weight(m, [&](const std::string& name, Tensor& t, WeightRole) {
    const Tensor& src = store.get(name);
    if (!src.same_shape(t)) {
      throw IoError("weight '" + name + "' has shape " + src.shape_str() + ", expected " +
                    t.shape_str());
    }
    t = src;
  });
  return m;
}

// ---- config JSON ----------------------------------------------------------

namespace {

[[noreturn]] void cfg_fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config error at " + (path.empty() ? "/" : path) + ": " + msg);
}

const json& require_key(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.is_object()) cfg_fail(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) cfg_fail(path + "/" + key, "missing key");
  return *it;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) cfg_fail(path, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) cfg_fail(path + "/" + it.key(), "unknown key");
  }
}

int get_int(const json& obj, const std::string& path, const std::string& key) {
  const json& v = require_key(obj, path, key);
  if (!v.is_number_integer()) cfg_fail(path + "/" + key, "expected an integer");
  return v.get<int>();
}

std::string get_str(const json& obj, const std::string& path, const std::string& key) {
  const json& v = require_key(obj, path, key);
  if (!v.is_string()) cfg_fail(path + "/" + key, "expected a string");
  return v.get<std::string>();
}

const char* kind_str(BlockKind k) {
  switch (k) {
    case BlockKind::Conv: return "conv";
    case BlockKind::Shma: return "shma";
    case BlockKind::Sha: return "sha";
    case BlockKind::Mha: return "mha";
    case BlockKind::WindowShma: return "window-shma";
  }
  return "conv";
}

const char* role_str(WindowRole r) {
  switch (r) {
    case WindowRole::PartitionEntry: return "partition-entry";
    case WindowRole::Interior: return "interior";
    case WindowRole::ReverseExit: return "reverse-exit";
    case WindowRole::None: break;
  }
  return "none";
}

json block_to_json(const BlockSpec& b) {
  json j;
  j["kind"] = kind_str(b.kind);
  j["channels"] = b.channels;
  j["expansion"] = b.expansion;
  switch (b.kind) {
    case BlockKind::Conv:
      j["kernel"] = b.kernel;
      break;
    case BlockKind::Shma:
      j["head_dim"] = b.head_dim;
      break;
    case BlockKind::Sha:
      break;
    case BlockKind::Mha:
      j["heads"] = b.heads;
      break;
    case BlockKind::WindowShma:
      j["head_dim"] = b.head_dim;
      j["window"] = b.window;
      j["role"] = role_str(b.role);
      j["chunks"] = b.n_chunks;
      break;
  }
  return j;
}

BlockSpec block_from_json(const json& j, const std::string& path) {
  BlockSpec b;
  std::string kind = get_str(j, path, "kind");
  if (kind == "conv") {
    b.kind = BlockKind::Conv;
    check_keys(j, path, {"kind", "channels", "expansion", "kernel"});
    b.kernel = get_int(j, path, "kernel");
  } else if (kind == "shma") {
    b.kind = BlockKind::Shma;
    check_keys(j, path, {"kind", "channels", "expansion", "head_dim"});
    b.head_dim = get_int(j, path, "head_dim");
  } else if (kind == "sha") {
    b.kind = BlockKind::Sha;
    check_keys(j, path, {"kind", "channels", "expansion"});
  } else if (kind == "mha") {
    b.kind = BlockKind::Mha;
    check_keys(j, path, {"kind", "channels", "expansion", "heads"});
    b.heads = get_int(j, path, "heads");
  } else if (kind == "window-shma") {
    b.kind = BlockKind::WindowShma;
    check_keys(j, path, {"kind", "channels", "expansion", "head_dim", "window", "role", "chunks"});
    b.head_dim = get_int(j, path, "head_dim");
    b.window = get_int(j, path, "window");
    b.n_chunks = get_int(j, path, "chunks");
    std::string role = get_str(j, path, "role");
    if (role == "partition-entry") {
      b.role = WindowRole::PartitionEntry;
    } else if (role == "interior") {
      b.role = WindowRole::Interior;
    } else if (role == "reverse-exit") {
      b.role = WindowRole::ReverseExit;
    } else {
      cfg_fail(path + "/role", "unknown window role '" + role + "'");
    }
  } else {
    cfg_fail(path + "/kind", "unknown block kind '" + kind + "'");
  }
  b.channels = get_int(j, path, "channels");
  b.expansion = get_int(j, path, "expansion");
  return b;
}

}  // namespace

std::string save_config(const ModelConfig& cfg) {
  json j;
  j["v"] = 1;
  j["name"] = cfg.name;
  j["input_resolution"] = cfg.input_resolution;
  j["num_classes"] = cfg.num_classes;
  j["stem"] = json{{"widths", {cfg.stem.c1, cfg.stem.c2, cfg.stem.c3}}};
  json stages = json::array();
  for (const StageSpec& s : cfg.stages) {
    json stage;
    if (s.downsample) {
      stage["downsample"] = json{{"kernel", s.downsample->kernel},
                                 {"stride", s.downsample->stride},
                                 {"out_channels", s.downsample->out_channels}};
    }
    json blocks = json::array();
    for (const BlockSpec& b : s.blocks) blocks.push_back(block_to_json(b));
    stage["blocks"] = std::move(blocks);
    stages.push_back(std::move(stage));
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

ModelConfig load_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config error at /: not valid JSON (") + e.what() + ")");
  }
  check_keys(j, "", {"v", "name", "input_resolution", "num_classes", "stem", "stages"});
  int version = get_int(j, "", "v");
  if (version != 1) cfg_fail("/v", "unsupported schema version " + std::to_string(version));

  ModelConfig cfg;
  cfg.name = get_str(j, "", "name");
  cfg.input_resolution = get_int(j, "", "input_resolution");
  cfg.num_classes = get_int(j, "", "num_classes");

  const json& stem = require_key(j, "", "stem");
  check_keys(stem, "/stem", {"widths"});
  const json& widths = require_key(stem, "/stem", "widths");
  if (!widths.is_array() || widths.size() != 3 || !widths[0].is_number_integer() ||
      !widths[1].is_number_integer() || !widths[2].is_number_integer()) {
    cfg_fail("/stem/widths", "expected three integers");
  }
  cfg.stem = StemSpec{widths[0].get<int>(), widths[1].get<int>(), widths[2].get<int>()};

  const json& stages = require_key(j, "", "stages");
  if (!stages.is_array() || stages.size() != 4) cfg_fail("/stages", "expected four stages");
  for (size_t s = 0; s < 4; ++s) {
    std::string sp = "/stages/" + std::to_string(s);
    const json& stage = stages[s];
    check_keys(stage, sp, {"downsample", "blocks"});
    if (stage.contains("downsample")) {
      const json& ds = stage["downsample"];
      check_keys(ds, sp + "/downsample", {"kernel", "stride", "out_channels"});
      cfg.stages[s].downsample =
          DownsampleSpec{get_int(ds, sp + "/downsample", "kernel"),
                         get_int(ds, sp + "/downsample", "stride"),
                         get_int(ds, sp + "/downsample", "out_channels")};
    }
    const json& blocks = require_key(stage, sp, "blocks");
    if (!blocks.is_array()) cfg_fail(sp + "/blocks", "expected an array");
    for (size_t b = 0; b < blocks.size(); ++b) {
      cfg.stages[s].blocks.push_back(
          block_from_json(blocks[b], sp + "/blocks/" + std::to_string(b)));
    }
  }

  validate_config(cfg);
  return cfg;
}

void save_config_file(const ModelConfig& cfg, const std::string& path) {
  std::string text = save_config(cfg);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("short write to '" + path + "'");
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_config(text);
}

// ---- PPM ------------------------------------------------------------------

Tensor load_image_ppm(const std::string& path, const std::array<float, 3>& mean,
                      const std::array<float, 3>& stddev) {
  std::vector<unsigned char> bytes = read_file(path);
  size_t pos = 0;
  auto peek = [&]() -> int { return pos < bytes.size() ? bytes[pos] : -1; };
  auto skip_space = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(peek())) ++pos;
      if (peek() == '#') {
        while (pos < bytes.size() && peek() != '\n') ++pos;
        continue;
      }
      break;
    }
  };
  auto read_int = [&]() -> int64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(peek())) {
      throw IoError("bad PPM header in '" + path + "' at byte offset " + std::to_string(pos));
    }
    int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(peek())) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) throw IoError("unreasonable PPM dimension in '" + path + "'");
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw IoError("'" + path + "' is not a binary P6 PPM");
  }
  pos = 2;
  int64_t w = read_int();
  int64_t h = read_int();
  int64_t maxval = read_int();
  if (w <= 0 || h <= 0) throw IoError("bad PPM dimensions in '" + path + "'");
  if (maxval != 255) {
    throw IoError("unsupported PPM maxval " + std::to_string(maxval) + " in '" + path + "'");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw IoError("bad PPM header in '" + path + "' at byte offset " + std::to_string(pos));
  }
  ++pos;  // single whitespace separates header from payload

  size_t needed = static_cast<size_t>(3) * w * h;
  if (bytes.size() - pos < needed) {
    throw IoError("short PPM payload in '" + path + "': need " + std::to_string(needed) +
                  " bytes, have " + std::to_string(bytes.size() - pos));
  }

  Tensor out({1, 3, h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t ch = 0; ch < 3; ++ch) {
        float v = bytes[pos + (y * w + x) * 3 + ch] / 255.0f;
        out.at({0, ch, y, x}) = (v - mean[ch]) / stddev[ch];
      }
    }
  }
  return out;
}

}  // namespace iformer
