#include "core/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "core/dataio.hpp"
#include "json.hpp"

namespace headsdf {

namespace fs = std::filesystem;
using OrderedJson = nlohmann::ordered_json;
using Json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'S', 'D', 'F'};
constexpr uint32_t kVersion = 1;

const char* kAdamMPrefix = "adam.m/";
const char* kAdamVPrefix = "adam.v/";

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("checkpoint: truncated file: " + path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw DataError("checkpoint: truncated file: " + path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

// f32 payloads are written through a byte buffer so the file layout does not
// depend on host struct padding. Host float is assumed IEEE binary32 (checked
// once via static_assert) and little-endian byte order is produced explicitly.
void write_f32_array(std::ostream& out, const Tensor& t) {
  static_assert(sizeof(float) == 4, "float must be IEEE binary32");
  std::vector<unsigned char> buf(static_cast<size_t>(t.size()) * 4);
  for (int64_t i = 0; i < t.size(); ++i) {
    float f = static_cast<float>(t.data[static_cast<size_t>(i)]);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int k = 0; k < 4; ++k)
      buf[static_cast<size_t>(i) * 4 + static_cast<size_t>(k)] =
          static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
}

Tensor read_f32_array(std::istream& in, int64_t rows, int64_t cols,
                      const std::string& path) {
  Tensor t(rows, cols);
  std::vector<unsigned char> buf(static_cast<size_t>(t.size()) * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size())))
    throw DataError("checkpoint: truncated array data: " + path);
  for (int64_t i = 0; i < t.size(); ++i) {
    uint32_t bits = 0;
    for (int k = 0; k < 4; ++k)
      bits |= static_cast<uint32_t>(
                  buf[static_cast<size_t>(i) * 4 + static_cast<size_t>(k)])
              << (8 * k);
    float f;
    std::memcpy(&f, &bits, 4);
    t.data[static_cast<size_t>(i)] = static_cast<double>(f);
  }
  return t;
}

struct ArrayRef {
  std::string name;
  int64_t rows = 0;
  int64_t cols = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, HeadModel& model,
                     const Config& cfg, int64_t step, AdamState* adam) {
  if (path.empty()) throw UsageError("checkpoint: empty path");

  // Snap everything that will be persisted to its f32-representable value in
  // memory first. From here on, the in-memory model and the file describe the
  // same numbers exactly.
  model.params.round_values_to_f32();
  if (adam) {
    for (auto& [name, t] : adam->m) t.round_to_f32();
    for (auto& [name, t] : adam->v) t.round_to_f32();
  }

  // The header's config snapshot is authoritative for rebuilding the model at
  // load time, so its model section must describe this model, not whatever
  // the caller's config happens to say.
  Config snap = cfg;
  snap.model = model.config();

  std::vector<ArrayRef> arrays;
  OrderedJson dir = OrderedJson::array();
  auto add_array = [&](const std::string& name, const Tensor& t) {
    arrays.push_back({name, t.rows(), t.cols()});
    OrderedJson e;
    e["name"] = name;
    e["rows"] = t.rows();
    e["cols"] = t.cols();
    dir.push_back(std::move(e));
  };
  for (const auto& [name, entry] : model.params) add_array(name, entry.value);
  if (adam) {
    for (const auto& [name, t] : adam->m) add_array(kAdamMPrefix + name, t);
    for (const auto& [name, t] : adam->v) add_array(kAdamVPrefix + name, t);
  }

  OrderedJson header;
  header["format"] = "headsdf-checkpoint";
  header["format_version"] = kVersion;
  header["stage"] = model.stage();
  header["step"] = step;
  header["alpha"] = model.alpha();
  header["beta"] = model.beta();
  header["identities"] = model.identities();
  header["config"] = OrderedJson::parse(config_to_json(snap));
  if (adam) {
    OrderedJson a;
    a["step_count"] = adam->step_count;
    a["beta1"] = adam->beta1;
    a["beta2"] = adam->beta2;
    a["eps"] = adam->eps;
    header["adam"] = std::move(a);
  } else {
    header["adam"] = nullptr;
  }
  header["arrays"] = std::move(dir);
  const std::string header_text = header.dump();

  const fs::path final_path(path);
  if (final_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(final_path.parent_path(), ec);
  }
  const fs::path tmp_path = final_path.string() + ".tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open for write: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, header_text.size());
    out.write(header_text.data(),
              static_cast<std::streamsize>(header_text.size()));
    for (const ArrayRef& a : arrays) {
      const Tensor* t;
      if (a.name.rfind(kAdamMPrefix, 0) == 0)
        t = &adam->m.at(a.name.substr(std::strlen(kAdamMPrefix)));
      else if (a.name.rfind(kAdamVPrefix, 0) == 0)
        t = &adam->v.at(a.name.substr(std::strlen(kAdamVPrefix)));
      else
        t = &model.params.value(a.name);
      write_f32_array(out, *t);
    }
    out.flush();
    if (!out) throw DataError("checkpoint: write failed: " + path);
  }
  std::error_code ec;
  fs::rename(tmp_path, final_path, ec);
  if (ec) {
    fs::remove(tmp_path, ec);
    throw DataError("checkpoint: cannot move into place: " + path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: not a checkpoint file: " + path);
  const uint32_t version = read_u32(in, path);
  if (version != kVersion)
    throw DataError("checkpoint: unsupported format version " +
                    std::to_string(version) + ": " + path);
  const uint64_t header_len = read_u64(in, path);
  if (header_len > (1ull << 30))
    throw DataError("checkpoint: implausible header size: " + path);
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
    throw DataError("checkpoint: truncated header: " + path);

  Json header;
  try {
    header = Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw DataError(std::string("checkpoint: bad header json: ") + e.what());
  }

  auto require = [&](const char* key) -> const Json& {
    if (!header.contains(key))
      throw DataError(std::string("checkpoint: header missing \"") + key +
                      "\": " + path);
    return header.at(key);
  };
  if (require("format").get<std::string>() != "headsdf-checkpoint")
    throw DataError("checkpoint: unrecognized format tag: " + path);

  const int stage = require("stage").get<int>();
  if (stage != HeadModel::kStageOne && stage != HeadModel::kStageTwo)
    throw DataError("checkpoint: invalid stage tag: " + path);
  const int64_t step = require("step").get<int64_t>();

  Config cfg;
  try {
    cfg = parse_config(require("config").dump());
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: bad config snapshot: ") +
                    e.what());
  }

  std::vector<std::string> ids;
  for (const Json& v : require("identities")) ids.push_back(v.get<std::string>());

  // Rebuild with a fixed seed; every parameter is overwritten below, so the
  // init values never matter, only the parameter layout.
  HeadModel model(cfg.model, ids, /*seed=*/0);
  if (stage == HeadModel::kStageTwo && !model.promote())
    throw DataError("checkpoint: could not rebuild stage-2 layout: " + path);
  model.restore_stage(stage);
  model.restore_identities(ids);

  AdamState adam;
  bool has_adam = false;
  if (!require("adam").is_null()) {
    const Json& a = header.at("adam");
    adam.step_count = a.at("step_count").get<int64_t>();
    adam.beta1 = a.at("beta1").get<double>();
    adam.beta2 = a.at("beta2").get<double>();
    adam.eps = a.at("eps").get<double>();
    has_adam = true;
  }

  std::set<std::string> param_names_in_file;
  for (const Json& e : require("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    const int64_t rows = e.at("rows").get<int64_t>();
    const int64_t cols = e.at("cols").get<int64_t>();
    if (rows < 0 || cols < 0 || rows > (1ll << 30) || cols > (1ll << 30) ||
        rows * cols > (1ll << 28))
      throw DataError("checkpoint: implausible array shape for \"" + name +
                      "\": " + path);
    Tensor t = read_f32_array(in, rows, cols, path);
    if (name.rfind(kAdamMPrefix, 0) == 0) {
      if (!has_adam)
        throw DataError("checkpoint: moment array without optimizer header: " +
                        path);
      adam.m[name.substr(std::strlen(kAdamMPrefix))] = std::move(t);
    } else if (name.rfind(kAdamVPrefix, 0) == 0) {
      if (!has_adam)
        throw DataError("checkpoint: moment array without optimizer header: " +
                        path);
      adam.v[name.substr(std::strlen(kAdamVPrefix))] = std::move(t);
    } else {
      if (!model.params.has(name))
        throw DataError("checkpoint: unknown parameter \"" + name +
                        "\" for this model layout: " + path);
      Tensor& dst = model.params.value(name);
      if (dst.rows() != rows || dst.cols() != cols)
        throw DataError("checkpoint: shape mismatch for \"" + name + "\": " +
                        path);
      dst = std::move(t);
      param_names_in_file.insert(name);
    }
  }
  for (const std::string& name : model.params.names()) {
    if (!param_names_in_file.count(name))
      throw DataError("checkpoint: missing parameter \"" + name + "\": " +
                      path);
  }
  for (const auto& [name, t] : adam.m) {
    if (!model.params.has(name))
      throw DataError("checkpoint: moment for unknown parameter \"" + name +
                      "\": " + path);
    (void)t;
  }

  return LoadedCheckpoint{std::move(model), std::move(cfg), step,
                          std::move(adam), has_adam};
}

}  // namespace headsdf
