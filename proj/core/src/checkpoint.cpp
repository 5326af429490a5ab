#include "savos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "savos/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as little-endian raw IEEE values");

namespace savos {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'C', 'K'};
constexpr int kVersion = 1;

template <typename T>
void append_raw(std::string& out, const std::vector<T>& v) {
  const std::size_t bytes = v.size() * sizeof(T);
  const std::size_t at = out.size();
  out.resize(at + bytes);
  std::memcpy(out.data() + at, v.data(), bytes);
}

template <typename T>
void take_raw(const std::string& in, std::size_t& at, std::vector<T>& v, std::size_t count) {
  const std::size_t bytes = count * sizeof(T);
  if (at + bytes > in.size()) throw FormatError("checkpoint: payload shorter than its header");
  v.resize(count);
  std::memcpy(v.data(), in.data() + at, bytes);
  at += bytes;
}

std::vector<float> flatten(SavosNet<float>& net) {
  std::vector<float> out;
  out.reserve(net.param_count());
  for (const auto& p : net.params()) out.insert(out.end(), p.value->begin(), p.value->end());
  return out;
}

bool same_config(const ModelConfig& a, const ModelConfig& b) {
  return a.patch_size == b.patch_size && a.feature_channels == b.feature_channels &&
         a.hidden_channels == b.hidden_channels && a.encoder_depth == b.encoder_depth &&
         a.decoder_depth == b.decoder_depth;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  nlohmann::json header = {
      {"version", kVersion},
      {"model", cp.model},
      {"step", cp.step},
      {"param_count", cp.params.size()},
      {"optimizer",
       {{"present", cp.has_optimizer}, {"step", cp.adam_step}, {"count", cp.adam_m.size()}}},
  };
  require(cp.adam_m.size() == cp.adam_v.size(), "save_checkpoint: moment vectors disagree");
  const std::string hs = header.dump();

  std::string blob;
  blob.append(kMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
  blob.append(reinterpret_cast<const char*>(&len), 4);
  blob += hs;
  append_raw(blob, cp.params);
  append_raw(blob, cp.adam_m);
  append_raw(blob, cp.adam_v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw FormatError("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (blob.size() < 8 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic");
  std::uint32_t len = 0;
  std::memcpy(&len, blob.data() + 4, 4);
  if (8 + static_cast<std::size_t>(len) > blob.size())
    throw FormatError("checkpoint: header length exceeds the file");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(8, len));
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint: unparsable header");
  }
  Checkpoint cp;
  try {
    if (header.at("version").get<int>() != kVersion)
      throw FormatError("checkpoint: unsupported version");
    cp.model = header.at("model").get<ModelConfig>();
    cp.step = header.at("step").get<std::uint64_t>();
    const auto& opt = header.at("optimizer");
    cp.has_optimizer = opt.at("present").get<bool>();
    cp.adam_step = opt.at("step").get<std::uint64_t>();

    std::size_t at = 8 + len;
    take_raw(blob, at, cp.params, header.at("param_count").get<std::size_t>());
    const std::size_t moments = opt.at("count").get<std::size_t>();
    take_raw(blob, at, cp.adam_m, moments);
    take_raw(blob, at, cp.adam_v, moments);
    if (at != blob.size()) throw FormatError("checkpoint: trailing bytes after the payload");
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint: header is missing required fields");
  }
  return cp;
}

Checkpoint snapshot(SavosNet<float>& net, std::uint64_t step, const Adam<float>* opt) {
  Checkpoint cp;
  cp.model = net.config();
  cp.step = step;
  cp.params = flatten(net);
  if (opt) {
    cp.has_optimizer = true;
    cp.adam_step = static_cast<std::uint64_t>(opt->step_count);
    for (const auto& m : opt->m) cp.adam_m.insert(cp.adam_m.end(), m.begin(), m.end());
    for (const auto& v : opt->v) cp.adam_v.insert(cp.adam_v.end(), v.begin(), v.end());
  }
  return cp;
}

void restore(const Checkpoint& cp, SavosNet<float>& net, Adam<float>* opt) {
  if (!same_config(cp.model, net.config()))
    throw ConfigError("restore: checkpoint model config disagrees with the target net");
  auto reg = net.params();
  std::size_t total = 0;
  for (const auto& p : reg) total += p.value->size();
  if (total != cp.params.size())
    throw ConfigError("restore: checkpoint parameter count disagrees with the target net");

  std::size_t at = 0;
  for (const auto& p : reg) {
    std::copy(cp.params.begin() + static_cast<std::ptrdiff_t>(at),
              cp.params.begin() + static_cast<std::ptrdiff_t>(at + p.value->size()),
              p.value->begin());
    at += p.value->size();
  }

  if (!opt) return;
  opt->m.clear();
  opt->v.clear();
  opt->step_count = 0;
  if (!cp.has_optimizer) return;
  opt->step_count = static_cast<std::int64_t>(cp.adam_step);
  if (cp.adam_m.empty()) return;
  if (cp.adam_m.size() != total)
    throw ConfigError("restore: checkpoint moment count disagrees with the target net");
  std::size_t mat = 0;
  for (const auto& p : reg) {
    const std::size_t n = p.value->size();
    opt->m.emplace_back(cp.adam_m.begin() + static_cast<std::ptrdiff_t>(mat),
                        cp.adam_m.begin() + static_cast<std::ptrdiff_t>(mat + n));
    opt->v.emplace_back(cp.adam_v.begin() + static_cast<std::ptrdiff_t>(mat),
                        cp.adam_v.begin() + static_cast<std::ptrdiff_t>(mat + n));
    mat += n;
  }
}

std::uint64_t fingerprint(const std::vector<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (float f : params) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::uint64_t fingerprint(SavosNet<float>& net) { return fingerprint(flatten(net)); }

}  // namespace savos
