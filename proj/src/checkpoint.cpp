#include <sstream>

#include <zlib.h>

#include "itct/binary_io.hpp"
#include "itct/trainer.hpp"

namespace itct {

namespace {

constexpr char kCheckpointMagic[4] = {'I', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t crc32_of(std::span<const char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<bool> bools_from_json(const nlohmann::json& j) {
  std::vector<bool> out;
  for (const auto& v : j) out.push_back(v.get<bool>());
  return out;
}

}  // namespace

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  std::ostringstream rng_text;
  rng_text << s.rng;
  auto clones = nlohmann::json::array();
  for (const auto& c : s.clone_history) clones.push_back({c.step, c.source, c.target});
  auto buffer = nlohmann::json::array();
  for (const auto& b : s.global_buffer) buffer.push_back({{"mass", b.mass}, {"count", b.count}});
  const auto& a = s.epoch_stats;
  nlohmann::json header = {
      {"config", to_json(s.config)},
      {"dims",
       {{"input_dim", s.dims.input_dim},
        {"hidden_dim", s.dims.hidden_dim},
        {"alphabet_size", s.dims.alphabet_size}}},
      {"step", s.step},
      {"epoch", s.epoch},
      {"position", s.position},
      {"order", s.order},
      {"max_psi", s.max_psi},
      {"max_phi", s.max_phi},
      {"mass_psi", s.mass_psi},
      {"mass_count", s.mass_count},
      {"last_max_psi", s.last_max_psi},
      {"last_max_phi", s.last_max_phi},
      {"last_marginal", s.last_marginal},
      {"live_mask", s.live_mask},
      {"cloned", s.cloned},
      {"clone_history", clones},
      {"epoch_stats",
       {a.cross_entropy, a.marginal_entropy, a.mi_bound, a.loss, a.minibatches, a.windows,
        a.saturation}},
      {"global_buffer", buffer},
      {"rng", rng_text.str()}};

  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  const auto entries = s.params.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.rows));
    w.u32(static_cast<std::uint32_t>(e.cols));
    for (float v : e.value) w.f32(v);
  }
  w.u32(crc32_of(w.bytes()));
  w.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string src = path.string();
  if (bytes.size() < 12) throw DataError(src + ": too short to be a checkpoint");
  ByteReader r(bytes, src);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic))
    throw DataError(src + ": bad magic, not an ITCK checkpoint (version error)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(src + ": unsupported checkpoint version " + std::to_string(version));
  {
    ByteReader tail(std::span<const char>(bytes).subspan(bytes.size() - 4), src);
    const auto stored = tail.u32();
    const auto actual = crc32_of(std::span<const char>(bytes).first(bytes.size() - 4));
    if (stored != actual) throw DataError(src + ": checksum mismatch, file is corrupt");
  }

  TrainState s;
  try {
    const auto header = nlohmann::json::parse(r.str());
    s.config = train_config_from_json(header.at("config"));
    const auto& d = header.at("dims");
    s.dims = {d.at("input_dim").get<std::size_t>(), d.at("hidden_dim").get<std::size_t>(),
              d.at("alphabet_size").get<std::size_t>()};
    s.step = header.at("step").get<std::uint64_t>();
    s.epoch = header.at("epoch").get<std::uint64_t>();
    s.position = header.at("position").get<std::size_t>();
    s.order = header.at("order").get<std::vector<std::size_t>>();
    s.max_psi = header.at("max_psi").get<std::vector<float>>();
    s.max_phi = header.at("max_phi").get<std::vector<float>>();
    s.mass_psi = header.at("mass_psi").get<std::vector<double>>();
    s.mass_count = header.at("mass_count").get<double>();
    s.last_max_psi = header.at("last_max_psi").get<std::vector<float>>();
    s.last_max_phi = header.at("last_max_phi").get<std::vector<float>>();
    s.last_marginal = header.at("last_marginal").get<std::vector<double>>();
    s.live_mask = bools_from_json(header.at("live_mask"));
    s.cloned = header.at("cloned").get<bool>();
    for (const auto& c : header.at("clone_history"))
      s.clone_history.push_back(
          {c.at(0).get<std::uint64_t>(), c.at(1).get<std::size_t>(), c.at(2).get<std::size_t>()});
    const auto& a = header.at("epoch_stats");
    s.epoch_stats = {a.at(0).get<double>(),        a.at(1).get<double>(),
                     a.at(2).get<double>(),        a.at(3).get<double>(),
                     a.at(4).get<std::uint64_t>(), a.at(5).get<std::uint64_t>(),
                     a.at(6).get<std::uint64_t>()};
    for (const auto& b : header.at("global_buffer"))
      s.global_buffer.push_back({b.at("mass").get<std::vector<double>>(), b.at("count").get<double>()});
    std::istringstream rng_text(header.at("rng").get<std::string>());
    rng_text >> s.rng;
    if (!rng_text) throw DataError(src + ": bad rng state");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(src + ": bad checkpoint header: " + e.what());
  }

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    auto& e = s.params.add(name, rows, cols);
    for (auto& v : e.value) v = r.f32();
  }
  if (r.remaining() != 4) throw DataError(src + ": trailing bytes after parameter arrays");
  if (!(dims_of(s.params) == s.dims)) throw DataError(src + ": parameter shapes disagree with header");
  return s;
}

}  // namespace itct
