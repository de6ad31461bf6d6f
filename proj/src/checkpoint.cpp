#include "restr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "restr/error.hpp"
#include "restr/run_config.hpp"

namespace restr {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_reals(std::ostream& os, std::span<const double> values) {
  std::vector<float> buf(values.begin(), values.end());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& is, std::size_t limit = 1u << 20) {
  const auto n = get<std::uint32_t>(is);
  if (n > limit) throw DataError("checkpoint string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw DataError("checkpoint truncated");
  return s;
}

std::vector<double> get_reals(std::istream& is, std::size_t n) {
  std::vector<float> buf(n);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw DataError("checkpoint truncated");
  }
  return {buf.begin(), buf.end()};
}

}  // namespace

void write_checkpoint(std::ostream& os, Model& model, const OptimizerSnapshot* optimizer) {
  os.write("RSTR", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, format_model_config(model.config()));
  const auto params = model.parameters();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(os, p.name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(os, d);
    put_reals(os, p.tensor.values());
  }
  put<std::uint8_t>(os, optimizer ? 1 : 0);
  if (optimizer) {
    const AdamWState& st = optimizer->state;
    if (st.first.size() != params.size() || st.second.size() != params.size()) {
      throw ConfigError("optimizer state does not match the model parameters");
    }
    put<std::uint64_t>(os, st.step);
    put<std::uint64_t>(os, optimizer->iteration);
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_reals(os, st.first[i]);
      put_reals(os, st.second[i]);
    }
  }
  if (!os) throw DataError("failed writing checkpoint");
}

LoadedCheckpoint read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RSTR", 4) != 0) throw DataError("not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig cfg;
  try {
    cfg = parse_model_config(get_string(is));
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }

  LoadedCheckpoint out{Model(cfg, 0), std::nullopt};
  auto params = out.model.parameters();
  const auto count = get<std::uint32_t>(is);
  if (count != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = get_string(is);
    if (name != p.name) throw DataError("checkpoint tensor '" + name + "' where '" + p.name + "' was expected");
    const auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is);
    if (shape != p.tensor.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(p.tensor.shape()));
    }
    const auto values = get_reals(is, p.tensor.numel());
    std::copy(values.begin(), values.end(), p.tensor.values().begin());
  }
  if (get<std::uint8_t>(is) == 1) {
    OptimizerSnapshot snap;
    snap.state.step = get<std::uint64_t>(is);
    snap.iteration = get<std::uint64_t>(is);
    for (const auto& p : params) {
      snap.state.first.push_back(get_reals(is, p.tensor.numel()));
      snap.state.second.push_back(get_reals(is, p.tensor.numel()));
    }
    out.optimizer = std::move(snap);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const OptimizerSnapshot* optimizer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(os, model, optimizer);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace restr
