#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "quesnet/config.hpp"
#include "quesnet/corpus.hpp"
#include "quesnet/errors.hpp"
#include "quesnet/params.hpp"
#include "quesnet/tensor.hpp"

namespace quesnet {

// Checkpoint file: magic "QNCKPT", u32 format version, config snapshot as
// UTF-8 JSON, vocabulary, RNG state, then a name -> shape manifest followed
// by the parameter blobs as little-endian f64. Integers are written
// little-endian byte by byte so files are portable across hosts.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("checkpoint " + path + ": truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("checkpoint " + path + ": truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& is, const std::string& path) {
  std::uint64_t v = get_u64(is, path);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline std::string get_str(std::istream& is, const std::string& path) {
  std::uint64_t n = get_u64(is, path);
  if (n > (1ull << 32))
    throw IoError("checkpoint " + path + ": implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw IoError("checkpoint " + path + ": truncated");
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Config& cfg,
                            const Vocabulary& vocab, const ParamMap& ps,
                            const std::string& rng_state) {
  using namespace ckpt_detail;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write("QNCKPT", 6);
  put_u32(os, kCheckpointVersion);
  put_str(os, cfg.to_json().dump());
  put_u64(os, vocab.size());
  for (const std::string& w : vocab.words()) put_str(os, w);
  put_str(os, rng_state);
  put_u64(os, ps.size());
  for (const auto& [name, t] : ps) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_u64(os, d);
  }
  for (const auto& [name, t] : ps)
    for (double v : t.data()) put_f64(os, v);
  os.flush();
  if (!os) throw IoError("write failed for checkpoint " + path);
}

struct LoadedCheckpoint {
  Config config;
  Vocabulary vocab;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;  // manifest order

  // Copies every stored tensor into the matching registered parameter.
  // Names absent from ps and shape disagreements are hard errors; extra
  // parameters in ps (e.g. freshly initialized task heads) are left alone.
  void install(ParamMap& ps) const {
    for (const auto& [name, t] : tensors) {
      if (!ps.has(name))
        throw UsageError("checkpoint names unknown parameter " + name);
      Tensor dst = ps.at(name);
      if (dst.shape() != t.shape())
        throw DimensionError("checkpoint shape mismatch for " + name + ": " +
                             shape_str(t.shape()) + " vs model " +
                             shape_str(dst.shape()));
      dst.data() = t.data();
    }
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[6];
  if (!is.read(magic, 6) || std::string(magic, 6) != "QNCKPT")
    throw IoError("checkpoint " + path + ": bad magic");
  std::uint32_t version = get_u32(is, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path + ": format version " +
                  std::to_string(version) + " unsupported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  LoadedCheckpoint out;
  out.config = Config::from_json(json::parse(get_str(is, path)));
  std::uint64_t nwords = get_u64(is, path);
  std::vector<std::string> words;
  words.reserve(nwords);
  for (std::uint64_t i = 0; i < nwords; ++i) words.push_back(get_str(is, path));
  out.vocab = Vocabulary(std::move(words));
  out.rng_state = get_str(is, path);
  std::uint64_t count = get_u64(is, path);
  std::vector<Shape> shapes;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_str(is, path);
    std::uint32_t ndim = get_u32(is, path);
    Shape sh;
    for (std::uint32_t d = 0; d < ndim; ++d)
      sh.push_back(static_cast<std::size_t>(get_u64(is, path)));
    out.tensors.emplace_back(std::move(name), Tensor());
    shapes.push_back(std::move(sh));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    std::size_t n = 1;
    for (std::size_t d : shapes[i]) n *= d;
    std::vector<double> vals(n);
    for (double& v : vals) v = get_f64(is, path);
    out.tensors[i].second = Tensor::from(shapes[i], std::move(vals));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("checkpoint " + path + ": trailing bytes");
  return out;
}

}  // namespace quesnet
