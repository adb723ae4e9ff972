#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "xvf/error.hpp"
#include "xvf/features.hpp"

namespace xvf {

namespace {

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t pos) {
  require<IoError>(pos + sizeof(T) <= buf.size(), "WAV file truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open WAV file '", path.string(), "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require<IoError>(buf.size() >= 12 && std::memcmp(buf.data(), "RIFF", 4) == 0 &&
                       std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
                   "'", path.string(), "' is not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto size = read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && size >= 26) format = read_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      require<IoError>(have_fmt, "WAV data chunk before fmt chunk");
      require<IoError>(channels == 1, "only mono WAV is supported, got ", channels, " channels");
      require<IoError>(rate > 0, "WAV sample rate must be positive");
      const std::size_t avail = std::min<std::size_t>(size, buf.size() - body);
      Waveform wave;
      wave.sample_rate = rate;
      if (format == 1 && bits == 16) {
        wave.samples.resize(avail / 2);
        for (std::size_t i = 0; i < wave.samples.size(); ++i) {
          wave.samples[i] = read_le<std::int16_t>(buf, body + 2 * i) / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        wave.samples.resize(avail / 4);
        for (std::size_t i = 0; i < wave.samples.size(); ++i) {
          wave.samples[i] = read_le<float>(buf, body + 4 * i);
        }
      } else {
        fail<IoError>("unsupported WAV encoding (format ", format, ", ", bits, " bits)");
      }
      return wave;
    }
    pos = body + size + (size & 1);
  }
  fail<IoError>("'", path.string(), "' has no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require<IoError>(out.good(), "cannot open '", path.string(), "' for writing");
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const auto rate = static_cast<std::uint32_t>(wave.sample_rate);
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, rate);
  write_le<std::uint32_t>(out, rate * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, 2 * n);
  for (double s : wave.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
  }
  require<IoError>(out.good(), "failed writing '", path.string(), "'");
}

}  // namespace xvf
