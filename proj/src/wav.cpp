#include "polycap/wav.hpp"

#include "polycap/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace polycap {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace

AudioTrack read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) { fail(ErrorCode::InvalidAudio, path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    bad("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) bad("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) bad("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible && size >= 40) format = le16(chunk + 8 + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) bad("missing fmt chunk");
  if (!data) bad("missing data chunk");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) bad("unsupported sample format (need PCM16 or float32)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  AudioTrack track;
  track.sample_rate = rate;
  track.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else {
        acc += std::bit_cast<float>(le32(p));
      }
    }
    track.samples[i] = static_cast<float>(acc / channels);
  }
  if (track.samples.empty()) bad("no samples");
  return track;
}

void write_wav(const std::filesystem::path& path, const AudioTrack& track, WavEncoding encoding) {
  if (!(track.sample_rate > 0)) fail(ErrorCode::InvalidAudio, "sample rate must be positive");
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(track.sample_rate));
  const std::uint32_t data_size = static_cast<std::uint32_t>(track.samples.size() * (bits / 8));

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put32(out, 36 + data_size);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, pcm ? kFormatPcm : kFormatFloat);
  put16(out, 1);
  put32(out, rate);
  put32(out, rate * (bits / 8));
  put16(out, bits / 8);
  put16(out, bits);
  out += "data";
  put32(out, data_size);
  for (float s : track.samples) {
    if (pcm) {
      const double clamped = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
    } else {
      put32(out, std::bit_cast<std::uint32_t>(s));
    }
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace polycap
