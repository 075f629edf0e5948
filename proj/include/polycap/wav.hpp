#pragma once

#include <filesystem>
#include <vector>

namespace polycap {

/// Mono audio in [-1, 1]. Multi-channel files are averaged to mono at load.
struct AudioTrack {
  std::vector<float> samples;
  double sample_rate = 0.0;

  double duration() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit float samples. Throws InvalidAudio.
AudioTrack read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioTrack& track,
               WavEncoding encoding = WavEncoding::Pcm16);

}  // namespace polycap
