#pragma once

#include <string>

#include "catnet/audio.hpp"

// Minimal RIFF/WAVE codec: 16-bit PCM and 32-bit IEEE float, little endian,
// interleaved channels. Unknown chunks are skipped on read.

namespace catnet {

enum class WavEncoding { pcm16, float32 };

AudioSegment read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioSegment& segment, WavEncoding encoding);

}  // namespace catnet
