#include "catnet/wav.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace catnet {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

std::uint32_t read_u32(const std::vector<unsigned char>& b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}

std::uint16_t read_u16(const std::vector<unsigned char>& b, std::size_t at) {
  return std::uint16_t(b[at] | b[at + 1] << 8);
}

bool tag_is(const std::vector<unsigned char>& b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

void append_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

void append_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

void append_tag(std::vector<unsigned char>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}

}  // namespace

AudioSegment read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorKind::io, "cannot open WAV file '", path, "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF")) {
    throw_error(ErrorKind::io, "'", path, "': missing RIFF tag at byte 0");
  }
  if (!tag_is(bytes, 8, "WAVE")) {
    throw_error(ErrorKind::io, "'", path, "': missing WAVE tag at byte 8");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  std::size_t data_at = 0, data_size = 0;
  bool have_data = false;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = read_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (body + chunk_size > bytes.size()) {
      throw_error(ErrorKind::io, "'", path, "': chunk at byte ", at, " claims ", chunk_size,
                  " bytes but only ", bytes.size() - body, " remain");
    }
    if (tag_is(bytes, at, "fmt ")) {
      if (chunk_size < 16) {
        throw_error(ErrorKind::io, "'", path, "': fmt chunk at byte ", at, " has ", chunk_size,
                    " bytes, expected at least 16");
      }
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      sample_rate = read_u32(bytes, body + 4);
      bits = read_u16(bytes, body + 14);
      have_fmt = true;
    } else if (tag_is(bytes, at, "data")) {
      data_at = body;
      data_size = chunk_size;
      have_data = true;
    }
    // RIFF chunks are word aligned; odd sizes carry a pad byte.
    at = body + chunk_size + (chunk_size & 1);
  }

  if (!have_fmt) throw_error(ErrorKind::io, "'", path, "': no fmt chunk found");
  if (!have_data) throw_error(ErrorKind::io, "'", path, "': no data chunk found");
  if (channels == 0) throw_error(ErrorKind::io, "'", path, "': fmt declares zero channels");
  if (sample_rate == 0) throw_error(ErrorKind::io, "'", path, "': fmt declares zero sample rate");

  std::size_t bytes_per_sample;
  if (format == kFormatPcm && bits == 16) {
    bytes_per_sample = 2;
  } else if (format == kFormatFloat && bits == 32) {
    bytes_per_sample = 4;
  } else {
    throw_error(ErrorKind::io, "'", path, "': unsupported encoding (format ", format, ", ", bits,
                " bits); expected 16-bit PCM or 32-bit float");
  }
  const std::size_t frame_bytes = bytes_per_sample * channels;
  if (data_size % frame_bytes != 0) {
    throw_error(ErrorKind::io, "'", path, "': data chunk at byte ", data_at - 8, " holds ",
                data_size, " bytes, not a multiple of the ", frame_bytes, "-byte frame");
  }
  const std::size_t frames = data_size / frame_bytes;

  AudioSegment out;
  out.sample_rate = sample_rate;
  out.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t p = data_at + (f * channels + c) * bytes_per_sample;
      if (bytes_per_sample == 2) {
        const auto raw = static_cast<std::int16_t>(read_u16(bytes, p));
        out.channels[c][f] = static_cast<double>(raw) / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(bytes, p);
        out.channels[c][f] = static_cast<double>(std::bit_cast<float>(raw));
      }
    }
  }
  return out;
}

void write_wav(const std::string& path, const AudioSegment& segment, WavEncoding encoding) {
  segment.validate();
  const std::size_t channels = segment.channel_count();
  const std::size_t frames = segment.length();
  const std::size_t bytes_per_sample = encoding == WavEncoding::pcm16 ? 2 : 4;
  const std::size_t data_size = frames * channels * bytes_per_sample;

  std::vector<unsigned char> bytes;
  bytes.reserve(44 + data_size);
  append_tag(bytes, "RIFF");
  append_u32(bytes, static_cast<std::uint32_t>(36 + data_size));
  append_tag(bytes, "WAVE");
  append_tag(bytes, "fmt ");
  append_u32(bytes, 16);
  append_u16(bytes, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  append_u16(bytes, static_cast<std::uint16_t>(channels));
  append_u32(bytes, static_cast<std::uint32_t>(segment.sample_rate));
  append_u32(bytes, static_cast<std::uint32_t>(segment.sample_rate * channels * bytes_per_sample));
  append_u16(bytes, static_cast<std::uint16_t>(channels * bytes_per_sample));
  append_u16(bytes, static_cast<std::uint16_t>(8 * bytes_per_sample));
  append_tag(bytes, "data");
  append_u32(bytes, static_cast<std::uint32_t>(data_size));

  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = segment.channels[c][f];
      if (encoding == WavEncoding::pcm16) {
        double scaled = std::lrint(v * 32768.0);
        if (scaled > 32767.0) scaled = 32767.0;
        if (scaled < -32768.0) scaled = -32768.0;
        append_u16(bytes, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
      } else {
        append_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_error(ErrorKind::io, "cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_error(ErrorKind::io, "failed writing ", bytes.size(), " bytes to '", path, "'");
}

}  // namespace catnet
