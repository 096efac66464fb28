#pragma once

#include <cstddef>
#include <vector>

#include "catnet/errors.hpp"

// Multichannel audio in memory. Samples are doubles nominally in [-1, 1];
// intermediate processing may exceed that range, only the PCM writer clamps.

namespace catnet {

struct AudioSegment {
  std::vector<std::vector<double>> channels;
  std::size_t sample_rate = 0;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }

  void validate() const {
    if (sample_rate == 0) throw_error(ErrorKind::data, "audio segment has zero sample rate");
    if (channels.empty()) throw_error(ErrorKind::data, "audio segment has no channels");
    for (const auto& c : channels) {
      if (c.size() != channels.front().size()) {
        throw_error(ErrorKind::data, "audio segment channels have unequal lengths (",
                    channels.front().size(), " vs ", c.size(), ")");
      }
    }
  }

  static AudioSegment silence(std::size_t channel_count, std::size_t length,
                              std::size_t sample_rate) {
    AudioSegment s;
    s.channels.assign(channel_count, std::vector<double>(length, 0.0));
    s.sample_rate = sample_rate;
    return s;
  }
};

// a + b elementwise; shapes and rates must agree.
inline AudioSegment add_segments(const AudioSegment& a, const AudioSegment& b) {
  if (a.sample_rate != b.sample_rate || a.channel_count() != b.channel_count() ||
      a.length() != b.length()) {
    throw_error(ErrorKind::contract, "cannot add segments of different shape or rate");
  }
  AudioSegment out = a;
  for (std::size_t c = 0; c < out.channels.size(); ++c)
    for (std::size_t i = 0; i < out.channels[c].size(); ++i)
      out.channels[c][i] += b.channels[c][i];
  return out;
}

inline AudioSegment sub_segments(const AudioSegment& a, const AudioSegment& b) {
  if (a.sample_rate != b.sample_rate || a.channel_count() != b.channel_count() ||
      a.length() != b.length()) {
    throw_error(ErrorKind::contract, "cannot subtract segments of different shape or rate");
  }
  AudioSegment out = a;
  for (std::size_t c = 0; c < out.channels.size(); ++c)
    for (std::size_t i = 0; i < out.channels[c].size(); ++i)
      out.channels[c][i] -= b.channels[c][i];
  return out;
}

}  // namespace catnet
