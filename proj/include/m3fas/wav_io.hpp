#pragma once

#include "m3fas/types.hpp"

#include <string>

namespace m3fas {

// Mono 16-bit signed PCM RIFF/WAVE, little-endian. Samples must be finite
// and within [-1, 1]; round-trip error is bounded by the 16-bit quantization
// step (max abs difference <= 2^-15).
void write_wav(const Waveform& w, const std::string& path);
Waveform read_wav(const std::string& path);

}  // namespace m3fas
