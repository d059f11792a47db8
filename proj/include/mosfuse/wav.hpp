#pragma once

// 16-bit PCM mono 16 kHz WAV reading/writing and RMS level normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"

namespace mosfuse {

inline constexpr int kSampleRate = 16000;

struct Waveform {
    std::vector<double> samples;  // in [-1, 1]
    int sample_rate = kSampleRate;
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline Waveform load_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open wav file: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw Error(path.string() + ": not a RIFF/WAVE file");

    // walk chunks for fmt and data
    std::size_t pos = 12;
    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::uint32_t data_len = 0;
    while (pos + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + pos);
        const std::uint32_t len = detail::read_u32(buf.data() + pos + 4);
        if (pos + 8 + len > buf.size()) throw Error(path.string() + ": truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw Error(path.string() + ": short fmt chunk");
            const unsigned char* f = buf.data() + pos + 8;
            format = detail::read_u16(f);
            channels = detail::read_u16(f + 2);
            rate = detail::read_u32(f + 4);
            bits = detail::read_u16(f + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = buf.data() + pos + 8;
            data_len = len;
        }
        pos += 8 + len + (len & 1);
    }
    if (!have_fmt || data == nullptr) throw Error(path.string() + ": missing fmt or data chunk");
    if (format != 1 || bits != 16) throw Error(path.string() + ": 16-bit PCM required");
    if (channels != 1) throw Error(path.string() + ": mono required");
    if (rate != kSampleRate)
        throw Error(path.string() + ": sample rate must be 16000, got " + std::to_string(rate));
    if (data_len < 2) throw Error(path.string() + ": empty data chunk");

    Waveform w;
    w.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const std::int16_t s =
            static_cast<std::int16_t>(detail::read_u16(data + 2 * i));
        w.samples[i] = static_cast<double>(s) / 32768.0;
    }
    return w;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
    const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
    const std::uint32_t data_len = n * 2;
    std::vector<unsigned char> out;
    out.reserve(44 + data_len);
    auto push_u32 = [&](std::uint32_t v) {
        out.push_back(v & 0xFF); out.push_back((v >> 8) & 0xFF);
        out.push_back((v >> 16) & 0xFF); out.push_back((v >> 24) & 0xFF);
    };
    auto push_u16 = [&](std::uint16_t v) {
        out.push_back(v & 0xFF); out.push_back((v >> 8) & 0xFF);
    };
    auto push_tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };
    push_tag("RIFF"); push_u32(36 + data_len); push_tag("WAVE");
    push_tag("fmt "); push_u32(16); push_u16(1); push_u16(1);
    push_u32(kSampleRate); push_u32(kSampleRate * 2); push_u16(2); push_u16(16);
    push_tag("data"); push_u32(data_len);
    for (double s : w.samples) {
        double c = std::max(-1.0, std::min(1.0, s));
        const std::int16_t q = static_cast<std::int16_t>(std::lrint(c * 32767.0));
        push_u16(static_cast<std::uint16_t>(q));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write wav: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

struct NormalizeResult {
    Waveform waveform;
    std::size_t clipped = 0;  // samples clipped to [-1, 1]
};

// Scale so that 20*log10(rms) equals target_rms_db, then clip to [-1, 1].
inline NormalizeResult normalize_level(const Waveform& w, double target_rms_db = -26.0) {
    double ss = 0.0;
    for (double s : w.samples) ss += s * s;
    const double rms = std::sqrt(ss / static_cast<double>(w.samples.size()));
    if (rms == 0.0) throw Error("cannot normalize silence");
    const double target_rms = std::pow(10.0, target_rms_db / 20.0);
    const double gain = target_rms / rms;
    NormalizeResult out;
    out.waveform.sample_rate = w.sample_rate;
    out.waveform.samples.reserve(w.samples.size());
    for (double s : w.samples) {
        double v = s * gain;
        if (v > 1.0) { v = 1.0; ++out.clipped; }
        else if (v < -1.0) { v = -1.0; ++out.clipped; }
        out.waveform.samples.push_back(v);
    }
    return out;
}

}  // namespace mosfuse
