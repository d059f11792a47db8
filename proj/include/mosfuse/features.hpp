#pragma once

// Log-mel filterbank features (25 ms Hann window, 10 ms hop, 512-point
// magnitude spectrum, 80 triangular mel filters over 0-8000 Hz, natural log
// with floor 1e-10), mean pooling, and the binary feature cache.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/wav.hpp"

namespace mosfuse {

inline constexpr std::size_t kFrameLen = 400;   // 25 ms at 16 kHz
inline constexpr std::size_t kFrameHop = 160;   // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kMelBins = 80;
inline constexpr double kLogFloor = 1e-10;

struct FrameFeatures {
    Mat frames;  // T x F, F = kMelBins
};

struct UtteranceVector {
    Vec values;
};

namespace detail {

// In-place iterative radix-2 FFT.
inline void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank, kMelBins filters spanning 0-8000 Hz, as a
// (bins x fft_bins) weight matrix over the one-sided spectrum.
inline const Mat& mel_filterbank() {
    static const Mat fb = [] {
        const std::size_t n_fft_bins = kFftSize / 2 + 1;
        const double f_max = 8000.0;
        const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(f_max);
        std::vector<double> centers(kMelBins + 2);
        for (std::size_t i = 0; i < centers.size(); ++i) {
            const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                            static_cast<double>(kMelBins + 1);
            centers[i] = mel_to_hz(mel);
        }
        Mat fb(kMelBins, n_fft_bins, 0.0);
        for (std::size_t m = 0; m < kMelBins; ++m) {
            const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
            for (std::size_t k = 0; k < n_fft_bins; ++k) {
                const double f =
                    static_cast<double>(k) * kSampleRate / static_cast<double>(kFftSize);
                if (f > lo && f < mid)
                    fb(m, k) = (f - lo) / (mid - lo);
                else if (f >= mid && f < hi)
                    fb(m, k) = (hi - f) / (hi - mid);
            }
        }
        return fb;
    }();
    return fb;
}

inline const std::vector<double>& hann_window() {
    static const std::vector<double> w = [] {
        std::vector<double> w(kFrameLen);
        for (std::size_t n = 0; n < kFrameLen; ++n)
            w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                        static_cast<double>(kFrameLen - 1));
        return w;
    }();
    return w;
}

}  // namespace detail

inline FrameFeatures logmel(const Waveform& w) {
    const std::size_t n = w.samples.size();
    if (n < kFrameLen)
        throw Error("waveform shorter than one frame (" + std::to_string(n) + " < " +
                    std::to_string(kFrameLen) + " samples)");
    const std::size_t t_frames = 1 + (n - kFrameLen) / kFrameHop;
    const Mat& fb = detail::mel_filterbank();
    const auto& win = detail::hann_window();

    FrameFeatures out;
    out.frames = Mat(t_frames, kMelBins);
    std::vector<std::complex<double>> buf(kFftSize);
    const std::size_t n_fft_bins = kFftSize / 2 + 1;
    std::vector<double> mag(n_fft_bins);
    for (std::size_t t = 0; t < t_frames; ++t) {
        const std::size_t off = t * kFrameHop;
        for (std::size_t i = 0; i < kFrameLen; ++i)
            buf[i] = w.samples[off + i] * win[i];
        for (std::size_t i = kFrameLen; i < kFftSize; ++i) buf[i] = 0.0;
        detail::fft(buf);
        for (std::size_t k = 0; k < n_fft_bins; ++k) mag[k] = std::abs(buf[k]);
        for (std::size_t m = 0; m < kMelBins; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < n_fft_bins; ++k) e += fb(m, k) * mag[k];
            out.frames(t, m) = std::log(std::max(e, kLogFloor));
        }
    }
    return out;
}

inline UtteranceVector mean_pool(const FrameFeatures& f) {
    if (f.frames.rows == 0) throw Error("mean_pool: no frames");
    UtteranceVector v;
    v.values.assign(f.frames.cols, 0.0);
    for (std::size_t t = 0; t < f.frames.rows; ++t)
        for (std::size_t c = 0; c < f.frames.cols; ++c) v.values[c] += f.frames(t, c);
    for (auto& x : v.values) x /= static_cast<double>(f.frames.rows);
    return v;
}

// Feature cache file: "MOSF", version 0x01, T and F as u32 LE, T*F f32 LE
// row-major, CRC32 of the payload.
inline void write_feature_file(const std::filesystem::path& path, const FrameFeatures& f) {
    std::string payload;
    payload.reserve(f.frames.data.size() * 4);
    auto push_u32 = [&](std::uint32_t v) {
        payload.push_back(static_cast<char>(v & 0xFF));
        payload.push_back(static_cast<char>((v >> 8) & 0xFF));
        payload.push_back(static_cast<char>((v >> 16) & 0xFF));
        payload.push_back(static_cast<char>((v >> 24) & 0xFF));
    };
    push_u32(static_cast<std::uint32_t>(f.frames.rows));
    push_u32(static_cast<std::uint32_t>(f.frames.cols));
    for (double d : f.frames.data) {
        const float fl = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &fl, 4);
        push_u32(bits);
    }
    const std::uint32_t crc =
        crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
    std::string content = "MOSF";
    content.push_back(0x01);
    content += payload;
    char crc_bytes[4] = {static_cast<char>(crc & 0xFF), static_cast<char>((crc >> 8) & 0xFF),
                         static_cast<char>((crc >> 16) & 0xFF),
                         static_cast<char>((crc >> 24) & 0xFF)};
    content.append(crc_bytes, 4);
    atomic_write(path, content);
}

inline FrameFeatures read_feature_file(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    if (content.size() < 17 || content.compare(0, 4, "MOSF") != 0)
        throw Error(path.string() + ": not a feature cache file");
    if (content[4] != 0x01)
        throw Error(path.string() + ": unsupported cache version");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(content.data()) + 5;
    const std::size_t payload_len = content.size() - 9;
    auto get_u32 = [](const unsigned char* q) {
        return static_cast<std::uint32_t>(q[0]) | (static_cast<std::uint32_t>(q[1]) << 8) |
               (static_cast<std::uint32_t>(q[2]) << 16) |
               (static_cast<std::uint32_t>(q[3]) << 24);
    };
    const std::uint32_t t = get_u32(p), f_dim = get_u32(p + 4);
    if (payload_len != 8 + static_cast<std::size_t>(t) * f_dim * 4)
        throw Error(path.string() + ": truncated feature cache");
    const std::uint32_t stored_crc = get_u32(p + payload_len);
    if (crc32(p, payload_len) != stored_crc)
        throw Error(path.string() + ": checksum mismatch");
    FrameFeatures out;
    out.frames = Mat(t, f_dim);
    for (std::size_t i = 0; i < static_cast<std::size_t>(t) * f_dim; ++i) {
        const std::uint32_t bits = get_u32(p + 8 + 4 * i);
        float fl;
        std::memcpy(&fl, &bits, 4);
        out.frames.data[i] = fl;
    }
    return out;
}

// Extract and cache features for every utterance; skips entries whose cache
// file is already newer than the audio. Returns the number of files written.
inline std::size_t cache_features(const MosDataset& d, const std::filesystem::path& out_dir,
                                  double target_rms_db = -26.0) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::size_t written = 0;
    for (const auto& u : d.utterances) {
        const fs::path dst = out_dir / (u.utterance_id + ".fea");
        const fs::path src = u.audio_path;
        if (fs::exists(dst) && fs::exists(src) &&
            fs::last_write_time(dst) >= fs::last_write_time(src))
            continue;
        Waveform w = load_wav(src);
        w = normalize_level(w, target_rms_db).waveform;
        write_feature_file(dst, logmel(w));
        ++written;
    }
    return written;
}

inline UtteranceVector load_pooled(const std::filesystem::path& cache_dir,
                                   const std::string& utterance_id) {
    return mean_pool(read_feature_file(cache_dir / (utterance_id + ".fea")));
}

}  // namespace mosfuse
