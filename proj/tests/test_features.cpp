#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mosfuse/features.hpp"
#include "mosfuse/rng.hpp"
#include "mosfuse/wav.hpp"

namespace fs = std::filesystem;
using mosfuse::Waveform;

namespace {

Waveform sine(double amplitude, double freq_hz, double seconds) {
    Waveform w;
    const std::size_t n = static_cast<std::size_t>(seconds * mosfuse::kSampleRate);
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        w.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * freq_hz *
                                            static_cast<double>(i) / mosfuse::kSampleRate);
    return w;
}

double rms(const Waveform& w) {
    double s = 0;
    for (double x : w.samples) s += x * x;
    return std::sqrt(s / static_cast<double>(w.samples.size()));
}

}  // namespace

TEST_CASE("wav round-trip and scaling") {
    const fs::path p = fs::temp_directory_path() / "t.wav";
    Waveform w;
    w.samples = {0.0, 0.5, -0.25, 0.999};
    mosfuse::write_wav(p, w);
    auto r = mosfuse::load_wav(p);
    REQUIRE(r.samples.size() == 4);
    CHECK(r.samples[0] == 0.0);
    // 0.5 quantizes to round(0.5*32767)=16384, reads back as 16384/32768 = 0.5
    CHECK(r.samples[1] == 0.5);
    CHECK_THAT(r.samples[2], Catch::Matchers::WithinAbs(-0.25, 1e-4));
}

TEST_CASE("wav of zeros loads as zeros") {
    const fs::path p = fs::temp_directory_path() / "tz.wav";
    Waveform w;
    w.samples.assign(16000, 0.0);
    mosfuse::write_wav(p, w);
    auto r = mosfuse::load_wav(p);
    REQUIRE(r.samples.size() == 16000);
    for (double s : r.samples) REQUIRE(s == 0.0);
}

TEST_CASE("wav error paths") {
    const fs::path p = fs::temp_directory_path() / "bad.wav";
    {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << "not a wav at all";
    }
    CHECK_THROWS_AS(mosfuse::load_wav(p), mosfuse::Error);

    // stereo: patch the channel count in a valid header
    const fs::path sp = fs::temp_directory_path() / "stereo.wav";
    Waveform w;
    w.samples.assign(100, 0.1);
    mosfuse::write_wav(sp, w);
    {
        std::fstream f(sp, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(22);
        const char two = 2;
        f.write(&two, 1);
    }
    CHECK_THROWS_WITH(mosfuse::load_wav(sp), Catch::Matchers::ContainsSubstring("mono"));
    CHECK_THROWS_AS(mosfuse::load_wav("/nonexistent.wav"), mosfuse::Error);
}

TEST_CASE("normalize_level hits the target RMS") {
    auto w = sine(0.1, 440.0, 1.0);
    auto out = mosfuse::normalize_level(w, -26.0);
    const double target = std::pow(10.0, -26.0 / 20.0);
    CHECK_THAT(20.0 * std::log10(rms(out.waveform)),
               Catch::Matchers::WithinAbs(-26.0, 1e-6));
    // sine RMS is a/sqrt(2): peak amplitude should be target*sqrt(2)
    double peak = 0;
    for (double s : out.waveform.samples) peak = std::max(peak, std::abs(s));
    CHECK_THAT(peak, Catch::Matchers::WithinAbs(target * std::sqrt(2.0), 1e-3));
}

TEST_CASE("normalize_level idempotent and rejects silence") {
    auto w = sine(0.3, 1000.0, 0.5);
    auto once = mosfuse::normalize_level(w, -26.0);
    auto twice = mosfuse::normalize_level(once.waveform, -26.0);
    REQUIRE(once.waveform.samples.size() == twice.waveform.samples.size());
    for (std::size_t i = 0; i < once.waveform.samples.size(); ++i)
        REQUIRE_THAT(twice.waveform.samples[i],
                     Catch::Matchers::WithinAbs(once.waveform.samples[i], 1e-9));

    Waveform z;
    z.samples.assign(100, 0.0);
    CHECK_THROWS_WITH(mosfuse::normalize_level(z), Catch::Matchers::ContainsSubstring("silence"));
}

TEST_CASE("logmel: zeros hit the log floor, short input rejected") {
    Waveform z;
    z.samples.assign(16000, 0.0);
    auto f = mosfuse::logmel(z);
    CHECK(f.frames.rows == 1 + (16000 - 400) / 160);
    CHECK(f.frames.cols == 80);
    for (double v : f.frames.data) REQUIRE(v == std::log(1e-10));

    Waveform s;
    s.samples.assign(399, 0.1);
    CHECK_THROWS_AS(mosfuse::logmel(s), mosfuse::Error);
}

TEST_CASE("logmel: 1 kHz tone peaks at the right mel filter") {
    auto w = sine(0.5, 1000.0, 0.5);
    auto f = mosfuse::logmel(w);
    auto pooled = mosfuse::mean_pool(f);
    std::size_t argmax = 0;
    for (std::size_t m = 1; m < pooled.values.size(); ++m)
        if (pooled.values[m] > pooled.values[argmax]) argmax = m;

    // oracle: evaluate filterbank centers directly, find the filter whose
    // center frequency is nearest 1 kHz
    auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto mel_to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
    const double mel_hi = hz_to_mel(8000.0);
    std::size_t nearest = 0;
    double best = 1e18;
    for (std::size_t m = 0; m < 80; ++m) {
        const double center = mel_to_hz(mel_hi * static_cast<double>(m + 1) / 81.0);
        if (std::abs(center - 1000.0) < best) {
            best = std::abs(center - 1000.0);
            nearest = m;
        }
    }
    // tone energy may straddle adjacent filters
    CHECK(std::abs(static_cast<long>(argmax) - static_cast<long>(nearest)) <= 1);
}

TEST_CASE("logmel deterministic") {
    auto w = sine(0.2, 523.0, 0.3);
    auto a = mosfuse::logmel(w);
    auto b = mosfuse::logmel(w);
    CHECK(a.frames.data == b.frames.data);
}

TEST_CASE("mean_pool basics and duplication invariance") {
    mosfuse::FrameFeatures f;
    f.frames = mosfuse::Mat(2, 2);
    f.frames(0, 0) = 0; f.frames(0, 1) = 2;
    f.frames(1, 0) = 2; f.frames(1, 1) = 0;
    auto v = mosfuse::mean_pool(f);
    CHECK(v.values == mosfuse::Vec{1, 1});

    mosfuse::FrameFeatures single;
    single.frames = mosfuse::Mat(1, 3);
    single.frames(0, 0) = 4; single.frames(0, 1) = 5; single.frames(0, 2) = 6;
    CHECK(mosfuse::mean_pool(single).values == mosfuse::Vec{4, 5, 6});

    // duplicating the frame sequence leaves the mean unchanged
    mosfuse::Rng rng(3);
    mosfuse::FrameFeatures r;
    r.frames = mosfuse::Mat(5, 4);
    for (auto& x : r.frames.data) x = rng.normal();
    auto base = mosfuse::mean_pool(r);
    mosfuse::FrameFeatures dup;
    dup.frames = mosfuse::Mat(10, 4);
    for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t c = 0; c < 4; ++c) dup.frames(t, c) = r.frames(t % 5, c);
    auto doubled = mosfuse::mean_pool(dup);
    for (std::size_t c = 0; c < 4; ++c)
        REQUIRE_THAT(doubled.values[c], Catch::Matchers::WithinAbs(base.values[c], 1e-12));
}

TEST_CASE("feature cache: write/read round-trip and corruption detection") {
    const fs::path p = fs::temp_directory_path() / "u1.fea";
    mosfuse::FrameFeatures f;
    f.frames = mosfuse::Mat(3, 4);
    mosfuse::Rng rng(1);
    for (auto& x : f.frames.data) x = rng.normal();
    mosfuse::write_feature_file(p, f);
    auto r = mosfuse::read_feature_file(p);
    REQUIRE(r.frames.rows == 3);
    REQUIRE(r.frames.cols == 4);
    for (std::size_t i = 0; i < f.frames.data.size(); ++i)
        CHECK(r.frames.data[i] == static_cast<float>(f.frames.data[i]));

    // flip one payload byte -> checksum error
    {
        std::fstream fx(p, std::ios::binary | std::ios::in | std::ios::out);
        fx.seekp(15);
        char c;
        fx.seekg(15);
        fx.read(&c, 1);
        c = static_cast<char>(c ^ 0x40);
        fx.seekp(15);
        fx.write(&c, 1);
    }
    CHECK_THROWS_WITH(mosfuse::read_feature_file(p),
                      Catch::Matchers::ContainsSubstring("checksum"));
}

TEST_CASE("cache_features writes one file per utterance and is idempotent") {
    const fs::path dir = fs::temp_directory_path() / "fea_cache_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    mosfuse::MosDataset d;
    for (int i = 0; i < 3; ++i) {
        const std::string uid = "utt" + std::to_string(i);
        const fs::path wav = dir / (uid + ".wav");
        mosfuse::write_wav(wav, sine(0.2 + 0.1 * i, 300.0 * (i + 1), 0.2));
        d.utterances.push_back({uid, "sysA", wav.string(), {{uid, "l1", 3}}});
    }
    mosfuse::detail::finalize_dataset(d);

    const fs::path cache = dir / "cache";
    CHECK(mosfuse::cache_features(d, cache) == 3);
    for (const auto& u : d.utterances) {
        auto f = mosfuse::read_feature_file(cache / (u.utterance_id + ".fea"));
        CHECK(f.frames.cols == 80);
        CHECK(f.frames.rows >= 1);
    }
    // rerun without changes: nothing rewritten
    CHECK(mosfuse::cache_features(d, cache) == 0);
}
