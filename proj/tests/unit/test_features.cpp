#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xvf/error.hpp"
#include "xvf/features.hpp"
#include "xvf/rng.hpp"

using namespace xvf;

TEST_SUITE_BEGIN("features");

namespace {

Waveform noise(std::size_t n, std::uint64_t seed, double amp = 0.1) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = amp * rng.normal();
  return w;
}

FeatureMatrix feats_of(RowMatrix m) {
  FeatureMatrix f;
  f.frames = std::move(m);
  return f;
}

}  // namespace

TEST_CASE("mfcc frame count and dimension") {
  const FeatureMatrix f = compute_mfcc(noise(16000, 1));
  CHECK(f.num_frames() == 98);
  CHECK(f.dim() == 23);
  MfccOptions o;
  o.num_ceps = 20;
  CHECK(compute_mfcc(noise(16000, 1), o).dim() == 20);
  CHECK_THROWS(compute_mfcc(noise(100, 1)));
  Waveform bad = noise(1000, 1);
  bad.sample_rate = 0.0;
  CHECK_THROWS(compute_mfcc(bad));
}

TEST_CASE("mfcc of silence is one repeated frame at the energy floor") {
  Waveform w;
  w.samples.assign(8000, 0.0);
  const FeatureMatrix f = compute_mfcc(w);
  for (std::size_t t = 1; t < f.num_frames(); ++t) CHECK(f.frames.row(t) == f.frames.row(0));
  CHECK(f.frames(0, 0) == log_energy_floor());
}

TEST_CASE("mfcc cepstra c1.. are invariant to gain") {
  const Waveform a = noise(8000, 2);
  Waveform b = a;
  for (auto& s : b.samples) s *= 7.5;
  const FeatureMatrix fa = compute_mfcc(a), fb = compute_mfcc(b);
  for (std::size_t t = 0; t < fa.num_frames(); ++t) {
    for (std::size_t k = 1; k < fa.dim(); ++k) CHECK(std::abs(fa.frames(t, k) - fb.frames(t, k)) <= 1e-8);
    CHECK(fb.frames(t, 0) - fa.frames(t, 0) == doctest::Approx(2.0 * std::log(7.5)).epsilon(1e-9));
  }
}

TEST_CASE("deltas") {
  SUBCASE("constant features have zero deltas") {
    const FeatureMatrix d = add_deltas(feats_of(RowMatrix::Constant(10, 3, 2.5)));
    CHECK(d.dim() == 9);
    CHECK(d.frames.rightCols(6).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("20 dims become 60") { CHECK(add_deltas(feats_of(RowMatrix::Random(12, 20))).dim() == 60); }
  SUBCASE("linear ramp: constant delta, zero delta-delta away from the edges") {
    RowMatrix m(20, 2);
    for (int t = 0; t < 20; ++t) {
      m(t, 0) = 0.5 * t;
      m(t, 1) = -2.0 * t + 1.0;
    }
    const FeatureMatrix d = add_deltas(feats_of(m));
    for (int t = 4; t < 16; ++t) {
      CHECK(d.frames(t, 2) == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(d.frames(t, 3) == doctest::Approx(-2.0).epsilon(1e-12));
      CHECK(std::abs(d.frames(t, 4)) <= 1e-12);
      CHECK(std::abs(d.frames(t, 5)) <= 1e-12);
    }
  }
  CHECK_THROWS(add_deltas(feats_of(RowMatrix(0, 3))));
}

TEST_CASE("sliding cmn") {
  SUBCASE("constant features become zero") {
    const FeatureMatrix c = sliding_cmn(feats_of(RowMatrix::Constant(30, 4, -3.0)));
    CHECK(c.frames.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("long window equals global mean subtraction and is idempotent") {
    Rng rng(3);
    RowMatrix m(40, 3);
    for (auto i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    const FeatureMatrix c = sliding_cmn(feats_of(m), 10.0);
    const RowMatrix ref = m.rowwise() - m.colwise().mean();
    CHECK((c.frames - ref).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((sliding_cmn(c, 10.0).frames - c.frames).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("matches a naive windowed-mean loop") {
    Rng rng(4);
    RowMatrix m(50, 3);
    for (auto i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    const double window = 0.2;  // +/- 10 frames
    const FeatureMatrix c = sliding_cmn(feats_of(m), window);
    for (int t = 0; t < 50; ++t) {
      for (int k = 0; k < 3; ++k) {
        double s = 0.0;
        int n = 0;
        for (int u = t - 10; u <= t + 10; ++u) {
          if (u < 0 || u >= 50) continue;
          s += m(u, k);
          ++n;
        }
        CHECK(c.frames(t, k) == m(t, k) - s / n);
      }
    }
  }
  CHECK_THROWS(sliding_cmn(feats_of(RowMatrix(0, 2))));
  CHECK_THROWS(sliding_cmn(feats_of(RowMatrix::Zero(5, 2)), 0.005));
}

TEST_CASE("energy vad") {
  SUBCASE("uniform energy keeps everything") {
    RowMatrix m = RowMatrix::Constant(10, 3, 1.0);
    CHECK(energy_vad(feats_of(m)).num_frames() == 10);
  }
  SUBCASE("digital silence is no speech") {
    Waveform w;
    w.samples.assign(4000, 0.0);
    CHECK_THROWS_AS(energy_vad(compute_mfcc(w)), NoSpeechError);
  }
  SUBCASE("half loud half silent keeps exactly the loud half") {
    Waveform w = noise(16000, 5, 0.3);
    for (std::size_t i = 8000; i < 16000; ++i) w.samples[i] = 0.0;
    const FeatureMatrix f = compute_mfcc(w);
    const auto mask = energy_vad_mask(f);
    // Frames touching the loud half: start sample < 8000.
    for (std::size_t t = 0; t < f.num_frames(); ++t) CHECK(mask[t] == (t * 160 < 8000));
    const FeatureMatrix kept = energy_vad(f);
    std::size_t row = 0;
    for (std::size_t t = 0; t < f.num_frames(); ++t) {
      if (mask[t]) CHECK(kept.frames.row(row++) == f.frames.row(t));
    }
    CHECK(row == kept.num_frames());
  }
}

TEST_CASE("wav round trip") {
  const auto path = std::filesystem::temp_directory_path() / "xvf_test_roundtrip.wav";
  Waveform w = noise(1234, 6, 0.2);
  w.sample_rate = 8000.0;
  write_wav(path, w);
  const Waveform r = read_wav(path);
  CHECK(r.sample_rate == 8000.0);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32768.0);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_wav(path), IoError);
}

TEST_SUITE_END();
