// petkit/synthetic.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_SYNTHETIC_HPP
#define PETKIT_SYNTHETIC_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "petkit/tensor.hpp"

namespace petkit {

// Utterance-classification stand-in: every class is a fixed random source
// signature (an FIR filter shaping white noise plus a class-specific harmonic
// comb), so class identity lives in the low-level spectrum the way speaker
// identity does.
struct SyntheticTaskSpec {
  int n_classes = 10;
  int samples_per_class = 100;
  int wave_length = 800;
  double snr_db = 20.0;  // +infinity disables the additive noise
  std::uint64_t seed = 1;
};

template <typename Real>
struct LabeledWave {
  Tensor<Real> wave;  // [1, wave_length]
  int label = 0;
};

template <typename Real>
struct Dataset {
  std::vector<LabeledWave<Real>> train, val, test;  // class-major order, 8:1:1
};

namespace detail {

inline constexpr int kFirTaps = 33;
inline constexpr int kHarmonics = 3;

struct ClassSignature {
  std::vector<double> fir;                // kFirTaps
  int period = 0;                         // comb fundamental, samples
  std::array<double, kHarmonics> amps{};  // harmonic amplitudes
};

inline ClassSignature make_signature(Rng& rng) {
  ClassSignature sig;
  sig.fir.resize(kFirTaps);
  for (double& v : sig.fir) v = rng.gaussian() / std::sqrt(static_cast<double>(kFirTaps));
  sig.period = rng.uniform_int(24, 160);
  for (int k = 0; k < kHarmonics; ++k) sig.amps[k] = rng.uniform(0.5, 1.0) / (k + 1);
  return sig;
}

inline void normalize_rms(std::vector<double>& x) {
  double power = 0.0;
  for (double v : x) power += v * v;
  const double rms = std::sqrt(power / static_cast<double>(x.size()));
  if (rms > 0)
    for (double& v : x) v /= rms;
}

inline std::vector<double> synth_wave(const ClassSignature& sig, int length, double snr_db,
                                      Rng& rng) {
  // Class-filtered noise component.
  std::vector<double> white(length + kFirTaps - 1);
  for (double& v : white) v = rng.gaussian();
  std::vector<double> filtered(length, 0.0);
  for (int t = 0; t < length; ++t) {
    double acc = 0.0;
    for (int k = 0; k < kFirTaps; ++k) acc += sig.fir[k] * white[t + k];
    filtered[t] = acc;
  }
  normalize_rms(filtered);

  // Harmonic comb with per-sample random phases.
  std::array<double, kHarmonics> phases{};
  for (double& p : phases) p = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> comb(length, 0.0);
  for (int t = 0; t < length; ++t) {
    double acc = 0.0;
    for (int k = 0; k < kHarmonics; ++k)
      acc += sig.amps[k] *
             std::sin(2.0 * kPi * (k + 1) * static_cast<double>(t) / sig.period + phases[k]);
    comb[t] = acc;
  }
  normalize_rms(comb);

  std::vector<double> wave(length);
  for (int t = 0; t < length; ++t) wave[t] = filtered[t] + comb[t];
  normalize_rms(wave);

  if (std::isfinite(snr_db)) {
    const double noise_scale = std::pow(10.0, -snr_db / 20.0);
    for (double& v : wave) v += noise_scale * rng.gaussian();
  }
  return wave;
}

}  // namespace detail

template <typename Real>
Dataset<Real> gen_synthetic_dataset(const SyntheticTaskSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("synthetic task: need at least 2 classes");
  if (spec.samples_per_class < 10)
    throw ConfigError("synthetic task: need at least 10 samples per class for the 8:1:1 split");
  if (spec.wave_length < 1) throw ConfigError("synthetic task: wave_length must be positive");

  const int n_train = spec.samples_per_class * 8 / 10;
  const int n_val = spec.samples_per_class / 10;
  const int n_test = spec.samples_per_class - n_train - n_val;

  Dataset<Real> data;
  for (int c = 0; c < spec.n_classes; ++c) {
    Rng class_rng(mix_seed(spec.seed, static_cast<std::uint64_t>(c)));
    const auto sig = detail::make_signature(class_rng);
    for (int s = 0; s < spec.samples_per_class; ++s) {
      Rng sample_rng(mix_seed(mix_seed(spec.seed, static_cast<std::uint64_t>(c)),
                              0x5A3D + static_cast<std::uint64_t>(s)));
      const auto wave = detail::synth_wave(sig, spec.wave_length, spec.snr_db, sample_rng);
      LabeledWave<Real> item;
      item.label = c;
      item.wave = Tensor<Real>::zeros({1, spec.wave_length});
      for (int t = 0; t < spec.wave_length; ++t)
        item.wave.data[t] = static_cast<Real>(wave[t]);
      if (s < n_train)
        data.train.push_back(std::move(item));
      else if (s < n_train + n_val)
        data.val.push_back(std::move(item));
      else
        data.test.push_back(std::move(item));
    }
    (void)n_test;
  }
  return data;
}

// Balanced per-class prefix of the training split. Throws if the fraction
// leaves any class empty.
template <typename Real>
std::vector<const LabeledWave<Real>*> subset_train(const Dataset<Real>& data, int n_classes,
                                                   double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("subset fraction must be in (0, 1]");
  std::vector<std::vector<const LabeledWave<Real>*>> per_class(n_classes);
  for (const auto& item : data.train) per_class[item.label].push_back(&item);
  std::vector<const LabeledWave<Real>*> out;
  for (int c = 0; c < n_classes; ++c) {
    const int keep = static_cast<int>(fraction * static_cast<double>(per_class[c].size()));
    if (keep < 1)
      throw ConfigError("subset fraction " + std::to_string(fraction) +
                        " leaves class " + std::to_string(c) + " with zero samples");
    for (int i = 0; i < keep; ++i) out.push_back(per_class[c][i]);
  }
  return out;
}

}  // namespace petkit

#endif  // PETKIT_SYNTHETIC_HPP
