#pragma once

// Normalized spectral band power over fixed-length windows of a raw signal.
// Each window of w seconds gets a discrete Fourier transform; power in a
// frequency band is the sum of squared magnitudes over the one-sided bins
// whose frequency falls inside the band's closed interval.  The reported
// value is the target band's share of the summed power of all configured
// bands; a window with zero total band power has no defined share and stays
// missing rather than being filled in.  "Zero" is judged relative to the
// window's whole spectrum, because the transform of, say, a constant signal
// leaves roundoff dust in every bin and a ratio of dust would be fabricated.

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfpca/errors.hpp"

namespace mfpca {

struct FrequencyBand {
    std::string name;
    double lo_hz = 0.0;
    double hi_hz = 0.0;   // closed interval [lo, hi]
};

struct BandSpec {
    std::vector<FrequencyBand> bands;
    double window_seconds = 30.0;
    double sampling_rate_hz = 0.0;
    bool hann_taper = false;   // taper each window before the transform

    // Conventional EEG bands; the gaps between them belong to no band.
    static BandSpec eeg_default(double rate_hz) {
        BandSpec spec;
        spec.sampling_rate_hz = rate_hz;
        spec.bands = {{"delta", 0.8, 4.0},
                      {"theta", 4.1, 8.0},
                      {"alpha", 8.1, 13.0},
                      {"beta", 13.1, 20.0}};
        return spec;
    }

    int window_samples() const {
        const double exact = window_seconds * sampling_rate_hz;
        const double rounded = std::round(exact);
        if (std::abs(exact - rounded) > 1e-9 * std::max(1.0, exact) ||
            rounded < 1.0)
            throw InvalidArgument(
                "window length times sampling rate must be a positive "
                "integer number of samples");
        return static_cast<int>(rounded);
    }

    void validate() const {
        if (!(sampling_rate_hz > 0.0))
            throw InvalidArgument("sampling rate must be positive");
        if (!(window_seconds > 0.0))
            throw InvalidArgument("window length must be positive");
        if (bands.empty())
            throw InvalidArgument("band list must not be empty");
        double top = 0.0;
        for (std::size_t b = 0; b < bands.size(); ++b) {
            if (!(bands[b].lo_hz >= 0.0) || !(bands[b].hi_hz >= bands[b].lo_hz))
                throw InvalidArgument("band '" + bands[b].name +
                                      "' has an invalid interval");
            if (b > 0 && bands[b].lo_hz <= bands[b - 1].hi_hz)
                throw InvalidArgument(
                    "bands must be ordered and non-overlapping");
            top = bands[b].hi_hz;
        }
        if (sampling_rate_hz <= 2.0 * top)
            throw InvalidArgument(
                "sampling rate must exceed twice the highest band edge");
        window_samples();
    }
};

struct BandPowerSeries {
    std::string band;
    std::vector<double> times_hours;            // window midpoints
    std::vector<std::optional<double>> values;  // missing when undefined
    std::size_t dropped_samples = 0;            // trailing partial window

    std::size_t window_count() const { return values.size(); }

    std::size_t undefined_count() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.has_value() ? 0 : 1;
        return n;
    }
};

inline BandPowerSeries band_power(std::span<const double> signal,
                                  const BandSpec& spec,
                                  const std::string& target_band) {
    spec.validate();
    std::size_t target = spec.bands.size();
    for (std::size_t b = 0; b < spec.bands.size(); ++b)
        if (spec.bands[b].name == target_band) target = b;
    if (target == spec.bands.size())
        throw InvalidArgument("unknown band '" + target_band + "'");

    const int N = spec.window_samples();
    if (signal.size() < static_cast<std::size_t>(N))
        throw InsufficientData("signal of " + std::to_string(signal.size()) +
                               " samples is shorter than one window of " +
                               std::to_string(N));
    const std::size_t n_windows = signal.size() / static_cast<std::size_t>(N);

    BandPowerSeries out;
    out.band = spec.bands[target].name;
    out.dropped_samples = signal.size() - n_windows * static_cast<std::size_t>(N);

    // Precompute which one-sided bin belongs to which band.
    const double bin_hz = spec.sampling_rate_hz / N;
    const int half = N / 2;
    std::vector<int> band_of(static_cast<std::size_t>(half) + 1, -1);
    for (int k = 0; k <= half; ++k) {
        const double f = k * bin_hz;
        for (std::size_t b = 0; b < spec.bands.size(); ++b)
            if (f >= spec.bands[b].lo_hz && f <= spec.bands[b].hi_hz) {
                band_of[static_cast<std::size_t>(k)] = static_cast<int>(b);
                break;
            }
    }

    std::vector<double> taper;
    if (spec.hann_taper) {
        taper.resize(static_cast<std::size_t>(N));
        for (int s = 0; s < N; ++s)
            taper[static_cast<std::size_t>(s)] =
                0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * s / N));
    }

    Eigen::FFT<double> fft;
    std::vector<double> window(static_cast<std::size_t>(N));
    std::vector<std::complex<double>> spectrum;
    for (std::size_t w = 0; w < n_windows; ++w) {
        for (int s = 0; s < N; ++s)
            window[static_cast<std::size_t>(s)] =
                signal[w * static_cast<std::size_t>(N) +
                       static_cast<std::size_t>(s)];
        if (spec.hann_taper)
            for (int s = 0; s < N; ++s)
                window[static_cast<std::size_t>(s)] *=
                    taper[static_cast<std::size_t>(s)];
        fft.fwd(spectrum, window);
        std::vector<double> power(spec.bands.size(), 0.0);
        double spectrum_power = 0.0;
        for (int k = 0; k <= half; ++k) {
            const double p = std::norm(spectrum[static_cast<std::size_t>(k)]);
            spectrum_power += p;
            if (band_of[static_cast<std::size_t>(k)] >= 0)
                power[static_cast<std::size_t>(
                    band_of[static_cast<std::size_t>(k)])] += p;
        }
        double total = 0.0;
        for (double p : power) total += p;
        out.times_hours.push_back(
            (static_cast<double>(w) + 0.5) * N / spec.sampling_rate_hz / 3600.0);
        if (total > 1e-12 * spectrum_power)
            out.values.push_back(power[target] / total);
        else
            out.values.push_back(std::nullopt);
    }
    return out;
}

}  // namespace mfpca
