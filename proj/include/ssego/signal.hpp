#pragma once

#include <vector>

namespace ssego {

/// Transfer-function coefficients, a[0] == 1.
struct IirFilter {
  std::vector<double> b;
  std::vector<double> a;
};

/// Digital Butterworth low-pass via the bilinear transform with pre-warping
/// (unity gain at DC). cutoff_hz must lie in (0, fs/2).
IirFilter butter_lowpass(int order, double cutoff_hz, double sample_rate_hz);

/// Direct-form II transposed filtering. `zi` (size order) is the initial
/// state; empty means rest.
std::vector<double> lfilter(const IirFilter& f, const std::vector<double>& x,
                            std::vector<double> zi = {});

/// Steady-state initial conditions for a unit step input.
std::vector<double> lfilter_zi(const IirFilter& f);

/**
 * Zero-phase forward-backward filtering. The signal is extended by odd
 * reflection of 3*max(len(a), len(b)) samples at both ends and each pass
 * starts from the steady state of its first sample, so short records keep
 * their end values. Throws ContractViolation if the record is not longer
 * than the padding.
 */
std::vector<double> filtfilt(const IirFilter& f, const std::vector<double>& x);

}  // namespace ssego
