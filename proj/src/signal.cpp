#include "ssego/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "ssego/errors.hpp"

namespace ssego {

namespace {

// real coefficients of prod (z - r_k), highest power first
std::vector<double> poly(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c = {1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= r * c[i];
    }
    c = next;
  }
  std::vector<double> out;
  for (const auto& v : c) out.push_back(v.real());
  return out;
}

}  // namespace

IirFilter butter_lowpass(int order, double cutoff_hz, double sample_rate_hz) {
  if (order < 1 || !(sample_rate_hz > 0.0) || !(cutoff_hz > 0.0) ||
      !(cutoff_hz < 0.5 * sample_rate_hz)) {
    throw ContractViolation("butter_lowpass: need order >= 1 and 0 < cutoff < fs/2");
  }
  const double fs2 = 2.0 * sample_rate_hz;
  const double warped = fs2 * std::tan(M_PI * cutoff_hz / sample_rate_hz);
  std::vector<std::complex<double>> poles, zeros;
  for (int k = 0; k < order; ++k) {
    const double theta = M_PI * (2.0 * k + order + 1) / (2.0 * order);
    const std::complex<double> p = warped * std::polar(1.0, theta);
    poles.push_back((fs2 + p) / (fs2 - p));
    zeros.push_back(-1.0);
  }
  IirFilter f;
  f.b = poly(zeros);
  f.a = poly(poles);
  double sb = 0.0, sa = 0.0;
  for (double v : f.b) sb += v;
  for (double v : f.a) sa += v;
  for (double& v : f.b) v *= sa / sb;
  return f;
}

std::vector<double> lfilter(const IirFilter& f, const std::vector<double>& x,
                            std::vector<double> zi) {
  const std::size_t n = std::max(f.a.size(), f.b.size());
  std::vector<double> b = f.b, a = f.a;
  b.resize(n, 0.0);
  a.resize(n, 0.0);
  if (a[0] != 1.0) throw ContractViolation("lfilter: a[0] must be 1");
  if (zi.empty()) zi.assign(n - 1, 0.0);
  if (zi.size() != n - 1) throw ContractViolation("lfilter: initial state has the wrong size");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double yi = b[0] * x[i] + (n > 1 ? zi[0] : 0.0);
    for (std::size_t k = 1; k + 1 < n; ++k) zi[k - 1] = b[k] * x[i] + zi[k] - a[k] * yi;
    if (n > 1) zi[n - 2] = b[n - 1] * x[i] - a[n - 1] * yi;
    y[i] = yi;
  }
  return y;
}

std::vector<double> lfilter_zi(const IirFilter& f) {
  const std::size_t n = std::max(f.a.size(), f.b.size());
  std::vector<double> b = f.b, a = f.a;
  b.resize(n, 0.0);
  a.resize(n, 0.0);
  const Eigen::Index m = static_cast<Eigen::Index>(n - 1);
  // (I - A^T) zi = b[1:] - a[1:] b[0], A the companion matrix of a
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    M(i, 0) += a[static_cast<std::size_t>(i + 1)];
    if (i + 1 < m) M(i, i + 1) -= 1.0;
    rhs(i) = b[static_cast<std::size_t>(i + 1)] - a[static_cast<std::size_t>(i + 1)] * b[0];
  }
  const Eigen::VectorXd zi = M.fullPivLu().solve(rhs);
  return {zi.data(), zi.data() + m};
}

std::vector<double> filtfilt(const IirFilter& f, const std::vector<double>& x) {
  const std::size_t pad = 3 * std::max(f.a.size(), f.b.size());
  if (x.size() <= pad) {
    throw ContractViolation("filtfilt: signal needs more than " + std::to_string(pad) + " samples");
  }
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  const std::size_t last = x.size() - 1;
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[last - i]);

  const std::vector<double> zi = lfilter_zi(f);
  auto scaled = [&](double s) {
    std::vector<double> z = zi;
    for (double& v : z) v *= s;
    return z;
  };
  std::vector<double> y = lfilter(f, ext, scaled(ext.front()));
  std::reverse(y.begin(), y.end());
  y = lfilter(f, y, scaled(y.front()));
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.end() - static_cast<std::ptrdiff_t>(pad)};
}

}  // namespace ssego
