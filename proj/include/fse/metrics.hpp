#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fse/nn_ops.hpp"

namespace fse {

// ---------------------------------------------------------------------------
// MSE / PSNR

template <typename T>
VarT<T> mse_op(const VarT<T>& pred, const VarT<T>& target) {
  check_same_shape(pred->value, target->value, "mse");
  VarT<T> d = sub(pred, target);
  return mean_all(mul(d, d));
}

template <typename T>
double mse_metric(const TensorT<T>& pred, const TensorT<T>& target) {
  check_same_shape(pred, target, "mse");
  double acc = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    double d = double(pred[i]) - double(target[i]);
    acc += d * d;
  }
  return acc / double(pred.numel());
}

inline constexpr double kPsnrCapDb = 100.0;  // sentinel for mse below 1e-10

inline double psnr_from_mse(double mse, double peak = 1.0) {
  if (mse < 1e-10) return kPsnrCapDb;
  return 10.0 * std::log10(peak * peak / mse);
}

template <typename T>
double psnr_metric(const TensorT<T>& pred, const TensorT<T>& target, double peak = 1.0) {
  return psnr_from_mse(mse_metric(pred, target), peak);
}

// ---------------------------------------------------------------------------
// SSIM: canonical 11x11 Gaussian window, sigma 1.5, valid windows only

inline constexpr std::int64_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

template <typename T>
TensorT<T> ssim_gaussian_kernel(std::int64_t channels) {
  TensorT<T> k({channels, 1, kSsimWindow, kSsimWindow});
  double sum = 0;
  const std::int64_t r = kSsimWindow / 2;
  std::vector<double> w(std::size_t(kSsimWindow * kSsimWindow));
  for (std::int64_t y = 0; y < kSsimWindow; ++y)
    for (std::int64_t x = 0; x < kSsimWindow; ++x) {
      double d2 = double((y - r) * (y - r) + (x - r) * (x - r));
      double v = std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
      w[std::size_t(y * kSsimWindow + x)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t i = 0; i < kSsimWindow * kSsimWindow; ++i)
      k[c * kSsimWindow * kSsimWindow + i] = T(w[std::size_t(i)]);
  return k;
}

// Differentiable SSIM over valid Gaussian windows, averaged across windows
// and channels. C1 = (0.01*peak)^2, C2 = (0.03*peak)^2.
template <typename T>
VarT<T> ssim_op(const VarT<T>& pred, const VarT<T>& target, double peak = 1.0) {
  check_same_shape(pred->value, target->value, "ssim");
  FSE_CHECK(pred->value.rank() == 4, ShapeError, "ssim: rank-4 only");
  const std::int64_t C = pred->value.size(1);
  FSE_CHECK(pred->value.size(2) >= kSsimWindow && pred->value.size(3) >= kSsimWindow, ConfigError,
            "ssim: image smaller than the 11x11 window");
  const T c1 = T(0.01 * peak) * T(0.01 * peak);
  const T c2 = T(0.03 * peak) * T(0.03 * peak);

  VarT<T> kern = constant(ssim_gaussian_kernel<T>(C));
  Conv2dSpec s{1, 0, 1, C};  // depthwise, valid
  auto blur = [&](const VarT<T>& v) { return conv2d(v, kern, VarT<T>(), s); };

  VarT<T> mu_x = blur(pred), mu_y = blur(target);
  VarT<T> mu_xx = mul(mu_x, mu_x), mu_yy = mul(mu_y, mu_y), mu_xy = mul(mu_x, mu_y);
  VarT<T> sig_x = sub(blur(mul(pred, pred)), mu_xx);
  VarT<T> sig_y = sub(blur(mul(target, target)), mu_yy);
  VarT<T> sig_xy = sub(blur(mul(pred, target)), mu_xy);

  VarT<T> num = mul(add_scalar(mul_scalar(mu_xy, T(2)), c1), add_scalar(mul_scalar(sig_xy, T(2)), c2));
  VarT<T> den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(sig_x, sig_y), c2));
  return mean_all(div(num, den));
}

template <typename T>
double ssim_metric(const TensorT<T>& pred, const TensorT<T>& target, double peak = 1.0) {
  NoGradGuard ng;
  auto a = make_leaf(pred.template cast<double>());
  auto b = make_leaf(target.template cast<double>());
  return ssim_op<double>(a, b, peak)->value[0];
}

// ---------------------------------------------------------------------------
// MetricReport

struct MetricReport {
  double psnr_db = 0;
  double ssim = 0;
  double mse = 0;
  double lpips = 0;
  bool lpips_proxy = false;
  std::int64_t n_samples = 0;

  std::string to_kv() const {
    std::ostringstream os;
    os.precision(9);
    os << std::fixed;
    os << "psnr_db: " << psnr_db << "\n";
    os << "ssim: " << ssim << "\n";
    os << "mse: " << mse << "\n";
    os << (lpips_proxy ? "lpips_proxy: " : "lpips: ") << lpips << "\n";
    os << "n_samples: " << n_samples << "\n";
    return os.str();
  }

  static MetricReport parse_kv(std::istream& is) {
    MetricReport r;
    bool have_psnr = false, have_lpips = false;
    std::string line;
    while (std::getline(is, line)) {
      auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = line.substr(0, colon);
      std::string val = line.substr(colon + 1);
      try {
        if (key == "psnr_db") { r.psnr_db = std::stod(val); have_psnr = true; }
        else if (key == "ssim") r.ssim = std::stod(val);
        else if (key == "mse") r.mse = std::stod(val);
        else if (key == "lpips") { r.lpips = std::stod(val); have_lpips = true; }
        else if (key == "lpips_proxy") { r.lpips = std::stod(val); r.lpips_proxy = true; have_lpips = true; }
        else if (key == "n_samples") r.n_samples = std::stoll(val);
        else throw FormatError("metric report: unknown key '" + key + "'");
      } catch (const std::invalid_argument&) {
        throw FormatError("metric report: bad value for '" + key + "'");
      }
    }
    FSE_CHECK(have_psnr && have_lpips, FormatError, "metric report: missing required keys");
    return r;
  }

  static MetricReport load(const std::string& path) {
    std::ifstream is(path);
    FSE_CHECK(is.good(), IoError, "cannot open metric report: " + path);
    return parse_kv(is);
  }
};

}  // namespace fse
