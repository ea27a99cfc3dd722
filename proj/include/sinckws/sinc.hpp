// SincConv frontend: band-pass FIR filters derived from learnable cutoff
// pairs. A filter is the difference of two scaled sinc kernels (an ideal
// band-pass truncated to L taps), Hamming-windowed, and scaled to unit peak
// frequency response. Construction is one fused tape op with an analytic
// backward, so gradients reach the two cutoffs and nothing else.
#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <utility>

#include "sinckws/ops.hpp"

namespace sinckws {

struct SincConvConfig {
  int n_filters = 40;
  int kernel_length = 101;  // odd, so the center tap n = 0 exists
  int stride = 8;
  double sample_rate = 16000.0;
  double min_band_hz = 50.0;
  double min_low_hz = 30.0;

  double nyquist() const { return sample_rate / 2.0; }

  void validate() const {
    if (n_filters < 1) throw std::invalid_argument("sinc: n_filters must be >= 1");
    if (kernel_length < 3 || kernel_length % 2 == 0)
      throw std::invalid_argument("sinc: kernel_length must be odd and >= 3");
    if (stride < 1) throw std::invalid_argument("sinc: stride must be >= 1");
    if (sample_rate <= 0 || min_band_hz <= 0 || min_low_hz <= 0)
      throw std::invalid_argument("sinc: rates and floors must be positive");
    if (min_low_hz + min_band_hz >= nyquist())
      throw std::invalid_argument("sinc: no room between min_low_hz and Nyquist");
  }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Raw (low, band) -> effective cutoffs. |.| plus the two clamps keep
// 0 < f1 < f2 <= Nyquist and f2 - f1 >= min_band_hz for any raw values.
inline std::pair<double, double> effective_cutoffs(double raw_low, double raw_band,
                                                   const SincConvConfig& cfg) {
  const double f1 =
      std::min(cfg.min_low_hz + std::abs(raw_low), cfg.nyquist() - cfg.min_band_hz);
  const double f2 = std::min(f1 + cfg.min_band_hz + std::abs(raw_band), cfg.nyquist());
  return {f1, f2};
}

// F contiguous bands whose edges are mel-equispaced between min_low_hz and
// Nyquist; band i spans mel points [i, i+2], so neighbors overlap halfway.
// Deterministic; consumes no RNG.
template <typename T>
TensorPtr<T> mel_initialize(const SincConvConfig& cfg) {
  cfg.validate();
  const int f_count = cfg.n_filters;
  const double m_lo = hz_to_mel(cfg.min_low_hz), m_hi = hz_to_mel(cfg.nyquist());
  std::vector<double> edges(static_cast<std::size_t>(f_count) + 2);
  for (int i = 0; i < f_count + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(m_lo + (m_hi - m_lo) * i / (f_count + 1));

  auto params = make_tensor<T>({f_count, 2});
  params->needs_grad = true;
  for (int i = 0; i < f_count; ++i) {
    const double f1 = edges[static_cast<std::size_t>(i)];
    const double f2 = edges[static_cast<std::size_t>(i) + 2];
    if (f2 - f1 < cfg.min_band_hz)
      throw std::invalid_argument(
          "sinc: n_filters too large for the frequency range given min_band_hz");
    params->at(i, 0) = static_cast<T>(f1 - cfg.min_low_hz);
    params->at(i, 1) = static_cast<T>(f2 - f1 - cfg.min_band_hz);
  }
  return params;
}

// Cosine grid for the in-graph peak-response search, cached per config by the
// model so training does not recompute it every sample.
struct SincNormTable {
  int nfft = 1024;
  int half = 0;                    // (L-1)/2
  std::vector<double> cos_kn;      // [bins x (half+1)]
  std::vector<double> window;      // centered Hamming, length L

  int bins() const { return nfft / 2 + 1; }
};

inline SincNormTable make_sinc_norm_table(const SincConvConfig& cfg, int nfft = 1024) {
  cfg.validate();
  SincNormTable tab;
  tab.nfft = nfft;
  tab.half = (cfg.kernel_length - 1) / 2;
  const int bins = tab.bins();
  tab.cos_kn.resize(static_cast<std::size_t>(bins) * (tab.half + 1));
  for (int k = 0; k < bins; ++k)
    for (int n = 0; n <= tab.half; ++n)
      tab.cos_kn[static_cast<std::size_t>(k) * (tab.half + 1) + n] =
          std::cos(2.0 * M_PI * k * n / nfft);
  tab.window.resize(static_cast<std::size_t>(cfg.kernel_length));
  for (int i = 0; i < cfg.kernel_length; ++i) {
    const int n = i - tab.half;
    tab.window[static_cast<std::size_t>(i)] =
        0.54 + 0.46 * std::cos(2.0 * M_PI * n / (cfg.kernel_length - 1));
  }
  return tab;
}

// params [F,2] (raw low, raw band) -> taps [F,1,L]. One fused op; the
// backward rule pushes tap gradients through the windowing, the peak
// normalization, and the cutoff reparametrization analytically.
template <typename T>
TensorPtr<T> build_filters(Tape<T>* tape, const TensorPtr<T>& params,
                           const SincConvConfig& cfg, const SincNormTable& tab) {
  cfg.validate();
  if (params->shape.size() != 2 || params->shape[1] != 2 ||
      params->shape[0] != cfg.n_filters)
    throw std::invalid_argument("build_filters: params must be [n_filters, 2]");
  if (!all_finite(params->values))
    throw numeric_error("build_filters: non-finite cutoff parameters");

  const int f_count = cfg.n_filters, len = cfg.kernel_length, half = tab.half;
  const double sr = cfg.sample_rate;

  struct FilterCtx {
    double u1, u2;            // cutoffs normalized by the sample rate
    double peak;              // max |H| over the grid
    double peak_sign;
    int peak_bin;
    bool clamp1_active, clamp2_active;  // true when NOT clamped (grad passes)
    double sgn_low, sgn_band;
    std::vector<double> windowed;  // s_n, length L
  };
  auto ctxs = std::make_shared<std::vector<FilterCtx>>(static_cast<std::size_t>(f_count));

  auto out = make_tensor<T>({f_count, 1, len});
  for (int f = 0; f < f_count; ++f) {
    FilterCtx& cx = (*ctxs)[static_cast<std::size_t>(f)];
    const double raw_low = static_cast<double>(params->at(f, 0));
    const double raw_band = static_cast<double>(params->at(f, 1));
    const double f1_unc = cfg.min_low_hz + std::abs(raw_low);
    const double f1 = std::min(f1_unc, cfg.nyquist() - cfg.min_band_hz);
    const double f2_unc = f1 + cfg.min_band_hz + std::abs(raw_band);
    const double f2 = std::min(f2_unc, cfg.nyquist());
    cx.clamp1_active = f1_unc < cfg.nyquist() - cfg.min_band_hz;
    cx.clamp2_active = f2_unc < cfg.nyquist();
    cx.sgn_low = raw_low > 0 ? 1.0 : (raw_low < 0 ? -1.0 : 0.0);
    cx.sgn_band = raw_band > 0 ? 1.0 : (raw_band < 0 ? -1.0 : 0.0);
    cx.u1 = f1 / sr;
    cx.u2 = f2 / sr;

    cx.windowed.resize(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
      const int n = i - half;
      double t;
      if (n == 0) {
        t = 2.0 * (cx.u2 - cx.u1);
      } else {
        t = (std::sin(2.0 * M_PI * cx.u2 * n) - std::sin(2.0 * M_PI * cx.u1 * n)) /
            (M_PI * n);
      }
      cx.windowed[static_cast<std::size_t>(i)] = t * tab.window[static_cast<std::size_t>(i)];
    }

    // The taps are even-symmetric, so H is real on the grid.
    cx.peak = 0.0;
    cx.peak_sign = 1.0;
    cx.peak_bin = 0;
    const int bins = tab.bins();
    for (int k = 0; k < bins; ++k) {
      const double* ck = tab.cos_kn.data() + static_cast<std::size_t>(k) * (half + 1);
      double r = cx.windowed[static_cast<std::size_t>(half)];
      for (int n = 1; n <= half; ++n)
        r += 2.0 * cx.windowed[static_cast<std::size_t>(half + n)] * ck[n];
      if (std::abs(r) > cx.peak) {
        cx.peak = std::abs(r);
        cx.peak_sign = r >= 0 ? 1.0 : -1.0;
        cx.peak_bin = k;
      }
    }
    if (cx.peak < 1e-30) throw numeric_error("build_filters: degenerate filter response");

    T* orow = out->values.data() + static_cast<std::size_t>(f) * len;
    for (int i = 0; i < len; ++i)
      orow[i] = static_cast<T>(cx.windowed[static_cast<std::size_t>(i)] / cx.peak);
  }
  check_finite(*out, "build_filters");

  out->needs_grad = params->needs_grad;
  if (tape && out->needs_grad) {
    tape->record([=]() {
      T* gp = params->ensure_grad().data();
      for (int f = 0; f < f_count; ++f) {
        const FilterCtx& cx = (*ctxs)[static_cast<std::size_t>(f)];
        const T* go = out->grad.data() + static_cast<std::size_t>(f) * len;
        const double* ckstar =
            tab.cos_kn.data() + static_cast<std::size_t>(cx.peak_bin) * (half + 1);

        // dL/dM via S = sum_n g_n * o_n.
        double weighted = 0.0;
        for (int i = 0; i < len; ++i)
          weighted += static_cast<double>(go[i]) *
                      (cx.windowed[static_cast<std::size_t>(i)] / cx.peak);

        double dl_du1 = 0.0, dl_du2 = 0.0;
        for (int i = 0; i < len; ++i) {
          const int n = i - half;
          const double dmag_ds = cx.peak_sign * ckstar[std::abs(n)];
          const double dl_ds =
              static_cast<double>(go[i]) / cx.peak - weighted / cx.peak * dmag_ds;
          const double dl_dt = dl_ds * tab.window[static_cast<std::size_t>(i)];
          dl_du2 += dl_dt * 2.0 * std::cos(2.0 * M_PI * cx.u2 * n);
          dl_du1 -= dl_dt * 2.0 * std::cos(2.0 * M_PI * cx.u1 * n);
        }

        const double dl_df2 = dl_du2 / sr;
        double dl_df1 = dl_du1 / sr;
        if (cx.clamp2_active) dl_df1 += dl_df2;  // f2 rides on f1 when unclamped
        const double dl_draw_band = cx.clamp2_active ? dl_df2 * cx.sgn_band : 0.0;
        const double dl_draw_low = cx.clamp1_active ? dl_df1 * cx.sgn_low : 0.0;
        gp[static_cast<std::size_t>(f) * 2 + 0] += static_cast<T>(dl_draw_low);
        gp[static_cast<std::size_t>(f) * 2 + 1] += static_cast<T>(dl_draw_band);
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> build_filters(Tape<T>* tape, const TensorPtr<T>& params,
                           const SincConvConfig& cfg) {
  return build_filters(tape, params, cfg, make_sinc_norm_table(cfg));
}

// Valid (unpadded) strided convolution of one audio channel with all filters.
template <typename T>
TensorPtr<T> sinc_forward(Tape<T>* tape, const TensorPtr<T>& audio,
                          const TensorPtr<T>& taps, const SincConvConfig& cfg) {
  if (audio->shape.size() != 2 || audio->shape[0] != 1)
    throw std::invalid_argument("sinc_forward: audio must be [1, T]");
  if (audio->shape[1] < cfg.kernel_length)
    throw std::invalid_argument("sinc_forward: clip shorter than the filter kernel");
  return grouped_conv1d(tape, audio, taps, cfg.stride, /*pad=*/0, /*groups=*/1);
}

// ---- spectral inspection (plain double math, no tape) ----

// One-sided DTFT magnitudes of a tap vector on an nfft grid; identical to a
// zero-padded FFT of the taps.
inline std::vector<double> dft_magnitude(const std::vector<double>& taps,
                                         int nfft = 4096) {
  const int bins = nfft / 2 + 1;
  std::vector<double> mag(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < taps.size(); ++n) {
      const double w = 2.0 * M_PI * k * static_cast<double>(n) / nfft;
      re += taps[n] * std::cos(w);
      im -= taps[n] * std::sin(w);
    }
    mag[static_cast<std::size_t>(k)] = std::sqrt(re * re + im * im);
  }
  return mag;
}

// Fraction of one-sided spectral energy falling inside [f1, f2] Hz.
inline double band_energy_fraction(const std::vector<double>& taps, double f1,
                                   double f2, double sample_rate, int nfft = 4096) {
  const auto mag = dft_magnitude(taps, nfft);
  double inside = 0.0, total = 0.0;
  for (std::size_t k = 0; k < mag.size(); ++k) {
    const double f = static_cast<double>(k) * sample_rate / nfft;
    const double e = mag[k] * mag[k];
    total += e;
    if (f >= f1 && f <= f2) inside += e;
  }
  return total > 0 ? inside / total : 0.0;
}

// ---- export ----

struct FilterExport {
  struct Filter {
    double f1_hz, f2_hz;
    std::vector<double> taps;           // indexed by centered n in [-h, h]
    std::vector<double> fft_bin_hz;
    std::vector<double> fft_magnitude;  // NFFT = 4096, one-sided
  };
  int kernel_length = 0;
  int nfft = 4096;
  std::vector<Filter> filters;

  std::size_t row_count() const {
    std::size_t rows = 0;
    for (const auto& f : filters) rows += f.taps.size() + f.fft_bin_hz.size();
    return rows;
  }
};

template <typename T>
FilterExport export_filters(const TensorPtr<T>& params, const SincConvConfig& cfg,
                            int nfft = 4096) {
  auto taps = build_filters<T>(nullptr, params, cfg);
  FilterExport ex;
  ex.kernel_length = cfg.kernel_length;
  ex.nfft = nfft;
  ex.filters.resize(static_cast<std::size_t>(cfg.n_filters));
  for (int f = 0; f < cfg.n_filters; ++f) {
    auto& row = ex.filters[static_cast<std::size_t>(f)];
    auto cut = effective_cutoffs(static_cast<double>(params->at(f, 0)),
                                 static_cast<double>(params->at(f, 1)), cfg);
    row.f1_hz = cut.first;
    row.f2_hz = cut.second;
    row.taps.resize(static_cast<std::size_t>(cfg.kernel_length));
    for (int i = 0; i < cfg.kernel_length; ++i)
      row.taps[static_cast<std::size_t>(i)] = static_cast<double>(
          taps->values[static_cast<std::size_t>(f) * cfg.kernel_length + i]);
    row.fft_magnitude = dft_magnitude(row.taps, nfft);
    row.fft_bin_hz.resize(row.fft_magnitude.size());
    for (std::size_t k = 0; k < row.fft_bin_hz.size(); ++k)
      row.fft_bin_hz[k] = static_cast<double>(k) * cfg.sample_rate / nfft;
  }
  return ex;
}

// Long-format CSV, one row per (filter, tap) then per (filter, bin);
// inapplicable cells are left empty.
inline void write_filter_csv(std::ostream& os, const FilterExport& ex) {
  os << "filter_id,f1_hz,f2_hz,tap_index,tap_value,fft_bin_hz,fft_magnitude\n";
  os << std::setprecision(9);
  const int half = (ex.kernel_length - 1) / 2;
  for (std::size_t f = 0; f < ex.filters.size(); ++f) {
    const auto& flt = ex.filters[f];
    for (int i = 0; i < ex.kernel_length; ++i)
      os << f << ',' << flt.f1_hz << ',' << flt.f2_hz << ',' << (i - half) << ','
         << flt.taps[static_cast<std::size_t>(i)] << ",,\n";
    for (std::size_t k = 0; k < flt.fft_bin_hz.size(); ++k)
      os << f << ',' << flt.f1_hz << ',' << flt.f2_hz << ",,," << flt.fft_bin_hz[k]
         << ',' << flt.fft_magnitude[k] << '\n';
  }
}

}  // namespace sinckws
