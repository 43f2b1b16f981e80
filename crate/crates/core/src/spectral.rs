//! Welch power spectral density, autocorrelation and a band-limited SNR.
//!
//! Spectra are one-sided densities over angular frequency, normalised so
//! that Σ psd·Δω equals the (window-weighted) variance of the series.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // Periodic Hann: exact 50% overlap-add.
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

impl FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rectangular" | "rect" => Ok(Window::Rectangular),
            other => invalid(format!("unknown window `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub observable: String,
    /// Angular frequencies k·Δω, k = 0..=L/2.
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub window: Window,
    pub segments: usize,
    pub segment_length: usize,
    pub record_length: usize,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution()
    }

    pub fn nearest_bin(&self, freq: f64) -> usize {
        let k = (freq / self.resolution()).round();
        (k.max(0.0) as usize).min(self.freqs.len() - 1)
    }

    /// Σ psd·Δω over the bins with lo ≤ ω ≤ hi.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.resolution()
    }

    /// Element-wise mean of spectra that share a grid.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra
            .first()
            .ok_or_else(|| Error::InvalidArgument("no spectra to average".into()))?;
        if spectra.iter().any(|s| s.freqs.len() != first.freqs.len()) {
            return invalid("spectra have different grids");
        }
        let n = spectra.len() as f64;
        let psd = (0..first.psd.len())
            .map(|k| spectra.iter().map(|s| s.psd[k]).sum::<f64>() / n)
            .collect();
        Ok(Spectrum {
            psd,
            segments: first.segments * spectra.len(),
            ..first.clone()
        })
    }
}

/// Welch-averaged one-sided periodogram with 50% segment overlap.
pub fn psd(series: &[f64], dt: f64, window: Window, segments: usize) -> Result<Spectrum> {
    psd_named("series", series, dt, window, segments)
}

pub fn psd_named(
    observable: &str,
    series: &[f64],
    dt: f64,
    window: Window,
    segments: usize,
) -> Result<Spectrum> {
    if segments == 0 {
        return invalid("need at least one segment");
    }
    if !(dt > 0.0) {
        return invalid("sampling step must be positive");
    }
    let n = series.len();
    if n < 2 * segments {
        return invalid(format!(
            "series of length {n} too short for {segments} segments"
        ));
    }
    // K half-overlapping segments of length L span (K + 1) L / 2 samples.
    let seg_len = if segments == 1 {
        n
    } else {
        2 * n / (segments + 1)
    };
    let step = if segments == 1 { 0 } else { seg_len / 2 };
    if seg_len < 4 {
        return invalid("segments shorter than 4 samples");
    }
    let w = window.coefficients(seg_len);
    let w_energy: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg_len);
    let n_bins = seg_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    for s in 0..segments {
        let seg = &series[s * step..s * step + seg_len];
        let mean = seg.iter().sum::<f64>() / seg_len as f64;
        for ((b, x), wk) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new((x - mean) * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let d_omega = 2.0 * PI / (seg_len as f64 * dt);
    // Σ_k |X_k|² = L Σ |x w|², so |X_k|² / (U L Δω) integrates to the variance.
    let norm = 1.0 / (segments as f64 * w_energy * seg_len as f64 * d_omega);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (seg_len % 2 == 0 && k == seg_len / 2) {
                1.0
            } else {
                2.0
            };
            a * norm * one_sided
        })
        .collect();
    Ok(Spectrum {
        observable: observable.to_string(),
        freqs: (0..n_bins).map(|k| k as f64 * d_omega).collect(),
        psd,
        window,
        segments,
        segment_length: seg_len,
        record_length: n,
    })
}

/// Residual of a least-squares polynomial fit of the given degree in the
/// sample index.
pub fn detrend(series: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= degree {
        return invalid(format!("{n} samples cannot fix a degree-{degree} trend"));
    }
    // Abscissa scaled to [−1, 1] keeps the Vandermonde matrix well conditioned.
    let x = |k: usize| {
        if n == 1 {
            0.0
        } else {
            2.0 * k as f64 / (n - 1) as f64 - 1.0
        }
    };
    let a = DMatrix::from_fn(n, degree + 1, |k, p| x(k).powi(p as i32));
    let b = DVector::from_column_slice(series);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("detrend fit failed: {e}")))?;
    let fit = a * coef;
    Ok(series.iter().zip(fit.iter()).map(|(y, f)| y - f).collect())
}

/// Biased autocorrelation r(τ) = (1/n) Σ_t (x_t − x̄)(x_{t+τ} − x̄), τ = 0..n−1.
pub fn autocorrelation(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let padded = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(padded);
    let inv = planner.plan_fft_inverse(padded);
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|x| Complex64::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(padded)
        .collect();
    fwd.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex64::new(b.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / (padded as f64 * n as f64);
    buf.iter().take(n).map(|b| b.re * scale).collect()
}

/// One-sided angular PSD from an autocorrelation sequence via a lag window
/// (Blackman–Tukey): S(ω) = (Δt/π)[r₀ + 2Σ_{τ=1}^{M} w_τ r_τ cos(ωτΔt)].
pub fn spectrum_from_autocorrelation(
    acf: &[f64],
    dt: f64,
    max_lag: usize,
    window: Window,
    freqs: &[f64],
) -> Vec<f64> {
    let m = max_lag.min(acf.len().saturating_sub(1));
    let lag_window: Vec<f64> = match window {
        // Symmetric Hann taper falling to zero at lag M + 1.
        Window::Hann => (0..=m)
            .map(|t| 0.5 + 0.5 * (PI * t as f64 / (m + 1) as f64).cos())
            .collect(),
        Window::Rectangular => vec![1.0; m + 1],
    };
    freqs
        .iter()
        .map(|w| {
            let mut s = acf[0];
            for t in 1..=m {
                s += 2.0 * lag_window[t] * acf[t] * (w * t as f64 * dt).cos();
            }
            s * dt / PI
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub signal_freq: f64,
    /// Σ psd·Δω over the signal window.
    pub signal_power: f64,
    /// Median psd of the baseline band times the signal window width.
    pub baseline_power: f64,
    pub snr: f64,
    pub method: String,
}

impl SnrReport {
    /// Power above the baseline estimate, floored at zero.
    pub fn excess_power(&self) -> f64 {
        (self.signal_power - self.baseline_power).max(0.0)
    }

    /// Amplitude of a sinusoid carrying the excess power.
    pub fn tone_amplitude(&self) -> f64 {
        (2.0 * self.excess_power()).sqrt()
    }
}

impl fmt::Display for SnrReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "signal_freq={:.6} signal_power={:.6e} baseline_power={:.6e} snr={:.6} method={}",
            self.signal_freq, self.signal_power, self.baseline_power, self.snr, self.method
        )
    }
}

pub fn snr(
    spectrum: &Spectrum,
    signal_freq: f64,
    signal_halfwidth: usize,
    baseline_band: (f64, f64),
) -> Result<SnrReport> {
    let top = *spectrum.freqs.last().unwrap_or(&0.0);
    if !(signal_freq >= 0.0 && signal_freq <= top) {
        return invalid(format!(
            "signal frequency {signal_freq} outside spectrum grid [0, {top}]"
        ));
    }
    let k0 = spectrum.nearest_bin(signal_freq);
    let lo = k0.saturating_sub(signal_halfwidth);
    let hi = (k0 + signal_halfwidth).min(spectrum.psd.len() - 1);
    let width = (hi - lo + 1) as f64;
    let dw = spectrum.resolution();
    let signal_power = spectrum.psd[lo..=hi].iter().sum::<f64>() * dw;
    let mut base: Vec<f64> = spectrum
        .freqs
        .iter()
        .zip(&spectrum.psd)
        .enumerate()
        .filter(|(k, (f, _))| {
            **f >= baseline_band.0 && **f <= baseline_band.1 && (*k < lo || *k > hi)
        })
        .map(|(_, (_, p))| *p)
        .collect();
    if base.is_empty() {
        return invalid(format!(
            "baseline band [{}, {}] holds no bins outside the signal window",
            baseline_band.0, baseline_band.1
        ));
    }
    let baseline_power = median(&mut base) * dw * width;
    let snr = if baseline_power > 0.0 {
        signal_power / baseline_power
    } else {
        f64::INFINITY
    };
    Ok(SnrReport {
        signal_freq: spectrum.freqs[k0],
        signal_power,
        baseline_power,
        snr,
        method: format!(
            "window-sum ±{signal_halfwidth} bins / median baseline [{:.4}, {:.4}]",
            baseline_band.0, baseline_band.1
        ),
    })
}

/// Frequency of the largest psd value in [lo, hi], skipping `exclude`
/// (centre, half-width) if given.
pub fn dominant_frequency(
    spectrum: &Spectrum,
    band: (f64, f64),
    exclude: Option<(f64, f64)>,
) -> Option<f64> {
    spectrum
        .freqs
        .iter()
        .zip(&spectrum.psd)
        .filter(|(f, _)| **f >= band.0 && **f <= band.1)
        .filter(|(f, _)| exclude.is_none_or(|(c, hw)| (**f - c).abs() > hw))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(f, _)| *f)
}

/// Power-weighted mean frequency over a band.
pub fn spectral_centroid(spectrum: &Spectrum, band: (f64, f64)) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (f, p) in spectrum.freqs.iter().zip(&spectrum.psd) {
        if *f >= band.0 && *f <= band.1 {
            num += f * p;
            den += p;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
