//! Physical link description and the frequency-domain link functions.
//!
//! Everything here is stored in SI units. [`LinkConfig`] carries the
//! engineering units people write in config files (dB/km, ps/nm/km, ...);
//! [`LinkConfig::to_si`] validates it and produces a [`Link`].
//!
//! The link functions follow the usual lumped-amplification picture: a
//! single-span NLI efficiency [`zeta`], a phased-array factor [`nu`] for
//! the coherent sum over identical spans, and their product [`mu`].

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Below this `|sin(theta Ls)|` the span-coherence factor switches to its
/// analytic limit.
pub const NU_SINGULARITY_EPS: f64 = 1e-12;

/// Link parameters as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub alpha_db_per_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub gamma_per_w_km: f64,
    pub span_length_km: f64,
    pub num_spans: usize,
    pub center_wavelength_nm: f64,
    pub edfa_noise_figure_db: f64,
}

impl Default for LinkConfig {
    /// Standard single-mode fiber, 10 x 100 km.
    fn default() -> Self {
        LinkConfig {
            alpha_db_per_km: 0.22,
            dispersion_ps_nm_km: 16.7,
            gamma_per_w_km: 1.3,
            span_length_km: 100.0,
            num_spans: 10,
            center_wavelength_nm: 1550.0,
            edfa_noise_figure_db: 6.0,
        }
    }
}

/// Validated link in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Link {
    /// Field attenuation, Np/m. Power decays as `exp(-2 alpha z)`.
    pub alpha: f64,
    /// Group-velocity dispersion, s^2/m.
    pub beta2: f64,
    /// Nonlinear coefficient, 1/(W m).
    pub gamma: f64,
    /// Span length, m.
    pub span_length: f64,
    pub num_spans: usize,
    /// Optical carrier frequency, Hz.
    pub carrier_hz: f64,
    /// EDFA noise figure as a linear ratio.
    pub noise_figure: f64,
}

impl LinkConfig {
    pub fn to_si(&self) -> Result<Link> {
        check_positive("alpha_db_per_km", self.alpha_db_per_km)?;
        check_positive("gamma_per_w_km", self.gamma_per_w_km)?;
        check_positive("span_length_km", self.span_length_km)?;
        check_positive("center_wavelength_nm", self.center_wavelength_nm)?;
        if !self.dispersion_ps_nm_km.is_finite() {
            return Err(Error::param("dispersion_ps_nm_km", "must be finite"));
        }
        if !self.edfa_noise_figure_db.is_finite() {
            return Err(Error::param("edfa_noise_figure_db", "must be finite"));
        }
        if self.num_spans < 1 {
            return Err(Error::param("num_spans", "at least one span is required"));
        }
        let wavelength = self.center_wavelength_nm * 1e-9;
        Ok(Link {
            alpha: db_per_km_to_field_np_per_m(self.alpha_db_per_km),
            beta2: beta2_from_dispersion(self.dispersion_ps_nm_km, self.center_wavelength_nm)?,
            gamma: self.gamma_per_w_km * 1e-3,
            span_length: self.span_length_km * 1e3,
            num_spans: self.num_spans,
            carrier_hz: SPEED_OF_LIGHT / wavelength,
            noise_figure: 10f64.powf(self.edfa_noise_figure_db / 10.0),
        })
    }
}

impl Link {
    /// Span power loss, linear. The amplifier gain equals this.
    pub fn span_loss(&self) -> f64 {
        (2.0 * self.alpha * self.span_length).exp()
    }

    /// Same link with a different span count.
    pub fn with_spans(mut self, num_spans: usize) -> Self {
        self.num_spans = num_spans;
        self
    }

    /// Same link with nonlinearity switched off.
    pub fn linear(mut self) -> Self {
        self.gamma = 0.0;
        self
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

/// dB/km of power loss to field attenuation in Np/m.
pub fn db_per_km_to_field_np_per_m(db_per_km: f64) -> f64 {
    db_per_km * std::f64::consts::LN_10 / 20.0 * 1e-3
}

/// `beta2 = -D lambda^2 / (2 pi c)`, in s^2/m.
pub fn beta2_from_dispersion(d_ps_nm_km: f64, lambda_nm: f64) -> Result<f64> {
    if !(lambda_nm.is_finite() && lambda_nm > 0.0) {
        return Err(Error::param("center_wavelength_nm", "wavelength must be positive"));
    }
    let d = d_ps_nm_km * 1e-6; // ps/(nm km) -> s/m^2
    let lambda = lambda_nm * 1e-9;
    Ok(-d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT))
}

#[inline]
fn beat_product(f1: f64, f2: f64, f: f64) -> f64 {
    (f1 - f) * (f2 - f)
}

/// Single-span NLI generation efficiency. Depends on the frequencies only
/// through `(f1 - f)(f2 - f)`.
pub fn zeta(f1: f64, f2: f64, f: f64, link: &Link) -> Complex64 {
    zeta_of_product(beat_product(f1, f2, f), link)
}

pub(crate) fn zeta_of_product(p: f64, link: &Link) -> Complex64 {
    let x = 4.0 * PI * PI * link.beta2 * p;
    let two_alpha = 2.0 * link.alpha;
    let num = Complex64::new(1.0, 0.0)
        - Complex64::new(-two_alpha * link.span_length, x * link.span_length).exp();
    link.gamma * num / Complex64::new(two_alpha, -x)
}

/// Coherent sum of the per-span NLI contributions (phased-array factor).
pub fn nu(f1: f64, f2: f64, f: f64, link: &Link) -> Complex64 {
    nu_of_product(beat_product(f1, f2, f), link)
}

pub(crate) fn nu_of_product(p: f64, link: &Link) -> Complex64 {
    let ns = link.num_spans as f64;
    let theta_l = 2.0 * link.beta2 * PI * PI * p * link.span_length;
    let phase = Complex64::from_polar(1.0, theta_l * (ns - 1.0));
    let den = theta_l.sin();
    let ratio = if den.abs() < NU_SINGULARITY_EPS {
        // L'Hopital; equals Ns at theta = 0 and keeps the right sign at the
        // other zeros of sin(theta Ls).
        ns * (ns * theta_l).cos() / theta_l.cos()
    } else {
        (ns * theta_l).sin() / den
    };
    phase * ratio
}

/// Multi-span link function `zeta * nu`.
pub fn mu(f1: f64, f2: f64, f: f64, link: &Link) -> Complex64 {
    mu_of_product(beat_product(f1, f2, f), link)
}

#[inline]
pub(crate) fn mu_of_product(p: f64, link: &Link) -> Complex64 {
    zeta_of_product(p, link) * nu_of_product(p, link)
}

/// Beating of a triplet of pulse components weighted by the link function.
pub fn triplet_beating(f1: f64, f2: f64, f: f64, pulse: &PulseShape, link: &Link) -> Complex64 {
    let s = pulse.spectrum(f1) * pulse.spectrum(f1 + f2 - f) * pulse.spectrum(f2);
    if s == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    mu(f1, f2, f, link) * s
}

/// Spectrum normalization convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `Integral |S(f)|^2 df = 1/Rs`: the symbol energy equals the
    /// waveform power.
    #[default]
    UnitEnergy,
}

/// Root-raised-cosine pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub symbol_rate_hz: f64,
    pub rolloff: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

impl PulseShape {
    pub fn new(symbol_rate_hz: f64, rolloff: f64) -> Result<Self> {
        check_positive("symbol_rate_hz", symbol_rate_hz)?;
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(Error::param("rolloff", format!("must lie in [0, 1], got {rolloff}")));
        }
        Ok(PulseShape { symbol_rate_hz, rolloff, normalization: Normalization::UnitEnergy })
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.symbol_rate_hz
    }

    /// One-sided occupied bandwidth `(1 + rolloff) Rs / 2`.
    pub fn half_bandwidth(&self) -> f64 {
        0.5 * (1.0 + self.rolloff) * self.symbol_rate_hz
    }

    /// `S(f)`: real, even and non-negative.
    pub fn spectrum(&self, f: f64) -> f64 {
        let t = self.symbol_period();
        let af = f.abs() * t; // normalized to Rs
        let b = self.rolloff;
        if af <= 0.5 * (1.0 - b) {
            t
        } else if af <= 0.5 * (1.0 + b) {
            t * (PI / (2.0 * b) * (af - 0.5 * (1.0 - b))).cos().max(0.0)
        } else {
            0.0
        }
    }

    /// Closed-form impulse response `s(t)` whose transform is
    /// [`PulseShape::spectrum`].
    pub fn impulse_response(&self, time: f64) -> f64 {
        let b = self.rolloff;
        let x = time * self.symbol_rate_hz;
        if x.abs() < 1e-12 {
            return 1.0 - b + 4.0 * b / PI;
        }
        if b > 0.0 && ((4.0 * b * x).abs() - 1.0).abs() < 1e-9 {
            let a = PI / (4.0 * b);
            return b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
        }
        let num = (PI * x * (1.0 - b)).sin() + 4.0 * b * x * (PI * x * (1.0 + b)).cos();
        let den = PI * x * (1.0 - (4.0 * b * x).powi(2));
        num / den
    }
}
