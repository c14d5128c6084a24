//! NLI power spectral density with symbol-energy memory.
//!
//! The PSD is the modulation-aware EGN baseline plus corrections driven by
//! time-averaged energy covariances:
//!
//! ```text
//! G = G_EGN + G_SPT(1) + G_SPT(2) + G_XPT(1) + G_XPT(2) + G_XP
//! ```
//!
//! The second-order (double-sum) terms are small in practice and are
//! dropped by [`Mode::Approx`], the default. Inputs are a [`KernelTable`]
//! for the link and a [`MomentSet`]/[`CovarianceSet`] pair already scaled
//! to the launch power.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{trapezoid_weights, KernelTable, QuadratureConfig, SingleDelayKernels};
use crate::linkmodel::{Link, PulseShape, PLANCK};
use crate::shaping::AmplitudeSource;
use crate::stats::{analytic_covariances, AmplitudeComposition, CovarianceSet, Mapping, MomentSet};

/// Converts the kernel-level PSD to the PSD of one polarization.
///
/// With Gaussian moments the EGN part reduces to `E^3 phi1`, which carries
/// `16/27`; the dual-polarization GN result per polarization is `64/27`.
pub const PSD_SCALE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All terms, including the double sums.
    Full,
    /// First-order corrections only.
    #[default]
    Approx,
    /// First-order corrections for independent polarizations.
    PmApprox,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Approx => "approx",
            Mode::PmApprox => "pm_approx",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "approx" => Ok(Mode::Approx),
            "pm_approx" => Ok(Mode::PmApprox),
            _ => Err(Error::Usage(format!("unknown mode `{s}` (full, approx, pm_approx)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MegnConfig {
    /// `M`, the number of delays kept in the correction sums.
    pub memory: usize,
    pub mode: Mode,
    /// Points of the symmetric frequency grid over `[-Rs/2, Rs/2]`.
    pub freq_points: usize,
}

impl Default for MegnConfig {
    fn default() -> Self {
        MegnConfig { memory: 50, mode: Mode::Approx, freq_points: 65 }
    }
}

impl MegnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freq_points < 3 || self.freq_points.is_multiple_of(2) {
            return Err(Error::param("freq_points", "must be odd and >= 3"));
        }
        Ok(())
    }

    /// Exactly symmetric grid: negative points are negated positive ones.
    pub fn f_grid(&self, pulse: &PulseShape) -> Vec<f64> {
        symmetric_grid(self.freq_points, 0.5 * pulse.symbol_rate_hz)
    }
}

pub fn symmetric_grid(points: usize, half_width: f64) -> Vec<f64> {
    let h = (points - 1) / 2;
    let pos: Vec<f64> = (0..=h).map(|i| half_width * i as f64 / h as f64).collect();
    pos.iter().rev().map(|x| -x).take(h).chain(pos.iter().copied()).collect()
}

/// Per-contribution PSD arrays, W/Hz.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NLISpectrum {
    pub f: Vec<f64>,
    pub g_egn: Vec<f64>,
    pub g_spt1: Vec<f64>,
    pub g_spt2: Vec<f64>,
    pub g_xpt1: Vec<f64>,
    pub g_xpt2: Vec<f64>,
    pub g_xp: Vec<f64>,
    pub g_total: Vec<f64>,
}

impl NLISpectrum {
    /// Trapezoidal integral of one contribution over the grid.
    pub fn integrate(&self, g: &[f64]) -> f64 {
        trapezoid_weights(&self.f).iter().zip(g).map(|(w, v)| w * v).sum()
    }

    pub fn p_nli(&self) -> f64 {
        self.integrate(&self.g_total)
    }

    /// CSV rows `f_hz,g_egn,...,g_total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["f_hz", "g_egn", "g_spt1", "g_spt2", "g_xpt1", "g_xpt2", "g_xp", "g_total"]).map_err(io)?;
        for i in 0..self.f.len() {
            let row = [
                self.f[i],
                self.g_egn[i],
                self.g_spt1[i],
                self.g_spt2[i],
                self.g_xpt1[i],
                self.g_xpt2[i],
                self.g_xp[i],
                self.g_total[i],
            ];
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

/// Power figures derived from a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NLIResult {
    pub p_ch: f64,
    pub p_nli: f64,
    /// `P_NLI / P_ch^3`, 1/W^2.
    pub eta: f64,
    pub p_ase: f64,
    pub snr_eff_db: f64,
    pub snr_opt_db: f64,
    pub p_opt: f64,
}

fn zeros(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

/// Single-delay channel functions at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelFunctions {
    pub s1: f64,
    pub s2: f64,
    pub x1: f64,
    pub x2: f64,
    /// Multiplies `K_X3(0, tau) - E K_X1(0)`.
    pub x3: f64,
    /// `s1` for independent polarizations.
    pub s1_pm: f64,
}

pub fn channel_functions(k: &SingleDelayKernels, tau: usize) -> ChannelFunctions {
    let (c1, c2, c3) = (k.chi1[tau], k.chi2[tau], k.chi3[tau]);
    let (x1, p1, p2) = (k.xi1[tau], k.psi1[tau], k.psi2[tau]);
    ChannelFunctions {
        s1: 5.0 * x1 + 5.0 * p1 + 2.0 * p2 - 22.0 * c1 - 21.0 * c2 - 5.0 * c3,
        s2: 4.0 * c1 + 4.0 * c2 + c3,
        x1: 4.0 * x1 + p1 + p2 - 14.0 * c1 - 9.0 * c2 - c3,
        x2: 2.0 * c1 + c2,
        x3: 6.0 * c1 + 5.0 * c2 + c3,
        s1_pm: 5.0 * x1 + 5.0 * p1 + 2.0 * p2 - 16.0 * c1 - 16.0 * c2 - 4.0 * c3,
    }
}

/// `(kappa_S3, kappa_X3)` of the two-delay terms.
pub fn double_channel_functions(xi2: f64, psi3: f64) -> (f64, f64) {
    (4.0 * xi2 + 2.0 * psi3, 5.0 * xi2 + psi3)
}

/// EGN channel functions `[kappa1, kappa2, kappa3]`.
pub fn egn_channel_functions(phi: &[f64; 4]) -> [f64; 3] {
    [phi[0], 5.0 * phi[1] + phi[2], phi[3]]
}

/// XP channel functions: `[3 phi4, -12 phi4 + 5 phi2 + phi3]`.
pub fn xp_channel_functions(phi: &[f64; 4]) -> [f64; 2] {
    [3.0 * phi[3], -12.0 * phi[3] + 5.0 * phi[1] + phi[2]]
}

pub fn g_egn(table: &KernelTable, moments: &MomentSet) -> Vec<f64> {
    let [e, e4, e6] = moments.sym_moments;
    let e3 = e * e * e;
    let c1 = e3;
    let c2 = e * e4 - 2.0 * e3;
    let c3 = e6 - 9.0 * e * e4 + 12.0 * e3;
    table
        .phi
        .iter()
        .map(|p| {
            let k = egn_channel_functions(p);
            PSD_SCALE * (c1 * k[0] + c2 * k[1] + c3 * k[2])
        })
        .collect()
}

fn check_memory(table: &KernelTable, cov: &CovarianceSet, memory: usize, second_order: bool) -> Result<()> {
    // past the correlation length every covariance is exactly zero
    let support = cov.corr_length.saturating_sub(1);
    let pairs = if second_order { 2 * memory } else { memory };
    if cov.max_tau() < pairs.min(support) {
        return Err(Error::Usage(format!("covariances stored up to delay {}, need {}", cov.max_tau(), pairs.min(support))));
    }
    if second_order && cov.max_tau_prime() < (2 * memory).min(support) {
        return Err(Error::Usage(format!(
            "triple covariances stored up to delay {}, need {}",
            cov.max_tau_prime(),
            (2 * memory).min(support)
        )));
    }
    if memory > table.max_tau {
        return Err(Error::Usage(format!("memory {memory} exceeds the kernel table's {} delays", table.max_tau)));
    }
    if second_order && memory > 0 {
        match &table.double {
            Some(d) if d.iter().all(|k| k.memory >= memory) => {}
            _ => return Err(Error::Usage("second-order terms need double-delay kernels up to the memory".into())),
        }
    }
    Ok(())
}

/// Self-polarization temporal terms `(G(1), G(2))`.
pub fn g_spt(
    table: &KernelTable,
    moments: &MomentSet,
    cov: &CovarianceSet,
    memory: usize,
    second_order: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_memory(table, cov, memory, second_order)?;
    let e = moments.sym_moments[0];
    let nf = table.f_grid.len();
    let mut g1 = zeros(nf);
    let mut g2 = zeros(nf);
    for (i, k) in table.single.iter().enumerate() {
        let mut acc = 0.0;
        for tau in 1..=memory {
            let c = channel_functions(k, tau);
            acc += e * cov.k_s1(tau) * c.s1 + cov.k_s2(tau) * c.s2;
        }
        g1[i] = PSD_SCALE * acc;
        if second_order {
            let d = &table.double.as_ref().unwrap()[i];
            let mut acc = 0.0;
            for tau in 1..=memory {
                for tp in tau + 1..=tau + memory {
                    let bracket = cov.k_s3(tau, tp) - e * (cov.k_s1(tau) + cov.k_s1(tp) + cov.k_s1(tp - tau));
                    if bracket != 0.0 {
                        acc += bracket * double_channel_functions(d.xi2_at(tau, tp), d.psi3_at(tau, tp)).0;
                    }
                }
            }
            g2[i] = PSD_SCALE * acc;
        }
    }
    Ok((g1, g2))
}

/// Cross-polarization temporal terms `(G(1), G(2))`.
pub fn g_xpt(
    table: &KernelTable,
    moments: &MomentSet,
    cov: &CovarianceSet,
    memory: usize,
    second_order: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_memory(table, cov, memory, second_order)?;
    let e = moments.sym_moments[0];
    let nf = table.f_grid.len();
    let mut g1 = zeros(nf);
    let mut g2 = zeros(nf);
    for (i, k) in table.single.iter().enumerate() {
        let mut acc = 0.0;
        for tau in 1..=memory {
            let c = channel_functions(k, tau);
            acc += e * cov.k_x1(tau) * c.x1 + cov.k_x2(tau) * c.x2 + (cov.k_x3_zero(tau) - e * cov.x1_0) * c.x3;
        }
        g1[i] = PSD_SCALE * acc;
        if second_order {
            let d = &table.double.as_ref().unwrap()[i];
            let mut acc = 0.0;
            for tau in 1..=memory {
                for tp in tau + 1..=tau + memory {
                    let bracket = cov.k_x3(tau, tp) - e * (cov.k_x1(tau) + cov.k_s1(tp) + cov.k_x1(tp - tau));
                    if bracket != 0.0 {
                        acc += bracket * double_channel_functions(d.xi2_at(tau, tp), d.psi3_at(tau, tp)).1;
                    }
                }
            }
            g2[i] = PSD_SCALE * acc;
        }
    }
    Ok((g1, g2))
}

/// Same-slot cross-polarization term.
pub fn g_xp(table: &KernelTable, moments: &MomentSet, cov: &CovarianceSet) -> Vec<f64> {
    let e = moments.sym_moments[0];
    table
        .phi
        .iter()
        .map(|p| {
            let k = xp_channel_functions(p);
            PSD_SCALE * (cov.x2_0 * k[0] + e * cov.x1_0 * k[1])
        })
        .collect()
}

/// Temporal terms for independent polarizations, folded into one sum.
fn g_pm(table: &KernelTable, moments: &MomentSet, cov: &CovarianceSet, memory: usize) -> Result<Vec<f64>> {
    check_memory(table, cov, memory, false)?;
    let e = moments.sym_moments[0];
    Ok(table
        .single
        .iter()
        .map(|k| {
            let mut acc = 0.0;
            for tau in 1..=memory {
                let c = channel_functions(k, tau);
                acc += e * cov.k_s1(tau) * c.s1_pm + cov.k_s2(tau) * c.s2;
            }
            PSD_SCALE * acc
        })
        .collect())
}

/// Sum the contributions selected by `mode`.
pub fn assemble(
    mode: Mode,
    table: &KernelTable,
    moments: &MomentSet,
    cov: &CovarianceSet,
    memory: usize,
) -> Result<NLISpectrum> {
    let nf = table.f_grid.len();
    let g_egn = g_egn(table, moments);
    let (g_spt1, g_spt2, g_xpt1, g_xpt2, g_xp) = match mode {
        Mode::Full | Mode::Approx => {
            let second = mode == Mode::Full;
            let (s1, s2) = g_spt(table, moments, cov, memory, second)?;
            let (x1, x2) = g_xpt(table, moments, cov, memory, second)?;
            (s1, s2, x1, x2, g_xp(table, moments, cov))
        }
        Mode::PmApprox => {
            let tol = 1e-12 * moments.sym_moments[0].powi(3);
            if cov.has_cross_polarization(tol) {
                return Err(Error::Usage("pm_approx needs independent polarizations".into()));
            }
            (g_pm(table, moments, cov, memory)?, zeros(nf), zeros(nf), zeros(nf), zeros(nf))
        }
    };
    let g_total = (0..nf).map(|i| g_egn[i] + g_spt1[i] + g_spt2[i] + g_xpt1[i] + g_xpt2[i] + g_xp[i]).collect();
    Ok(NLISpectrum { f: table.f_grid.clone(), g_egn, g_spt1, g_spt2, g_xpt1, g_xpt2, g_xp, g_total })
}

/// Accumulated ASE power per polarization in the signal bandwidth `Rs`.
pub fn ase_power(link: &Link, pulse: &PulseShape) -> f64 {
    link.num_spans as f64 * (link.span_loss() - 1.0) * link.noise_figure / 2.0
        * PLANCK
        * link.carrier_hz
        * pulse.symbol_rate_hz
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn eta_and_snr(spectrum: &NLISpectrum, p_ch: f64, link: &Link, pulse: &PulseShape) -> Result<NLIResult> {
    if !(p_ch.is_finite() && p_ch > 0.0) {
        return Err(Error::param("p_ch", "launch power must be positive"));
    }
    let p_nli = spectrum.p_nli();
    let eta = p_nli / (p_ch * p_ch * p_ch);
    let p_ase = ase_power(link, pulse);
    let snr_eff = p_ch / (p_ase + eta * p_ch * p_ch * p_ch);
    let p_opt = (p_ase / (2.0 * eta)).cbrt();
    let snr_opt = p_opt / (1.5 * p_ase);
    Ok(NLIResult { p_ch, p_nli, eta, p_ase, snr_eff_db: db(snr_eff), snr_opt_db: db(snr_opt), p_opt })
}

/// Kernels for one link, sized for `cfg`. Share it across blocklengths and
/// mappings.
pub fn kernel_table(link: &Link, pulse: &PulseShape, quad: &QuadratureConfig, cfg: &MegnConfig) -> Result<KernelTable> {
    cfg.validate()?;
    let double = (cfg.mode == Mode::Full).then_some(cfg.memory);
    KernelTable::compute(&cfg.f_grid(pulse), pulse, link, quad, cfg.memory, double)
}

/// Moments and covariances at launch power `p_ch`.
pub fn signal_statistics(
    comp: &AmplitudeComposition,
    mapping: Mapping,
    source: AmplitudeSource,
    p_ch: f64,
    cfg: &MegnConfig,
) -> Result<(MomentSet, CovarianceSet)> {
    comp.correlation_length(mapping)?;
    match source {
        AmplitudeSource::Iid => {
            // independent dimensions: the 1-D moments, no memory
            let m = MomentSet::new(comp, Mapping::OneD)?.scaled_to(p_ch);
            Ok((m, CovarianceSet::zeros(mapping, 1, 0, 0)))
        }
        AmplitudeSource::Ccdm => {
            let m = MomentSet::new(comp, mapping)?;
            let (pairs, triples) = match cfg.mode {
                Mode::Full => (2 * cfg.memory, 2 * cfg.memory),
                _ => (cfg.memory, 0),
            };
            let k = analytic_covariances(comp, mapping, pairs, triples)?;
            let s = p_ch / m.p_ch;
            Ok((m.scaled_to(p_ch), k.scaled(s)))
        }
    }
}

/// Spectrum and power figures for one shaped configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub spectrum: NLISpectrum,
    pub result: NLIResult,
}

pub fn predict(
    table: &KernelTable,
    link: &Link,
    pulse: &PulseShape,
    comp: &AmplitudeComposition,
    mapping: Mapping,
    source: AmplitudeSource,
    p_ch: f64,
    cfg: &MegnConfig,
) -> Result<Prediction> {
    let (m, k) = signal_statistics(comp, mapping, source, p_ch, cfg)?;
    let spectrum = assemble(cfg.mode, table, &m, &k, cfg.memory)?;
    let result = eta_and_snr(&spectrum, p_ch, link, pulse)?;
    Ok(Prediction { spectrum, result })
}
