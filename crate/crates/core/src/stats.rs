//! Symbol-energy statistics of constant-composition shaped streams.
//!
//! Two routes produce a [`CovarianceSet`]:
//!
//! * [`analytic_covariances`] evaluates the closed forms for ideal
//!   constant-composition shaping (uniform over all arrangements of one
//!   amplitude multiset), for each of the 1-D, 2-D and 4-D mappings;
//! * [`empirical_covariances`] estimates the same quantities from any
//!   [`SymbolStream`] by time-averaged sample means, with jackknife
//!   standard errors.
//!
//! Notation: `E` is `E|a|^2` per polarization, `E[u^k]` the amplitude
//! moments of the composition and `Ms = N / H` the correlation length in
//! symbol slots.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shaping::SymbolStream;

/// Amplitude-to-dimension mapping: one block fills `H` real dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(try_from = "u32", into = "u32")]
pub enum Mapping {
    /// One block per real dimension, four blocks side by side.
    OneD,
    /// One block per polarization, filling I and Q.
    TwoD,
    /// One block across all four dimensions.
    FourD,
}

impl Mapping {
    pub const ALL: [Mapping; 3] = [Mapping::OneD, Mapping::TwoD, Mapping::FourD];

    pub fn from_h(h: u32) -> Result<Self> {
        match h {
            1 => Ok(Mapping::OneD),
            2 => Ok(Mapping::TwoD),
            4 => Ok(Mapping::FourD),
            _ => Err(Error::Usage(format!("mapping dimension must be 1, 2 or 4, got {h}"))),
        }
    }

    pub fn h(self) -> usize {
        match self {
            Mapping::OneD => 1,
            Mapping::TwoD => 2,
            Mapping::FourD => 4,
        }
    }

    /// Whether the two polarizations come from independent blocks.
    pub fn independent_polarizations(self) -> bool {
        self != Mapping::FourD
    }
}

impl TryFrom<u32> for Mapping {
    type Error = Error;
    fn try_from(h: u32) -> Result<Self> {
        Mapping::from_h(h)
    }
}

impl From<Mapping> for u32 {
    fn from(m: Mapping) -> u32 {
        m.h() as u32
    }
}

/// Multiset of amplitude levels making up every shaped block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeComposition {
    pub alphabet: Vec<f64>,
    pub counts: Vec<usize>,
}

impl AmplitudeComposition {
    pub fn new(alphabet: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() != counts.len() {
            return Err(Error::param("counts", "need one count per alphabet level"));
        }
        if alphabet.iter().any(|&u| !(u.is_finite() && u > 0.0)) {
            return Err(Error::param("alphabet", "amplitude levels must be positive"));
        }
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::param("counts", "composition is empty"));
        }
        Ok(AmplitudeComposition { alphabet, counts })
    }

    /// `N`
    pub fn blocklength(&self) -> usize {
        self.counts.iter().sum()
    }

    /// The amplitudes of one block in canonical (sorted by level) order.
    pub fn multiset(&self) -> Vec<f64> {
        self.alphabet.iter().zip(&self.counts).flat_map(|(&u, &c)| std::iter::repeat_n(u, c)).collect()
    }

    /// `Ms = N / H`; `N` must be a multiple of four.
    pub fn correlation_length(&self, mapping: Mapping) -> Result<usize> {
        let n = self.blocklength();
        if !n.is_multiple_of(4) {
            return Err(Error::param("blocklength", format!("must be a multiple of 4, got {n}")));
        }
        Ok(n / mapping.h())
    }
}

/// `[E u^2, E u^4, E u^6]`.
pub fn amplitude_moments(comp: &AmplitudeComposition) -> Result<[f64; 3]> {
    let n = comp.blocklength();
    if n == 0 {
        return Err(Error::param("counts", "composition is empty"));
    }
    let mut m = [0.0; 3];
    for (&u, &c) in comp.alphabet.iter().zip(&comp.counts) {
        let u2 = u * u;
        m[0] += u2 * c as f64;
        m[1] += u2 * u2 * c as f64;
        m[2] += u2 * u2 * u2 * c as f64;
    }
    Ok(m.map(|v| v / n as f64))
}

/// Correlations of two distinct positions in one block:
/// `(E[u_i^2 u_j^2], E[u_i^2 u_j^4])`.
pub fn rho_pair(comp: &AmplitudeComposition) -> Result<(f64, f64)> {
    let n = comp.blocklength() as f64;
    if n < 2.0 {
        return Err(Error::Domain("pair correlations need a blocklength of at least 2".into()));
    }
    let [e2, e4, e6] = amplitude_moments(comp)?;
    Ok(((n * e2 * e2 - e4) / (n - 1.0), (n * e2 * e4 - e6) / (n - 1.0)))
}

/// `E[u_i^2 u_j^2 u_k^2]` for three distinct positions in one block.
pub fn rho_triple(comp: &AmplitudeComposition) -> Result<f64> {
    let n = comp.blocklength() as f64;
    if n < 3.0 {
        return Err(Error::Domain("triple correlations need a blocklength of at least 3".into()));
    }
    let [e2, e4, e6] = amplitude_moments(comp)?;
    Ok((n * n * e2 * e2 * e2 - 3.0 * n * e2 * e4 + 2.0 * e6) / ((n - 1.0) * (n - 2.0)))
}

/// Moments of a mapped stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSet {
    /// `[E u^2, E u^4, E u^6]` of the unscaled amplitudes.
    pub amp_moments: [f64; 3],
    /// `[E|a|^2, E|a|^4, E|a|^6]` per polarization.
    pub sym_moments: [f64; 3],
    /// `E|a|^2`, W.
    pub p_ch: f64,
}

impl MomentSet {
    /// Symbol moments for a mapping, before power scaling.
    pub fn new(comp: &AmplitudeComposition, mapping: Mapping) -> Result<Self> {
        let am = amplitude_moments(comp)?;
        let [e2, e4, e6] = am;
        let sym = match mapping {
            Mapping::OneD => [2.0 * e2, 2.0 * e4 + 2.0 * e2 * e2, 2.0 * e6 + 6.0 * e4 * e2],
            Mapping::TwoD | Mapping::FourD => {
                let (r1, r2) = rho_pair(comp)?;
                [2.0 * e2, 2.0 * e4 + 2.0 * r1, 2.0 * e6 + 6.0 * r2]
            }
        };
        Ok(MomentSet { amp_moments: am, sym_moments: sym, p_ch: sym[0] })
    }

    /// Gaussian-signal moments at power `p`.
    pub fn gaussian(p: f64) -> Self {
        MomentSet { amp_moments: [f64::NAN; 3], sym_moments: [p, 2.0 * p * p, 6.0 * p * p * p], p_ch: p }
    }

    /// Moments after scaling the symbols to `E|a|^2 = p_ch`.
    pub fn scaled_to(&self, p_ch: f64) -> Self {
        let s = p_ch / self.sym_moments[0];
        MomentSet {
            amp_moments: self.amp_moments,
            sym_moments: [p_ch, self.sym_moments[1] * s * s, self.sym_moments[2] * s * s * s],
            p_ch,
        }
    }

    pub fn kurtosis(&self) -> f64 {
        self.sym_moments[1] / (self.sym_moments[0] * self.sym_moments[0])
    }
}

/// Same-polarization and cross-polarization correlations of two distinct
/// symbol slots inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntraBlockPair {
    pub rho_s1: f64,
    pub rho_x1: f64,
    pub rho_s2: f64,
    pub rho_x2: f64,
}

pub fn intra_block_pair(comp: &AmplitudeComposition, mapping: Mapping) -> Result<IntraBlockPair> {
    comp.correlation_length(mapping)?;
    let [e2, e4, _] = amplitude_moments(comp)?;
    let (r1, r2) = rho_pair(comp)?;
    let r3 = rho_triple(comp)?;
    Ok(match mapping {
        Mapping::OneD => IntraBlockPair {
            rho_s1: 2.0 * r1 + 2.0 * e2 * e2,
            rho_x1: 4.0 * e2 * e2,
            rho_s2: 2.0 * r2 + 2.0 * e2 * e4 + 4.0 * r1 * e2,
            rho_x2: 4.0 * e2 * e4 + 4.0 * e2 * e2 * e2,
        },
        Mapping::TwoD => IntraBlockPair {
            rho_s1: 4.0 * r1,
            rho_x1: 4.0 * e2 * e2,
            rho_s2: 4.0 * r2 + 4.0 * r3,
            rho_x2: 4.0 * e2 * e4 + 4.0 * r1 * e2,
        },
        Mapping::FourD => IntraBlockPair {
            rho_s1: 4.0 * r1,
            rho_x1: 4.0 * r1,
            rho_s2: 4.0 * r2 + 4.0 * r3,
            rho_x2: 4.0 * r2 + 4.0 * r3,
        },
    })
}

/// Correlations of three distinct symbol slots inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntraBlockTriple {
    pub rho_s3: f64,
    pub rho_x3: f64,
}

pub fn intra_block_triple(comp: &AmplitudeComposition, mapping: Mapping) -> Result<IntraBlockTriple> {
    comp.correlation_length(mapping)?;
    let [e2, _, _] = amplitude_moments(comp)?;
    let (r1, _) = rho_pair(comp)?;
    let r3 = rho_triple(comp)?;
    Ok(match mapping {
        Mapping::OneD => IntraBlockTriple {
            rho_s3: 2.0 * r3 + 6.0 * r1 * e2,
            rho_x3: 4.0 * r1 * e2 + 4.0 * e2 * e2 * e2,
        },
        Mapping::TwoD => IntraBlockTriple { rho_s3: 8.0 * r3, rho_x3: 8.0 * r1 * e2 },
        Mapping::FourD => IntraBlockTriple { rho_s3: 8.0 * r3, rho_x3: 8.0 * r3 },
    })
}

/// Cross-polarization correlations within a single symbol slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SameSlot {
    /// `E[|a^x_w|^2 |a^y_w|^2]`
    pub rho_x1_0: f64,
    /// `E[|a^x_w|^2 |a^y_w|^4]`
    pub rho_x2_0: f64,
    /// `E[|a^x_w|^2 |a^y_w|^2 |a^x_w'|^2]` with `w'` another slot of the block.
    pub rho_x3_0: f64,
}

pub fn same_slot_correlations(comp: &AmplitudeComposition, mapping: Mapping) -> Result<SameSlot> {
    let m = MomentSet::new(comp, mapping)?;
    let [e, e4a, _] = m.sym_moments;
    if mapping.independent_polarizations() {
        let pair = intra_block_pair(comp, mapping)?;
        return Ok(SameSlot { rho_x1_0: e * e, rho_x2_0: e * e4a, rho_x3_0: e * pair.rho_s1 });
    }
    let (r1, r2) = rho_pair(comp)?;
    let r3 = rho_triple(comp)?;
    Ok(SameSlot { rho_x1_0: 4.0 * r1, rho_x2_0: 4.0 * r2 + 4.0 * r3, rho_x3_0: 8.0 * r3 })
}

/// Time-averaged correlations at one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairCorrelations {
    pub r_s1: f64,
    pub r_s2: f64,
    pub r_x1: f64,
    pub r_x2: f64,
}

fn blend(ms: usize, tau: usize, outside: f64, inside: f64) -> f64 {
    if tau < ms {
        (tau as f64 * outside + (ms - tau) as f64 * inside) / ms as f64
    } else {
        outside
    }
}

pub fn time_avg_pair_correlations(comp: &AmplitudeComposition, mapping: Mapping, tau: usize) -> Result<PairCorrelations> {
    if tau == 0 {
        return Err(Error::Usage("time-averaged pair correlations need tau >= 1".into()));
    }
    let ms = comp.correlation_length(mapping)?;
    let [e, e4a, _] = MomentSet::new(comp, mapping)?.sym_moments;
    let p = intra_block_pair(comp, mapping)?;
    Ok(PairCorrelations {
        r_s1: blend(ms, tau, e * e, p.rho_s1),
        r_s2: blend(ms, tau, e * e4a, p.rho_s2),
        r_x1: blend(ms, tau, e * e, p.rho_x1),
        r_x2: blend(ms, tau, e * e4a, p.rho_x2),
    })
}

/// Three slots `w, w + tau, w + tau'` averaged over one block period.
fn triple_blend(ms: usize, tau: usize, tp: usize, e: f64, rho_pair: f64, rho_triple: f64) -> f64 {
    let (ms_f, t, tpf) = (ms as f64, tau as f64, tp as f64);
    let e3 = e * e * e;
    if tp < ms {
        (tpf * e * rho_pair + (ms_f - tpf) * rho_triple) / ms_f
    } else if tau < ms && tp - tau >= ms {
        (t * e3 + (ms_f - t) * e * rho_pair) / ms_f
    } else if tau < ms {
        ((tpf - ms_f) * e3 + (2.0 * ms_f - tpf) * e * rho_pair) / ms_f
    } else if tp - tau < ms {
        ((tpf - t) * e3 + (ms_f - tpf + t) * e * rho_pair) / ms_f
    } else {
        e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripleCorrelations {
    pub r_s3: f64,
    pub r_x3: f64,
}

pub fn time_avg_triple_correlations(
    comp: &AmplitudeComposition,
    mapping: Mapping,
    tau: usize,
    tau_prime: usize,
) -> Result<TripleCorrelations> {
    if !(0 < tau && tau < tau_prime) {
        return Err(Error::Usage(format!("triple correlations need 0 < tau < tau', got ({tau}, {tau_prime})")));
    }
    let ms = comp.correlation_length(mapping)?;
    let e = MomentSet::new(comp, mapping)?.sym_moments[0];
    let p = intra_block_pair(comp, mapping)?;
    let t = intra_block_triple(comp, mapping)?;
    let r_s3 = triple_blend(ms, tau, tau_prime, e, p.rho_s1, t.rho_s3);
    let r_x3 = if mapping.independent_polarizations() {
        // outer slots share a polarization, the middle one is independent
        e * blend(ms, tau_prime, e * e, p.rho_s1)
    } else {
        triple_blend(ms, tau, tau_prime, e, p.rho_x1, t.rho_x3)
    };
    Ok(TripleCorrelations { r_s3, r_x3 })
}

/// `E[|a^p_w|^2 |a^p'_w|^2 |a^p_{w+tau}|^2]` averaged over one period.
pub fn time_avg_x3_zero(comp: &AmplitudeComposition, mapping: Mapping, tau: usize) -> Result<f64> {
    if tau == 0 {
        return Err(Error::Usage("tau must be >= 1".into()));
    }
    let ms = comp.correlation_length(mapping)?;
    let e = MomentSet::new(comp, mapping)?.sym_moments[0];
    let s = same_slot_correlations(comp, mapping)?;
    Ok(blend(ms, tau, e * s.rho_x1_0, s.rho_x3_0))
}

/// Values on `1 <= tau < tau' <= size`, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TriangularArray {
    pub size: usize,
    pub data: Vec<f64>,
}

impl TriangularArray {
    pub fn zeros(size: usize) -> Self {
        TriangularArray { size, data: vec![0.0; size * size.saturating_sub(1) / 2] }
    }

    fn index(&self, tau: usize, tau_prime: usize) -> Option<usize> {
        if tau == 0 || tau >= tau_prime || tau_prime > self.size {
            return None;
        }
        // rows tau = 1..tau-1 hold (size - t) entries each
        let before = (tau - 1) * self.size - (tau - 1) * tau / 2;
        Some(before + (tau_prime - tau - 1))
    }

    pub fn get(&self, tau: usize, tau_prime: usize) -> Option<f64> {
        self.index(tau, tau_prime).map(|i| self.data[i])
    }

    pub fn set(&mut self, tau: usize, tau_prime: usize, v: f64) {
        let i = self.index(tau, tau_prime).expect("index outside triangular array");
        self.data[i] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (1..self.size).flat_map(move |t| (t + 1..=self.size).map(move |tp| (t, tp, self.get(t, tp).unwrap())))
    }
}

/// Time-averaged energy correlations (`R`) or covariances (`K`). Pair
/// arrays are indexed by `tau - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyStatistics {
    pub mapping: Mapping,
    /// `Ms`
    pub corr_length: usize,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: TriangularArray,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: TriangularArray,
    /// The `(0, tau)` cross-polarization triple, indexed by `tau - 1`.
    pub x3_zero: Vec<f64>,
    pub x1_0: f64,
    pub x2_0: f64,
}

pub type CorrelationSet = EnergyStatistics;

/// Covariances consumed by the PSD model.
pub type CovarianceSet = EnergyStatistics;

fn lookup(v: &[f64], tau: usize) -> f64 {
    if tau == 0 {
        return 0.0;
    }
    v.get(tau - 1).copied().unwrap_or(0.0)
}

impl EnergyStatistics {
    pub fn zeros(mapping: Mapping, corr_length: usize, max_tau: usize, max_tau_prime: usize) -> Self {
        EnergyStatistics {
            mapping,
            corr_length,
            s1: vec![0.0; max_tau],
            s2: vec![0.0; max_tau],
            s3: TriangularArray::zeros(max_tau_prime),
            x1: vec![0.0; max_tau],
            x2: vec![0.0; max_tau],
            x3: TriangularArray::zeros(max_tau_prime),
            x3_zero: vec![0.0; max_tau],
            x1_0: 0.0,
            x2_0: 0.0,
        }
    }

    pub fn max_tau(&self) -> usize {
        self.s1.len()
    }

    pub fn max_tau_prime(&self) -> usize {
        self.s3.size
    }

    // Accessors return zero outside the stored extent.
    pub fn k_s1(&self, tau: usize) -> f64 {
        lookup(&self.s1, tau)
    }
    pub fn k_s2(&self, tau: usize) -> f64 {
        lookup(&self.s2, tau)
    }
    pub fn k_x1(&self, tau: usize) -> f64 {
        lookup(&self.x1, tau)
    }
    pub fn k_x2(&self, tau: usize) -> f64 {
        lookup(&self.x2, tau)
    }
    pub fn k_x3_zero(&self, tau: usize) -> f64 {
        lookup(&self.x3_zero, tau)
    }
    pub fn k_s3(&self, tau: usize, tau_prime: usize) -> f64 {
        self.s3.get(tau, tau_prime).unwrap_or(0.0)
    }
    pub fn k_x3(&self, tau: usize, tau_prime: usize) -> f64 {
        self.x3.get(tau, tau_prime).unwrap_or(0.0)
    }

    /// Every stored value, in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.s1
            .iter()
            .chain(&self.s2)
            .chain(&self.x1)
            .chain(&self.x2)
            .chain(&self.x3_zero)
            .chain(&self.s3.data)
            .chain(&self.x3.data)
            .chain([&self.x1_0, &self.x2_0])
            .copied()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    /// Whether any cross-polarization entry is nonzero.
    pub fn has_cross_polarization(&self, tol: f64) -> bool {
        self.x1_0.abs() > tol || self.x2_0.abs() > tol || self.x1.iter().chain(&self.x2).any(|v| v.abs() > tol)
    }

    /// Rescale as if every symbol were multiplied by `sqrt(s)`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        let (s2, s3) = (s * s, s * s * s);
        out.s1.iter_mut().chain(&mut out.x1).for_each(|v| *v *= s2);
        out.s2.iter_mut().chain(&mut out.x2).chain(&mut out.x3_zero).for_each(|v| *v *= s3);
        out.s3.data.iter_mut().chain(&mut out.x3.data).for_each(|v| *v *= s3);
        out.x1_0 *= s2;
        out.x2_0 *= s3;
        out
    }

    /// CSV rows `kind,tau,tau_prime,value[,stderr]`.
    pub fn write_csv<W: Write>(&self, out: W, stderr: Option<&EnergyStatistics>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Data(e.to_string());
        let mut header = vec!["kind", "tau", "tau_prime", "value"];
        if stderr.is_some() {
            header.push("stderr");
        }
        w.write_record(&header).map_err(io)?;
        let mut row = |kind: &str, t: usize, tp: Option<usize>, v: f64, e: Option<f64>| -> Result<()> {
            let mut r = vec![kind.to_string(), t.to_string(), tp.map(|x| x.to_string()).unwrap_or_default()];
            r.push(format!("{v:e}"));
            if let Some(e) = e {
                r.push(format!("{e:e}"));
            }
            w.write_record(&r).map_err(io)
        };
        let err = |f: &dyn Fn(&EnergyStatistics) -> f64| stderr.map(f);
        row("X1", 0, None, self.x1_0, err(&|s| s.x1_0))?;
        row("X2", 0, None, self.x2_0, err(&|s| s.x2_0))?;
        for (kind, v, e) in [
            ("S1", &self.s1, stderr.map(|s| &s.s1)),
            ("S2", &self.s2, stderr.map(|s| &s.s2)),
            ("X1", &self.x1, stderr.map(|s| &s.x1)),
            ("X2", &self.x2, stderr.map(|s| &s.x2)),
        ] {
            for (i, &x) in v.iter().enumerate() {
                row(kind, i + 1, None, x, e.map(|e| e[i]))?;
            }
        }
        for (i, &x) in self.x3_zero.iter().enumerate() {
            row("X3", 0, Some(i + 1), x, stderr.map(|s| s.x3_zero[i]))?;
        }
        for (kind, v, e) in [("S3", &self.s3, stderr.map(|s| &s.s3)), ("X3", &self.x3, stderr.map(|s| &s.x3))] {
            for (t, tp, x) in v.iter() {
                row(kind, t, Some(tp), x, e.and_then(|e| e.get(t, tp)))?;
            }
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))?;
        Ok(())
    }
}

/// Time-averaged correlations on `tau <= max_tau`, `tau' <= max_tau_prime`.
pub fn analytic_correlations(
    comp: &AmplitudeComposition,
    mapping: Mapping,
    max_tau: usize,
    max_tau_prime: usize,
) -> Result<CorrelationSet> {
    let ms = comp.correlation_length(mapping)?;
    let mut r = EnergyStatistics::zeros(mapping, ms, max_tau, max_tau_prime);
    for tau in 1..=max_tau {
        let p = time_avg_pair_correlations(comp, mapping, tau)?;
        r.s1[tau - 1] = p.r_s1;
        r.s2[tau - 1] = p.r_s2;
        r.x1[tau - 1] = p.r_x1;
        r.x2[tau - 1] = p.r_x2;
        r.x3_zero[tau - 1] = time_avg_x3_zero(comp, mapping, tau)?;
    }
    for tau in 1..max_tau_prime {
        for tp in tau + 1..=max_tau_prime {
            let t = time_avg_triple_correlations(comp, mapping, tau, tp)?;
            r.s3.set(tau, tp, t.r_s3);
            r.x3.set(tau, tp, t.r_x3);
        }
    }
    let s = same_slot_correlations(comp, mapping)?;
    r.x1_0 = s.rho_x1_0;
    r.x2_0 = s.rho_x2_0;
    Ok(r)
}

/// Subtract the independent-symbol products from each correlation.
pub fn covariances_from_correlations(moments: &MomentSet, corr: &CorrelationSet) -> CovarianceSet {
    let [e, e4a, _] = moments.sym_moments;
    let (ee, e4e, e3) = (e * e, e * e4a, e * e * e);
    let sub = |v: &[f64], c: f64| v.iter().map(|x| x - c).collect::<Vec<_>>();
    let sub_t = |t: &TriangularArray| TriangularArray { size: t.size, data: t.data.iter().map(|x| x - e3).collect() };
    EnergyStatistics {
        mapping: corr.mapping,
        corr_length: corr.corr_length,
        s1: sub(&corr.s1, ee),
        s2: sub(&corr.s2, e4e),
        s3: sub_t(&corr.s3),
        x1: sub(&corr.x1, ee),
        x2: sub(&corr.x2, e4e),
        x3: sub_t(&corr.x3),
        x3_zero: sub(&corr.x3_zero, e3),
        x1_0: corr.x1_0 - ee,
        x2_0: corr.x2_0 - e4e,
    }
}

/// Covariances of the unscaled amplitude stream. Use
/// [`EnergyStatistics::scaled`] to move to a launch power.
pub fn analytic_covariances(
    comp: &AmplitudeComposition,
    mapping: Mapping,
    max_tau: usize,
    max_tau_prime: usize,
) -> Result<CovarianceSet> {
    let m = MomentSet::new(comp, mapping)?;
    let r = analytic_correlations(comp, mapping, max_tau, max_tau_prime)?;
    let mut k = covariances_from_correlations(&m, &r);
    if mapping.independent_polarizations() {
        // these are products of independent factors; drop the rounding residue
        k.x1.iter_mut().chain(&mut k.x2).for_each(|v| *v = 0.0);
        k.x1_0 = 0.0;
        k.x2_0 = 0.0;
    }
    Ok(k)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Estimates with jackknife standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedCovariances {
    pub value: CovarianceSet,
    pub stderr: CovarianceSet,
    /// Jackknife groups (contiguous runs of whole periods).
    pub groups: usize,
    pub samples_per_entry: usize,
}

const MAX_JACKKNIFE_GROUPS: usize = 100;

/// Layout of the per-group sums.
struct SumLayout {
    max_tau: usize,
    tri: usize,
}

impl SumLayout {
    // [e, e2 (|a|^4), s1.., s2.., x1.., x2.., x3_zero.., s3.., x3.., x1_0, x2_0]
    fn len(&self) -> usize {
        2 + 5 * self.max_tau + 2 * self.tri + 2
    }
}

/// Sample estimate of the time-averaged covariances of `stream`, assuming
/// slot 0 starts a block and `period_ms` slots make one period.
pub fn empirical_covariances(
    stream: &SymbolStream,
    period_ms: usize,
    max_tau: usize,
    max_tau_prime: usize,
) -> Result<EstimatedCovariances> {
    let ex: Vec<f64> = stream.x_pol.iter().map(|a| a.norm_sqr()).collect();
    let ey: Vec<f64> = stream.y_pol.iter().map(|a| a.norm_sqr()).collect();
    empirical_covariances_from_energies(&ex, &ey, stream.mapping, period_ms, max_tau, max_tau_prime)
}

/// As [`empirical_covariances`], from per-slot energies `|a^x|^2`, `|a^y|^2`.
pub fn empirical_covariances_from_energies(
    ex: &[f64],
    ey: &[f64],
    mapping: Mapping,
    period_ms: usize,
    max_tau: usize,
    max_tau_prime: usize,
) -> Result<EstimatedCovariances> {
    if period_ms == 0 {
        return Err(Error::param("period_ms", "must be positive"));
    }
    if ex.len() != ey.len() {
        return Err(Error::Data("polarization sequences differ in length".into()));
    }
    let lag = max_tau.max(max_tau_prime);
    let len = ex.len();
    if len < period_ms + lag {
        return Err(Error::Data(format!(
            "stream of {len} slots is shorter than one period ({period_ms}) plus the largest delay ({lag})"
        )));
    }
    let periods = (len - lag) / period_ms;
    let groups = periods.min(MAX_JACKKNIFE_GROUPS);
    if groups < 2 {
        return Err(Error::Data("need at least two whole periods for error estimates".into()));
    }
    let layout = SumLayout { max_tau, tri: max_tau_prime * max_tau_prime.saturating_sub(1) / 2 };
    let nstat = layout.len();
    let triples: Vec<(usize, usize)> =
        (1..max_tau_prime).flat_map(|t| (t + 1..=max_tau_prime).map(move |tp| (t, tp))).collect();

    // group g covers periods [g*periods/groups, (g+1)*periods/groups)
    let mut sums = vec![vec![Compensated::default(); nstat]; groups];
    let mut counts = vec![0usize; groups];
    let mut row = vec![0.0; nstat];
    for (g, acc) in sums.iter_mut().enumerate() {
        let (p0, p1) = (g * periods / groups, (g + 1) * periods / groups);
        for w in p0 * period_ms..p1 * period_ms {
            let (x0, y0) = (ex[w], ey[w]);
            row[0] = 0.5 * (x0 + y0);
            row[1] = 0.5 * (x0 * x0 + y0 * y0);
            let mut k = 2;
            for tau in 1..=max_tau {
                let (xt, yt) = (ex[w + tau], ey[w + tau]);
                row[k] = 0.5 * (x0 * xt + y0 * yt);
                row[k + max_tau] = 0.5 * (x0 * xt * xt + y0 * yt * yt);
                row[k + 2 * max_tau] = 0.5 * (x0 * yt + y0 * xt);
                row[k + 3 * max_tau] = 0.5 * (x0 * yt * yt + y0 * xt * xt);
                row[k + 4 * max_tau] = 0.5 * x0 * y0 * (xt + yt);
                k += 1;
            }
            k += 4 * max_tau;
            for &(t, tp) in &triples {
                let (xt, yt, xp, yp) = (ex[w + t], ey[w + t], ex[w + tp], ey[w + tp]);
                row[k] = 0.5 * (x0 * xt * xp + y0 * yt * yp);
                row[k + layout.tri] = 0.5 * (x0 * yt * xp + y0 * xt * yp);
                k += 1;
            }
            k += layout.tri;
            row[k] = x0 * y0;
            row[k + 1] = 0.5 * (x0 * y0 * y0 + y0 * x0 * x0);
            for (a, &v) in acc.iter_mut().zip(&row) {
                a.add(v);
            }
        }
        counts[g] = (p1 - p0) * period_ms;
    }

    let group_sums: Vec<Vec<f64>> = sums.iter().map(|g| g.iter().map(Compensated::value).collect()).collect();
    let mut total = vec![Compensated::default(); nstat];
    for g in &group_sums {
        for (t, &v) in total.iter_mut().zip(g) {
            t.add(v);
        }
    }
    let total: Vec<f64> = total.iter().map(Compensated::value).collect();
    let n_total: usize = counts.iter().sum();

    let finish = |sum: &[f64], n: usize| -> CovarianceSet {
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let (e, e4a) = (mean[0], mean[1]);
        let (ee, e4e, e3) = (e * e, e * e4a, e * e * e);
        let mut c = EnergyStatistics::zeros(mapping, period_ms, max_tau, max_tau_prime);
        let mut k = 2;
        for i in 0..max_tau {
            c.s1[i] = mean[k] - ee;
            c.s2[i] = mean[k + max_tau] - e4e;
            c.x1[i] = mean[k + 2 * max_tau] - ee;
            c.x2[i] = mean[k + 3 * max_tau] - e4e;
            c.x3_zero[i] = mean[k + 4 * max_tau] - e3;
            k += 1;
        }
        k += 4 * max_tau;
        for (i, _) in triples.iter().enumerate() {
            c.s3.data[i] = mean[k] - e3;
            c.x3.data[i] = mean[k + layout.tri] - e3;
            k += 1;
        }
        k += layout.tri;
        c.x1_0 = mean[k] - ee;
        c.x2_0 = mean[k + 1] - e4e;
        c
    };

    let value = finish(&total, n_total);
    let leave_out: Vec<CovarianceSet> = group_sums
        .iter()
        .zip(&counts)
        .map(|(g, &n)| {
            let s: Vec<f64> = total.iter().zip(g).map(|(t, x)| t - x).collect();
            finish(&s, n_total - n)
        })
        .collect();
    let gf = groups as f64;
    let stderr_of = |get: &dyn Fn(&CovarianceSet) -> f64| -> f64 {
        let m = leave_out.iter().map(get).sum::<f64>() / gf;
        let ss: f64 = leave_out.iter().map(|c| (get(c) - m).powi(2)).sum();
        ((gf - 1.0) / gf * ss).sqrt()
    };
    let mut stderr = EnergyStatistics::zeros(mapping, period_ms, max_tau, max_tau_prime);
    for i in 0..max_tau {
        stderr.s1[i] = stderr_of(&|c| c.s1[i]);
        stderr.s2[i] = stderr_of(&|c| c.s2[i]);
        stderr.x1[i] = stderr_of(&|c| c.x1[i]);
        stderr.x2[i] = stderr_of(&|c| c.x2[i]);
        stderr.x3_zero[i] = stderr_of(&|c| c.x3_zero[i]);
    }
    for i in 0..layout.tri {
        stderr.s3.data[i] = stderr_of(&|c| c.s3.data[i]);
        stderr.x3.data[i] = stderr_of(&|c| c.x3.data[i]);
    }
    stderr.x1_0 = stderr_of(&|c| c.x1_0);
    stderr.x2_0 = stderr_of(&|c| c.x2_0);
    Ok(EstimatedCovariances { value, stderr, groups, samples_per_entry: n_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn comp(alphabet: &[f64], counts: &[usize]) -> AmplitudeComposition {
        AmplitudeComposition::new(alphabet.to_vec(), counts.to_vec()).unwrap()
    }

    #[test]
    fn moments_of_small_compositions() {
        let c = comp(&[1.0, 3.0], &[1, 1]);
        assert_eq!(amplitude_moments(&c).unwrap(), [5.0, 41.0, 365.0]);
        let (r1, r2) = rho_pair(&c).unwrap();
        assert_relative_eq!(r1, 9.0, max_relative = 1e-15);
        assert_relative_eq!(r2, 45.0, max_relative = 1e-15);
        assert!(rho_triple(&c).is_err());
        let c3 = comp(&[1.0, 3.0], &[2, 1]);
        assert_relative_eq!(rho_triple(&c3).unwrap(), 9.0, max_relative = 1e-14);
        assert!(matches!(rho_pair(&comp(&[2.0], &[1])), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_alphabet_has_no_covariance() {
        let c = comp(&[3.0], &[8]);
        let (r1, _) = rho_pair(&c).unwrap();
        assert_relative_eq!(r1, 81.0, max_relative = 1e-15);
        assert_relative_eq!(rho_triple(&c).unwrap(), 729.0, max_relative = 1e-14);
        for m in Mapping::ALL {
            let k = analytic_covariances(&c, m, 12, 12).unwrap();
            assert!(k.values().all(|v| v.abs() < 1e-9), "{m:?}");
        }
    }

    #[test]
    fn mapping_parsing() {
        assert_eq!(Mapping::from_h(4).unwrap(), Mapping::FourD);
        assert!(matches!(Mapping::from_h(3), Err(Error::Usage(_))));
        let c = comp(&[1.0, 3.0], &[3, 3]);
        assert!(intra_block_pair(&c, Mapping::TwoD).is_err());
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[4, 3, 2, 1]);
        assert!(c.correlation_length(Mapping::OneD).is_err());
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[4, 2, 1, 1]);
        assert_eq!(c.correlation_length(Mapping::OneD).unwrap(), 8);
        assert_eq!(c.correlation_length(Mapping::TwoD).unwrap(), 4);
        assert_eq!(c.correlation_length(Mapping::FourD).unwrap(), 2);
    }

    #[test]
    fn intra_block_cases() {
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[16, 12, 8, 4]);
        let [e2, ..] = amplitude_moments(&c).unwrap();
        let (r1, _) = rho_pair(&c).unwrap();
        let p4 = intra_block_pair(&c, Mapping::FourD).unwrap();
        assert_eq!(p4.rho_s1, 4.0 * r1);
        assert_eq!(p4.rho_x1, 4.0 * r1);
        let p1 = intra_block_pair(&c, Mapping::OneD).unwrap();
        assert_eq!(p1.rho_x1, 4.0 * e2 * e2);
        let t2 = intra_block_triple(&c, Mapping::TwoD).unwrap();
        assert_eq!(t2.rho_x3, 8.0 * r1 * e2);
    }

    #[test]
    fn time_average_boundaries() {
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[16, 12, 8, 4]);
        let m = MomentSet::new(&c, Mapping::FourD).unwrap();
        let e = m.sym_moments[0];
        let ms = 10;
        let p = time_avg_pair_correlations(&c, Mapping::FourD, ms).unwrap();
        assert_eq!(p.r_s1, e * e);
        let rho = intra_block_pair(&c, Mapping::FourD).unwrap().rho_s1;
        let p1 = time_avg_pair_correlations(&c, Mapping::FourD, 1).unwrap();
        assert_relative_eq!(p1.r_s1, (e * e + 9.0 * rho) / 10.0, max_relative = 1e-15);
        let t = time_avg_triple_correlations(&c, Mapping::FourD, 10, 20).unwrap();
        assert_eq!(t.r_s3, e * e * e);
        let r3 = intra_block_triple(&c, Mapping::FourD).unwrap().rho_s3;
        let t = time_avg_triple_correlations(&c, Mapping::FourD, 2, 7).unwrap();
        assert_relative_eq!(t.r_s3, (7.0 * e * rho + 3.0 * r3) / 10.0, max_relative = 1e-15);
        assert!(time_avg_triple_correlations(&c, Mapping::FourD, 3, 3).is_err());
        assert!(time_avg_pair_correlations(&c, Mapping::FourD, 0).is_err());
    }

    #[test]
    fn ccdm_covariances_are_non_positive_and_vanish_beyond_the_block() {
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[16, 12, 8, 4]);
        for m in Mapping::ALL {
            let ms = c.correlation_length(m).unwrap();
            let k = analytic_covariances(&c, m, 2 * ms + 3, 2 * ms + 3).unwrap();
            // magnitudes reach E^3 ~ 1e5 here; allow rounding at that scale
            let worst = k.values().fold(f64::MIN, f64::max);
            assert!(worst <= 1e-9, "{m:?}: {worst}");
            for tau in ms..=2 * ms + 3 {
                assert_eq!(k.k_s1(tau), 0.0);
                assert_eq!(k.k_s2(tau), 0.0);
                assert_eq!(k.k_x1(tau), 0.0);
                assert_eq!(k.k_x2(tau), 0.0);
                for tp in tau + ms..=2 * ms + 3 {
                    assert_eq!(k.k_s3(tau, tp), 0.0);
                    assert_eq!(k.k_x3(tau, tp), 0.0);
                }
            }
            if m.independent_polarizations() {
                assert!(!k.has_cross_polarization(0.0));
                for tau in 1..ms {
                    assert_relative_eq!(
                        k.k_x3_zero(tau),
                        MomentSet::new(&c, m).unwrap().p_ch * k.k_s1(tau),
                        max_relative = 1e-12
                    );
                }
            } else {
                assert!(k.x1_0 < 0.0 && k.x2_0 < 0.0);
            }
        }
    }

    #[test]
    fn four_d_cross_and_self_coincide() {
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[16, 12, 8, 4]);
        let k = analytic_covariances(&c, Mapping::FourD, 12, 12).unwrap();
        assert_eq!(k.s1, k.x1);
        assert_eq!(k.s3, k.x3);
    }

    #[test]
    fn triangular_indexing_round_trips() {
        let mut t = TriangularArray::zeros(6);
        let mut v = 0.0;
        for tau in 1..6 {
            for tp in tau + 1..=6 {
                t.set(tau, tp, v);
                v += 1.0;
            }
        }
        assert_eq!(t.data, (0..15).map(|x| x as f64).collect::<Vec<_>>());
        assert_eq!(t.get(3, 3), None);
        assert_eq!(t.get(0, 2), None);
        assert_eq!(t.get(2, 7), None);
        assert_eq!(t.iter().count(), 15);
    }

    #[test]
    fn scaling_moves_to_the_target_power() {
        let c = comp(&[1.0, 3.0, 5.0, 7.0], &[4, 3, 2, 3]);
        let m = MomentSet::new(&c, Mapping::FourD).unwrap();
        let k = analytic_covariances(&c, Mapping::FourD, 5, 5).unwrap();
        let p = 1e-3;
        let s = p / m.p_ch;
        let ms = m.scaled_to(p);
        assert_relative_eq!(ms.kurtosis(), m.kurtosis(), max_relative = 1e-13);
        let ks = k.scaled(s);
        assert_relative_eq!(ks.k_s3(1, 2), k.k_s3(1, 2) * s * s * s, max_relative = 1e-14);
        assert_relative_eq!(ks.x1_0, k.x1_0 * s * s, max_relative = 1e-14);
    }

    #[test]
    fn constant_energy_stream_has_zero_covariance() {
        let ex = vec![2.0; 400];
        let ey = vec![2.0; 400];
        let est = empirical_covariances_from_energies(&ex, &ey, Mapping::FourD, 4, 5, 5).unwrap();
        assert!(est.value.values().all(|v| v.abs() < 1e-12));
        assert!(est.stderr.values().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            empirical_covariances_from_energies(&ex[..6], &ey[..6], Mapping::FourD, 4, 5, 5),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_export_has_every_kind() {
        let c = comp(&[1.0, 3.0], &[2, 2]);
        let k = analytic_covariances(&c, Mapping::TwoD, 3, 3).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf, None).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("kind,tau,tau_prime,value\n"));
        for kind in ["S1", "S2", "S3", "X1", "X2", "X3"] {
            assert!(s.lines().any(|l| l.starts_with(&format!("{kind},"))), "{kind}");
        }
    }

    proptest! {
        #[test]
        fn amplitude_moments_scale(scale in 0.1f64..10.0, a in 1usize..6, b in 0usize..6) {
            let c = comp(&[1.0, 3.0], &[a, b]);
            let s = comp(&[scale, 3.0 * scale], &[a, b]);
            let m = amplitude_moments(&c).unwrap();
            let ms = amplitude_moments(&s).unwrap();
            for (k, (x, y)) in m.iter().zip(ms).enumerate() {
                let p = scale.powi(2 * (k as i32 + 1));
                prop_assert!((y - x * p).abs() <= 1e-12 * y.abs());
            }
        }

        #[test]
        fn correlations_below_independent_products(counts in proptest::collection::vec(0usize..5, 4)) {
            prop_assume!(counts.iter().sum::<usize>() >= 3);
            prop_assume!(counts.iter().filter(|&&c| c > 0).count() >= 2);
            let c = comp(&[1.0, 3.0, 5.0, 7.0], &counts);
            let [e2, e4, _] = amplitude_moments(&c).unwrap();
            let (r1, r2) = rho_pair(&c).unwrap();
            prop_assert!(r1 < e2 * e2);
            prop_assert!(r2 < e2 * e4);
            prop_assert!(rho_triple(&c).unwrap() < e2 * e2 * e2);
            prop_assert!(e2 * e2 <= e4);
        }
    }
}
