//! Oscillatory double-integral kernels over the band `B2 = [-B, B]^2`.
//!
//! All kernels at one target frequency `f` are built from three complex
//! tables tabulated once on a tensor-product trapezoidal mesh (see
//! [`KernelGrid`]):
//!
//! * `upsilon[i][j] = S(f1) S(f1+f2-f) S(f2) mu(f1, f2, f)`
//! * `inner[i][j]   = S(f2) S(f1+f2-f) mu(f1, f2, f)` (the inner integrand of the nested kernels)
//! * `swapped[i][j] = S(f2) S(f1-f2+f) mu(f1-f2+f, f2, f)`
//!
//! Every delay-dependent weight in the kernels is a product of a phase
//! in `f1` and a phase in `f2`, so each `|double integral|^2` term reduces to
//! a lookup into
//!
//! ```text
//! A(k1, k2) = sum_ij w_i w_j upsilon_ij exp(-j 2 pi (k1 f1_i + k2 f2_j) / Rs)
//! ```
//!
//! evaluated through per-row partial transforms that are cached on the grid.
//! The arithmetic is the same weighted trapezoidal sum as applying the
//! cos/sin weights node by node.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkmodel::{mu_of_product, Link, PulseShape};

const C16_27: f64 = 16.0 / 27.0;
const C16_81: f64 = 16.0 / 81.0;
const C32_81: f64 = 32.0 / 81.0;

/// Mesh used for every `B2` integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Uniform nodes per axis before refinement. Odd, so that `f = 0` and
    /// the axis midlines are nodes.
    pub points_per_axis: usize,
    /// Half-width of `B1`. Defaults to `Rs / 2`.
    #[serde(default)]
    pub integration_bound_hz: Option<f64>,
    /// Subdivide the cells within two mesh steps of `f` by this factor.
    #[serde(default)]
    pub singular_refinement: Option<usize>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { points_per_axis: 401, integration_bound_hz: None, singular_refinement: None }
    }
}

impl QuadratureConfig {
    pub fn with_points(points_per_axis: usize) -> Self {
        QuadratureConfig { points_per_axis, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_axis < 3 || self.points_per_axis.is_multiple_of(2) {
            return Err(Error::param(
                "points_per_axis",
                format!("must be odd and >= 3, got {}", self.points_per_axis),
            ));
        }
        if let Some(b) = self.integration_bound_hz {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::param("integration_bound_hz", "must be positive"));
            }
        }
        if let Some(r) = self.singular_refinement {
            if r < 2 {
                return Err(Error::param("singular_refinement", "factor must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn bound(&self, pulse: &PulseShape) -> f64 {
        self.integration_bound_hz.unwrap_or(0.5 * pulse.symbol_rate_hz)
    }

    /// Axis nodes and composite trapezoidal weights.
    pub fn axis(&self, pulse: &PulseShape, f: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let b = self.bound(pulse);
        let n = self.points_per_axis;
        let h = 2.0 * b / (n - 1) as f64;
        let mut nodes: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            // midpoint stays exactly 0.0
            let x = (i as f64 - ((n - 1) / 2) as f64) * h;
            if let (Some(r), true) = (self.singular_refinement, i > 0) {
                let prev = nodes[nodes.len() - 1];
                if (prev - f).abs() <= 2.0 * h + 1e-9 * h || (x - f).abs() <= 2.0 * h + 1e-9 * h {
                    for k in 1..r {
                        nodes.push(prev + (x - prev) * k as f64 / r as f64);
                    }
                }
            }
            nodes.push(x);
        }
        Ok((nodes.clone(), trapezoid_weights(&nodes)))
    }
}

/// Composite trapezoidal weights for (possibly non-uniform) sorted nodes.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = nodes[i + 1] - nodes[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// The twelve kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    Phi1,
    Phi2,
    Phi3,
    Phi4,
    Chi1,
    Chi2,
    Chi3,
    Xi1,
    Xi2,
    Psi1,
    Psi2,
    Psi3,
}

impl KernelId {
    pub const ALL: [KernelId; 12] = [
        KernelId::Phi1,
        KernelId::Phi2,
        KernelId::Phi3,
        KernelId::Phi4,
        KernelId::Chi1,
        KernelId::Chi2,
        KernelId::Chi3,
        KernelId::Xi1,
        KernelId::Xi2,
        KernelId::Psi1,
        KernelId::Psi2,
        KernelId::Psi3,
    ];
    pub const SINGLE_DELAY: [KernelId; 6] =
        [KernelId::Chi1, KernelId::Chi2, KernelId::Chi3, KernelId::Xi1, KernelId::Psi1, KernelId::Psi2];
    pub const DOUBLE_DELAY: [KernelId; 2] = [KernelId::Xi2, KernelId::Psi3];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelId::Phi1 => "phi1",
            KernelId::Phi2 => "phi2",
            KernelId::Phi3 => "phi3",
            KernelId::Phi4 => "phi4",
            KernelId::Chi1 => "chi1",
            KernelId::Chi2 => "chi2",
            KernelId::Chi3 => "chi3",
            KernelId::Xi1 => "xi1",
            KernelId::Xi2 => "xi2",
            KernelId::Psi1 => "psi1",
            KernelId::Psi2 => "psi2",
            KernelId::Psi3 => "psi3",
        }
    }

    /// Number of delay arguments (0, 1 or 2).
    pub fn delay_count(self) -> usize {
        match self {
            KernelId::Phi1 | KernelId::Phi2 | KernelId::Phi3 | KernelId::Phi4 => 0,
            KernelId::Xi2 | KernelId::Psi3 => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KernelId::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown kernel id `{s}`")))
    }
}

/// A kernel evaluated at one frequency (and delay, where applicable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub kernel_id: KernelId,
    pub tau: Option<i64>,
    pub tau_prime: Option<i64>,
    pub f: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Table {
    Upsilon,
    Inner,
    Swapped,
}

/// Sizes reported by [`KernelGrid::diagnostics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDiagnostics {
    pub nodes_per_axis: usize,
    /// Complex values in the beating table, `nodes_per_axis^2`.
    pub upsilon_values: usize,
    /// All tabulated complex values (three tables).
    pub tabulated_values: usize,
    /// Cached partial transforms (complex values).
    pub cached_transform_values: usize,
    pub bytes: usize,
}

/// Beating tables at one target frequency, shared by all kernels there.
pub struct KernelGrid {
    pub f_target: f64,
    symbol_rate: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    s_axis: Vec<f64>,
    upsilon: Vec<Complex64>,
    inner: Vec<Complex64>,
    swapped: Vec<Complex64>,
    transforms: Mutex<HashMap<(Table, i64), Arc<Vec<Complex64>>>>,
    twiddles: Mutex<HashMap<i64, Arc<Vec<Complex64>>>>,
}

impl fmt::Debug for KernelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelGrid")
            .field("f_target", &self.f_target)
            .field("nodes_per_axis", &self.nodes.len())
            .finish()
    }
}

/// Tabulate the beating values at `f`.
pub fn build_kernel_grid(f: f64, pulse: &PulseShape, link: &Link, quad: &QuadratureConfig) -> Result<KernelGrid> {
    KernelGrid::build(f, pulse, link, quad)
}

impl KernelGrid {
    pub fn build(f: f64, pulse: &PulseShape, link: &Link, quad: &QuadratureConfig) -> Result<Self> {
        if !f.is_finite() {
            return Err(Error::param("f", "target frequency must be finite"));
        }
        let (nodes, weights) = quad.axis(pulse, f)?;
        let n = nodes.len();
        let s_axis: Vec<f64> = nodes.iter().map(|&x| pulse.spectrum(x)).collect();
        let mut upsilon = vec![Complex64::new(0.0, 0.0); n * n];
        let mut inner = vec![Complex64::new(0.0, 0.0); n * n];
        let mut swapped = vec![Complex64::new(0.0, 0.0); n * n];
        upsilon
            .par_chunks_mut(n)
            .zip(inner.par_chunks_mut(n))
            .zip(swapped.par_chunks_mut(n))
            .enumerate()
            .for_each(|(i, ((up, inn), sw))| {
                let f1 = nodes[i];
                for j in 0..n {
                    let f2 = nodes[j];
                    let s3 = pulse.spectrum(f1 + f2 - f);
                    if s3 != 0.0 && s_axis[j] != 0.0 {
                        let m = mu_of_product((f1 - f) * (f2 - f), link);
                        inn[j] = m * (s_axis[j] * s3);
                        up[j] = inn[j] * s_axis[i];
                    }
                    let s3s = pulse.spectrum(f1 - f2 + f);
                    if s3s != 0.0 && s_axis[j] != 0.0 {
                        // mu(f1 - f2 + f, f2, f): (f1 - f2)(f2 - f)
                        let m = mu_of_product((f1 - f2) * (f2 - f), link);
                        sw[j] = m * (s_axis[j] * s3s);
                    }
                }
            });
        Ok(KernelGrid {
            f_target: f,
            symbol_rate: pulse.symbol_rate_hz,
            nodes,
            weights,
            s_axis,
            upsilon,
            inner,
            swapped,
            transforms: Mutex::new(HashMap::new()),
            twiddles: Mutex::new(HashMap::new()),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `upsilon` at node `(i, j)`.
    pub fn upsilon(&self, i: usize, j: usize) -> Complex64 {
        self.upsilon[i * self.nodes.len() + j]
    }

    pub fn diagnostics(&self) -> GridDiagnostics {
        let n = self.nodes.len();
        let cached: usize = self.transforms.lock().unwrap().values().map(|v| v.len()).sum::<usize>()
            + self.twiddles.lock().unwrap().values().map(|v| v.len()).sum::<usize>();
        let tabulated = 3 * n * n;
        GridDiagnostics {
            nodes_per_axis: n,
            upsilon_values: n * n,
            tabulated_values: tabulated,
            cached_transform_values: cached,
            bytes: (tabulated + cached) * std::mem::size_of::<Complex64>()
                + 3 * n * std::mem::size_of::<f64>(),
        }
    }

    /// `exp(-j 2 pi k f_i / Rs)` on the axis.
    fn twiddle(&self, k: i64) -> Arc<Vec<Complex64>> {
        if let Some(t) = self.twiddles.lock().unwrap().get(&k) {
            return t.clone();
        }
        let rs = self.symbol_rate;
        let t: Arc<Vec<Complex64>> = Arc::new(
            self.nodes.iter().map(|&x| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * x / rs)).collect(),
        );
        self.twiddles.lock().unwrap().entry(k).or_insert(t).clone()
    }

    /// Row partial transform `T_i = sum_j w_j X_ij exp(-j 2 pi k f2_j / Rs)`.
    fn row_transform(&self, table: Table, k: i64) -> Arc<Vec<Complex64>> {
        if let Some(t) = self.transforms.lock().unwrap().get(&(table, k)) {
            return t.clone();
        }
        let n = self.nodes.len();
        let data = match table {
            Table::Upsilon => &self.upsilon,
            Table::Inner => &self.inner,
            Table::Swapped => &self.swapped,
        };
        let tw = self.twiddle(k);
        let wt: Vec<Complex64> = tw.iter().zip(&self.weights).map(|(t, w)| t * w).collect();
        let out: Arc<Vec<Complex64>> = Arc::new(
            data.chunks(n)
                .map(|row| row.iter().zip(&wt).fold(Complex64::new(0.0, 0.0), |acc, (x, w)| acc + x * w))
                .collect(),
        );
        self.transforms.lock().unwrap().entry((table, k)).or_insert(out).clone()
    }

    /// `A(k1, k2)`, see the module docs.
    fn a(&self, k1: i64, k2: i64) -> Complex64 {
        let t = self.row_transform(Table::Upsilon, k2);
        let tw = self.twiddle(k1);
        t.iter()
            .zip(tw.iter())
            .zip(&self.weights)
            .fold(Complex64::new(0.0, 0.0), |acc, ((ti, e), w)| acc + ti * e * *w)
    }

    /// `exp(j 2 pi x f / Rs)`
    fn target_phase(&self, x: i64) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * x as f64 * self.f_target / self.symbol_rate)
    }

    /// Double integral of `upsilon * exp(j 2 pi x (f1 - f) / Rs)`.
    fn b(&self, x: i64) -> Complex64 {
        self.target_phase(-x) * self.a(-x, 0)
    }

    /// `sum_i w_i S_i^2 g_i` for a per-row quantity `g`.
    fn outer<F: Fn(usize) -> f64>(&self, g: F) -> f64 {
        (0..self.nodes.len()).map(|i| self.weights[i] * self.s_axis[i] * self.s_axis[i] * g(i)).sum()
    }

    pub fn phi(&self, which: usize) -> Result<f64> {
        let rs = self.symbol_rate;
        let n = self.nodes.len();
        match which {
            1 => {
                let mut acc = 0.0;
                for (i, row) in self.upsilon.chunks(n).enumerate() {
                    let r: f64 = row.iter().zip(&self.weights).map(|(u, w)| u.norm_sqr() * w).sum();
                    acc += self.weights[i] * r;
                }
                Ok(C16_27 * rs.powi(3) * acc)
            }
            2 => {
                let t = self.row_transform(Table::Inner, 0);
                Ok(C16_81 * rs * rs * self.outer(|i| t[i].norm_sqr()))
            }
            3 => {
                let t = self.row_transform(Table::Swapped, 0);
                Ok(C16_81 * rs * rs * self.outer(|i| t[i].norm_sqr()))
            }
            4 => Ok(C16_81 * rs * self.a(0, 0).norm_sqr()),
            _ => Err(Error::Usage(format!("phi index must be 1..=4, got {which}"))),
        }
    }

    /// One of `chi1, chi2, chi3, xi1, psi1, psi2` at integer delay `tau >= 0`.
    pub fn single_delay(&self, id: KernelId, tau: i64) -> Result<f64> {
        if tau < 0 {
            return Err(Error::Usage(format!("delay must be non-negative, got {tau}")));
        }
        let rs = self.symbol_rate;
        let value = match id {
            KernelId::Chi1 => {
                let a00 = self.a(0, 0);
                let osc = (self.target_phase(tau) * self.a(0, tau) + self.target_phase(-tau) * self.a(0, -tau)) * 0.25;
                let c = a00 * 0.5 + osc;
                let s = a00 * 0.5 - osc;
                C32_81 * rs * (c.norm_sqr() - s.norm_sqr())
            }
            KernelId::Chi2 => C32_81 * rs * 0.5 * (self.a(tau, 0).norm_sqr() + self.a(-tau, 0).norm_sqr()),
            KernelId::Chi3 => C32_81 * rs * 0.5 * (self.a(tau, tau).norm_sqr() + self.a(-tau, -tau).norm_sqr()),
            KernelId::Xi1 => {
                let t = self.row_transform(Table::Inner, 0);
                let f = self.f_target;
                C32_81
                    * rs
                    * rs
                    * self.outer(|i| t[i].norm_sqr() * (2.0 * PI * tau as f64 * (f - self.nodes[i]) / rs).cos())
            }
            KernelId::Psi1 => {
                let tp = self.row_transform(Table::Inner, tau);
                let tm = self.row_transform(Table::Inner, -tau);
                C32_81 * rs * rs * self.outer(|i| 0.5 * (tp[i].norm_sqr() + tm[i].norm_sqr()))
            }
            KernelId::Psi2 => {
                let tp = self.row_transform(Table::Swapped, tau);
                let tm = self.row_transform(Table::Swapped, -tau);
                C16_81 * rs * rs * self.outer(|i| 0.5 * (tp[i].norm_sqr() + tm[i].norm_sqr()))
            }
            other => return Err(Error::Usage(format!("`{other}` is not a single-delay kernel"))),
        };
        Ok(value)
    }

    /// `xi2` or `psi3` on the summation domain `0 < tau < tau_prime`.
    pub fn double_delay(&self, id: KernelId, tau: i64, tau_prime: i64) -> Result<f64> {
        if !(0 < tau && tau < tau_prime) {
            return Err(Error::Usage(format!(
                "double-delay kernels need 0 < tau < tau_prime, got ({tau}, {tau_prime})"
            )));
        }
        self.double_delay_at(id, tau, tau_prime)
    }

    /// The double-delay expressions at arbitrary integer delays, without the
    /// summation-domain check. Used for identities and symmetry checks.
    pub fn double_delay_at(&self, id: KernelId, tau: i64, tau_prime: i64) -> Result<f64> {
        let rs = self.symbol_rate;
        let (t, tp) = (tau, tau_prime);
        match id {
            KernelId::Xi2 => {
                let pair = |x: i64, y: i64| {
                    let (bx, by) = (self.b(x), self.b(y));
                    (bx + by).norm_sqr() - bx.norm_sqr() - by.norm_sqr()
                };
                Ok(C16_81 * rs * (pair(t, tp) + pair(tp - t, -t) + pair(t - tp, -tp)))
            }
            KernelId::Psi3 => {
                let s = self.a(t, tp).norm_sqr()
                    + self.a(tp, t).norm_sqr()
                    + self.a(-t, tp - t).norm_sqr()
                    + self.a(tp - t, -t).norm_sqr()
                    + self.a(t - tp, -tp).norm_sqr()
                    + self.a(-tp, t - tp).norm_sqr();
                Ok(C16_81 * rs * s)
            }
            other => Err(Error::Usage(format!("`{other}` is not a double-delay kernel"))),
        }
    }

    /// Any kernel by id; `tau`/`tau_prime` are ignored where not used.
    pub fn eval(&self, id: KernelId, tau: Option<i64>, tau_prime: Option<i64>) -> Result<KernelValue> {
        let value = match id.delay_count() {
            0 => self.phi(match id {
                KernelId::Phi1 => 1,
                KernelId::Phi2 => 2,
                KernelId::Phi3 => 3,
                _ => 4,
            })?,
            1 => self.single_delay(id, need(tau, "tau")?)?,
            _ => self.double_delay(id, need(tau, "tau")?, need(tau_prime, "tau_prime")?)?,
        };
        let (tau, tau_prime) = match id.delay_count() {
            0 => (None, None),
            1 => (tau, None),
            _ => (tau, tau_prime),
        };
        Ok(KernelValue { kernel_id: id, tau, tau_prime, f: self.f_target, value })
    }
}

fn need(v: Option<i64>, name: &str) -> Result<i64> {
    v.ok_or_else(|| Error::Usage(format!("kernel requires `{name}`")))
}

fn phi_id(which: usize) -> Result<KernelId> {
    Ok(match which {
        1 => KernelId::Phi1,
        2 => KernelId::Phi2,
        3 => KernelId::Phi3,
        4 => KernelId::Phi4,
        _ => return Err(Error::Usage(format!("phi index must be 1..=4, got {which}"))),
    })
}

/// `phi_which(f)` on a freshly built grid.
pub fn eval_phi(which: usize, f: f64, pulse: &PulseShape, link: &Link, quad: &QuadratureConfig) -> Result<KernelValue> {
    let id = phi_id(which)?;
    let grid = KernelGrid::build(f, pulse, link, quad)?;
    Ok(KernelValue { kernel_id: id, tau: None, tau_prime: None, f, value: grid.phi(which)? })
}

pub fn eval_single_delay_kernel(
    id: KernelId,
    tau: i64,
    f: f64,
    pulse: &PulseShape,
    link: &Link,
    quad: &QuadratureConfig,
) -> Result<KernelValue> {
    if !KernelId::SINGLE_DELAY.contains(&id) {
        return Err(Error::Usage(format!("`{id}` is not a single-delay kernel")));
    }
    let grid = KernelGrid::build(f, pulse, link, quad)?;
    grid.eval(id, Some(tau), None)
}

pub fn eval_double_delay_kernel(
    id: KernelId,
    tau: i64,
    tau_prime: i64,
    f: f64,
    pulse: &PulseShape,
    link: &Link,
    quad: &QuadratureConfig,
) -> Result<KernelValue> {
    if !KernelId::DOUBLE_DELAY.contains(&id) {
        return Err(Error::Usage(format!("`{id}` is not a double-delay kernel")));
    }
    let grid = KernelGrid::build(f, pulse, link, quad)?;
    grid.eval(id, Some(tau), Some(tau_prime))
}

/// Single-delay kernels at one frequency for `tau = 0..=max_tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SingleDelayKernels {
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    pub chi3: Vec<f64>,
    pub xi1: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
}

/// Double-delay kernels at one frequency over the summation domain
/// `1 <= tau <= memory`, `tau < tau' <= tau + memory`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoubleDelayKernels {
    pub memory: usize,
    /// Row-major in `(tau - 1, tau' - tau - 1)`.
    pub xi2: Vec<f64>,
    pub psi3: Vec<f64>,
}

impl DoubleDelayKernels {
    fn index(&self, tau: usize, tau_prime: usize) -> usize {
        debug_assert!(tau >= 1 && tau <= self.memory && tau_prime > tau && tau_prime <= tau + self.memory);
        (tau - 1) * self.memory + (tau_prime - tau - 1)
    }

    pub fn xi2_at(&self, tau: usize, tau_prime: usize) -> f64 {
        self.xi2[self.index(tau, tau_prime)]
    }

    pub fn psi3_at(&self, tau: usize, tau_prime: usize) -> f64 {
        self.psi3[self.index(tau, tau_prime)]
    }
}

/// Every kernel needed by the PSD assembly, at every grid frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelTable {
    pub f_grid: Vec<f64>,
    pub max_tau: usize,
    /// `[phi1, phi2, phi3, phi4]` per frequency.
    pub phi: Vec<[f64; 4]>,
    pub single: Vec<SingleDelayKernels>,
    pub double: Option<Vec<DoubleDelayKernels>>,
}

/// Per-frequency kernel values.
#[derive(Debug, Clone, PartialEq)]
struct KernelColumn {
    phi: [f64; 4],
    single: SingleDelayKernels,
    /// Two-delay kernels at `+f` and at `-f`.
    double: Option<[DoubleDelayKernels; 2]>,
}

fn kernel_column(
    f: f64,
    pulse: &PulseShape,
    link: &Link,
    quad: &QuadratureConfig,
    max_tau: usize,
    double_memory: Option<usize>,
) -> Result<KernelColumn> {
    let grid = KernelGrid::build(f, pulse, link, quad)?;
    let phi = [grid.phi(1)?, grid.phi(2)?, grid.phi(3)?, grid.phi(4)?];
    let mut single = SingleDelayKernels::default();
    for tau in 0..=max_tau as i64 {
        single.chi1.push(grid.single_delay(KernelId::Chi1, tau)?);
        single.chi2.push(grid.single_delay(KernelId::Chi2, tau)?);
        single.chi3.push(grid.single_delay(KernelId::Chi3, tau)?);
        single.xi1.push(grid.single_delay(KernelId::Xi1, tau)?);
        single.psi1.push(grid.single_delay(KernelId::Psi1, tau)?);
        single.psi2.push(grid.single_delay(KernelId::Psi2, tau)?);
    }
    let double = match double_memory {
        Some(m) if m > 0 => {
            // not even in f: the value at -f is the value at f with both delays negated
            let side = |sign: i64| -> Result<DoubleDelayKernels> {
                let mut xi2 = Vec::with_capacity(m * m);
                let mut psi3 = Vec::with_capacity(m * m);
                for tau in 1..=m as i64 {
                    for tp in tau + 1..=tau + m as i64 {
                        xi2.push(grid.double_delay_at(KernelId::Xi2, sign * tau, sign * tp)?);
                        psi3.push(grid.double_delay_at(KernelId::Psi3, sign * tau, sign * tp)?);
                    }
                }
                Ok(DoubleDelayKernels { memory: m, xi2, psi3 })
            };
            let pos = side(1)?;
            let neg = if f == 0.0 { pos.clone() } else { side(-1)? };
            Some([pos, neg])
        }
        _ => None,
    };
    Ok(KernelColumn { phi, single, double })
}

impl KernelTable {
    /// Evaluate all kernels on `f_grid`. When the grid is symmetric about
    /// zero the negative half reuses the quadrature grid of the positive half:
    /// `phi` and the one-delay kernels are even in `f`, and the two-delay
    /// kernels at `-f` equal those at `f` with negated delays.
    pub fn compute(
        f_grid: &[f64],
        pulse: &PulseShape,
        link: &Link,
        quad: &QuadratureConfig,
        max_tau: usize,
        double_memory: Option<usize>,
    ) -> Result<Self> {
        quad.validate()?;
        let mut unique: Vec<f64> = Vec::new();
        let mut source = Vec::with_capacity(f_grid.len());
        let negative: Vec<usize> = f_grid.iter().map(|&f| (f < 0.0) as usize).collect();
        for &f in f_grid {
            let key = f.abs();
            let pos = unique.iter().position(|&u| (u - key).abs() <= 1e-9 * key.max(1.0));
            let idx = match pos {
                Some(p) => p,
                None => {
                    unique.push(key);
                    unique.len() - 1
                }
            };
            source.push(idx);
        }
        let columns: Vec<KernelColumn> = unique
            .par_iter()
            .map(|&f| kernel_column(f, pulse, link, quad, max_tau, double_memory))
            .collect::<Result<_>>()?;
        let phi = source.iter().map(|&s| columns[s].phi).collect();
        let single = source.iter().map(|&s| columns[s].single.clone()).collect();
        let double = match double_memory {
            Some(m) if m > 0 => Some(
                source
                    .iter()
                    .zip(&negative)
                    .map(|(&s, &neg)| columns[s].double.as_ref().unwrap()[neg].clone())
                    .collect(),
            ),
            _ => None,
        };
        Ok(KernelTable { f_grid: f_grid.to_vec(), max_tau, phi, single, double })
    }
}
