//! Dual-polarization split-step Fourier reference simulator.
//!
//! The chain is: RRC transmitter, `Ns` spans of symmetric split-step
//! propagation of the Manakov equation, lumped amplification, dispersion
//! compensation, matched filter, decimation and a data-aided complex gain
//! per polarization. All filtering is cyclic over the whole stream.
//!
//! Sign convention: `dA/dz = -alpha A + j beta2/2 (2 pi f)^2 A` in the
//! frequency domain and `dA/dz = j (8/9) gamma (|Ax|^2 + |Ay|^2) A` in time.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkmodel::{Link, PulseShape};
use crate::megn::ase_power;
use crate::shaping::{ShapingScheme, SymbolStream};

/// Manakov averaging factor on the nonlinear coefficient.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Samples per symbol.
    pub oversampling: usize,
    pub step_km: f64,
    /// Symbols per run, guard included.
    pub num_symbols: usize,
    pub num_runs: usize,
    pub seed: u64,
    pub ase_enabled: bool,
    /// Per polarization.
    pub launch_power_dbm: f64,
    /// Symbols dropped at each edge before measuring.
    pub guard_symbols: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            oversampling: 2,
            step_km: 0.1,
            num_symbols: 1 << 16,
            num_runs: 4,
            seed: 1,
            ase_enabled: false,
            launch_power_dbm: 0.0,
            guard_symbols: 256,
        }
    }
}

impl SimConfig {
    pub fn launch_power_w(&self) -> f64 {
        1e-3 * 10f64.powf(self.launch_power_dbm / 10.0)
    }

    /// Integer steps per span.
    pub fn steps_per_span(&self, link: &Link) -> Result<usize> {
        if !(self.step_km.is_finite() && self.step_km > 0.0) {
            return Err(Error::param("step_km", "must be positive"));
        }
        let ratio = link.span_length / (self.step_km * 1e3);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::param("step_km", format!("must divide the span length, got ratio {ratio}")));
        }
        Ok(n as usize)
    }

    pub fn validate(&self, link: &Link) -> Result<()> {
        if self.oversampling < 2 {
            return Err(Error::param("oversampling", "must be at least 2"));
        }
        if self.num_symbols <= 2 * self.guard_symbols {
            return Err(Error::param("num_symbols", "must exceed twice the guard"));
        }
        if self.num_runs == 0 {
            return Err(Error::param("num_runs", "must be at least 1"));
        }
        if !self.launch_power_dbm.is_finite() {
            return Err(Error::param("launch_power_dbm", "must be finite"));
        }
        self.steps_per_span(link).map(|_| ())
    }

    /// Seed of run `r`, independent of the run count.
    pub fn run_seed(&self, r: usize) -> u64 {
        // splitmix64 of (seed, r)
        let mut z = self.seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Sampled dual-polarization field.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Sum of `|x|^2 + |y|^2` over all samples.
    pub fn energy(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.norm_sqr()).sum()
    }

    /// Mean power per polarization.
    pub fn mean_power(&self) -> (f64, f64) {
        let n = self.len() as f64;
        (
            self.x.iter().map(|v| v.norm_sqr()).sum::<f64>() / n,
            self.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / n,
        )
    }

    /// DFT bin frequencies in natural FFT order.
    pub fn frequencies(&self) -> Vec<f64> {
        fft_frequencies(self.len(), self.sample_rate_hz)
    }
}

pub fn fft_frequencies(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let k = if m < n.div_ceil(2) { m as f64 } else { m as f64 - n as f64 };
            k * fs / n as f64
        })
        .collect()
}

/// Forward and inverse plans for one length.
#[derive(Clone)]
pub struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FftPair({})", self.fwd.len())
    }
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        FftPair { fwd, inv, scratch: vec![Complex64::new(0.0, 0.0); len] }
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, &mut self.scratch);
    }

    /// Unnormalized; fold `1/n` into the filter.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, &mut self.scratch);
    }

    /// `buf <- ifft(fft(buf) .* h)`, with `h` carrying the `1/n`.
    pub fn filter(&mut self, buf: &mut [Complex64], h: &[Complex64]) {
        self.forward(buf);
        buf.iter_mut().zip(h).for_each(|(v, g)| *v *= g);
        self.inverse(buf);
    }
}

/// Upsample, RRC-filter and return the waveform. Symbols carry their power.
pub fn transmit(stream: &SymbolStream, sim: &SimConfig, pulse: &PulseShape) -> Result<Waveform> {
    if sim.oversampling < 2 {
        return Err(Error::param("oversampling", "must be at least 2"));
    }
    let os = sim.oversampling;
    let n = stream.len() * os;
    let fs = os as f64 * pulse.symbol_rate_hz;
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let mut y = vec![zero; n];
    for (k, (a, b)) in stream.x_pol.iter().zip(&stream.y_pol).enumerate() {
        x[k * os] = *a;
        y[k * os] = *b;
    }
    let scale = fs / n as f64;
    let h: Vec<Complex64> =
        fft_frequencies(n, fs).iter().map(|&f| Complex64::new(scale * pulse.spectrum(f), 0.0)).collect();
    let mut fft = FftPair::new(n);
    fft.filter(&mut x, &h);
    fft.filter(&mut y, &h);
    Ok(Waveform { x, y, sample_rate_hz: fs })
}

/// Dispersion and loss over `length` metres, with the inverse DFT scale.
fn linear_operator(freqs: &[f64], link: &Link, length: f64) -> Vec<Complex64> {
    let n = freqs.len() as f64;
    let decay = (-link.alpha * length).exp() / n;
    freqs
        .iter()
        .map(|&f| {
            let w = 2.0 * std::f64::consts::PI * f;
            Complex64::from_polar(decay, 0.5 * link.beta2 * w * w * length)
        })
        .collect()
}

fn nonlinear_step(wave: &mut Waveform, coeff: f64) -> bool {
    let mut finite = true;
    for (a, b) in wave.x.iter_mut().zip(wave.y.iter_mut()) {
        let p = a.norm_sqr() + b.norm_sqr();
        finite &= p.is_finite();
        let rot = Complex64::from_polar(1.0, coeff * p);
        *a *= rot;
        *b *= rot;
    }
    finite
}

/// Propagation operators for one link and sample grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    half: Vec<Complex64>,
    full: Vec<Complex64>,
    steps: usize,
    nl_coeff: f64,
    fft: FftPair,
}

impl Propagator {
    pub fn new(link: &Link, sim: &SimConfig, len: usize, sample_rate_hz: f64) -> Result<Self> {
        let steps = sim.steps_per_span(link)?;
        let h = link.span_length / steps as f64;
        let freqs = fft_frequencies(len, sample_rate_hz);
        Ok(Propagator {
            half: linear_operator(&freqs, link, 0.5 * h),
            full: linear_operator(&freqs, link, h),
            steps,
            nl_coeff: MANAKOV_FACTOR * link.gamma * h,
            fft: FftPair::new(len),
        })
    }

    /// One span, symmetric splitting with merged half steps.
    pub fn span(&mut self, wave: &mut Waveform, span: usize) -> Result<()> {
        self.fft.filter(&mut wave.x, &self.half);
        self.fft.filter(&mut wave.y, &self.half);
        for step in 0..self.steps {
            if self.nl_coeff != 0.0 && !nonlinear_step(wave, self.nl_coeff) {
                return Err(Error::Overflow { span, step });
            }
            let op = if step + 1 == self.steps { &self.half } else { &self.full };
            self.fft.filter(&mut wave.x, op);
            self.fft.filter(&mut wave.y, op);
        }
        Ok(())
    }
}

/// Propagate one span. Builds the operators each call; reuse a
/// [`Propagator`] for many spans.
pub fn propagate_span(wave: &Waveform, link: &Link, sim: &SimConfig) -> Result<Waveform> {
    let mut out = wave.clone();
    Propagator::new(link, sim, wave.len(), wave.sample_rate_hz)?.span(&mut out, 0)?;
    Ok(out)
}

/// ASE variance per complex sample for one amplifier and polarization.
pub fn ase_sample_variance(link: &Link, pulse: &PulseShape, sample_rate_hz: f64) -> f64 {
    ase_power(&(*link).with_spans(1), pulse) / pulse.symbol_rate_hz * sample_rate_hz
}

/// Restore the span loss; optionally add white circular Gaussian ASE.
pub fn amplify<R: rand::Rng + ?Sized>(
    wave: &mut Waveform,
    link: &Link,
    pulse: &PulseShape,
    sim: &SimConfig,
    rng: &mut R,
) {
    let g = link.span_loss().sqrt();
    wave.x.iter_mut().chain(wave.y.iter_mut()).for_each(|v| *v *= g);
    if sim.ase_enabled {
        let sigma = (0.5 * ase_sample_variance(link, pulse, wave.sample_rate_hz)).sqrt();
        for v in wave.x.iter_mut().chain(wave.y.iter_mut()) {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(sigma * re, sigma * im);
        }
    }
}

/// Receiver output for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    /// Gain-corrected symbols, guard included.
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// Least-squares complex gain per polarization.
    pub gain: [Complex64; 2],
    /// Mean `|a_hat - a|^2` over the measured slots, per polarization.
    pub error_power: [f64; 2],
    pub measured_symbols: usize,
}

/// EDC over `link.num_spans` spans, matched filter, decimation and
/// data-aided gain. The gain and error exclude the guard.
pub fn receive(wave: &Waveform, stream: &SymbolStream, link: &Link, sim: &SimConfig, pulse: &PulseShape) -> Result<Received> {
    let os = sim.oversampling;
    if wave.len() != stream.len() * os {
        return Err(Error::Data(format!("waveform has {} samples, expected {}", wave.len(), stream.len() * os)));
    }
    if stream.len() <= 2 * sim.guard_symbols {
        return Err(Error::Data("stream shorter than twice the guard".into()));
    }
    let n = wave.len();
    let total = link.span_length * link.num_spans as f64;
    let scale = pulse.symbol_rate_hz / n as f64;
    let h: Vec<Complex64> = fft_frequencies(n, wave.sample_rate_hz)
        .iter()
        .map(|&f| {
            let w = 2.0 * std::f64::consts::PI * f;
            Complex64::from_polar(scale * pulse.spectrum(f), -0.5 * link.beta2 * w * w * total)
        })
        .collect();
    let mut fft = FftPair::new(n);
    let mut out = Received {
        x: Vec::new(),
        y: Vec::new(),
        gain: [Complex64::new(0.0, 0.0); 2],
        error_power: [0.0; 2],
        measured_symbols: stream.len() - 2 * sim.guard_symbols,
    };
    let range = sim.guard_symbols..stream.len() - sim.guard_symbols;
    for (p, (field, sent)) in [(&wave.x, &stream.x_pol), (&wave.y, &stream.y_pol)].into_iter().enumerate() {
        let mut buf = field.clone();
        fft.filter(&mut buf, &h);
        let y: Vec<Complex64> = buf.iter().step_by(os).copied().collect();
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        for k in range.clone() {
            num += y[k] * sent[k].conj();
            den += sent[k].norm_sqr();
        }
        let c = if den > 0.0 { num / den } else { Complex64::new(1.0, 0.0) };
        let c = if c.norm_sqr() > 0.0 { c } else { Complex64::new(1.0, 0.0) };
        let a_hat: Vec<Complex64> = y.iter().map(|v| v / c).collect();
        let err: f64 = range.clone().map(|k| (a_hat[k] - sent[k]).norm_sqr()).sum();
        out.error_power[p] = err / range.len() as f64;
        out.gain[p] = c;
        if p == 0 {
            out.x = a_hat;
        } else {
            out.y = a_hat;
        }
    }
    Ok(out)
}

/// Per-run record for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub error_power_x: f64,
    pub error_power_y: f64,
    pub launch_power_w: f64,
    pub eta: f64,
}

/// Transmit, propagate over every span and receive one stream.
pub fn simulate_stream(
    stream: &SymbolStream,
    link: &Link,
    pulse: &PulseShape,
    sim: &SimConfig,
    noise_seed: u64,
) -> Result<Received> {
    let mut wave = transmit(stream, sim, pulse)?;
    let mut prop = Propagator::new(link, sim, wave.len(), wave.sample_rate_hz)?;
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    for span in 0..link.num_spans {
        prop.span(&mut wave, span)?;
        amplify(&mut wave, link, pulse, sim, &mut rng);
    }
    receive(&wave, stream, link, sim, pulse)
}

/// `eta_sim` with a jackknife standard error over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaEstimate {
    pub eta: f64,
    /// `None` with a single run.
    pub stderr: Option<f64>,
    pub runs: Vec<RunRecord>,
}

impl EtaEstimate {
    pub fn from_runs(runs: Vec<RunRecord>) -> Self {
        let etas: Vec<f64> = runs.iter().map(|r| r.eta).collect();
        let (eta, stderr) = jackknife_mean(&etas);
        EtaEstimate { eta, stderr, runs }
    }

    /// Manifest rows `run,seed,launch_power_w,error_power_x,error_power_y,eta`.
    pub fn write_manifest<W: Write>(&self, mut out: W, header: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::Data(e.to_string());
        if !header.is_empty() {
            writeln!(out, "{header}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let cv = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["run", "seed", "launch_power_w", "error_power_x", "error_power_y", "eta"]).map_err(cv)?;
        for r in &self.runs {
            w.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                format!("{:e}", r.launch_power_w),
                format!("{:e}", r.error_power_x),
                format!("{:e}", r.error_power_y),
                format!("{:e}", r.eta),
            ])
            .map_err(cv)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

/// Mean and its jackknife standard error.
pub fn jackknife_mean(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let total: f64 = v.iter().sum();
    let loo: Vec<f64> = v.iter().map(|x| (total - x) / (n - 1) as f64).collect();
    let m = loo.iter().sum::<f64>() / n as f64;
    let var = (n - 1) as f64 / n as f64 * loo.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    (mean, Some(var.sqrt()))
}

/// Measure `eta` over `sim.num_runs` independent streams. ASE must be off.
pub fn estimate_eta_sim(scheme: &ShapingScheme, link: &Link, pulse: &PulseShape, sim: &SimConfig) -> Result<EtaEstimate> {
    if sim.ase_enabled {
        return Err(Error::Usage("eta estimation needs ase_enabled = false".into()));
    }
    sim.validate(link)?;
    let p = sim.launch_power_w();
    let scheme = ShapingScheme { power_target: p, ..scheme.clone() };
    let runs = (0..sim.num_runs)
        .into_par_iter()
        .map(|r| {
            let seed = sim.run_seed(r);
            let stream = scheme.generate(sim.num_symbols, seed)?;
            let rx = simulate_stream(&stream, link, pulse, sim, seed ^ 0xA5A5_A5A5_A5A5_A5A5)?;
            let [ex, ey] = rx.error_power;
            Ok(RunRecord {
                run: r,
                seed,
                error_power_x: ex,
                error_power_y: ey,
                launch_power_w: p,
                eta: 0.5 * (ex + ey) / (p * p * p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EtaEstimate::from_runs(runs))
}
