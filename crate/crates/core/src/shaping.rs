//! Constant-composition PAS-64QAM symbol streams.
//!
//! An ideal constant-composition matcher emits every arrangement of a fixed
//! amplitude multiset with equal probability, which is exactly a uniform
//! random permutation of the multiset. Blocks are then laid onto the four
//! real dimensions (XI, XQ, YI, YQ) by one of three mappings:
//!
//! | mapping | blocks per period | slots per period `Ms` | block `b` fills          |
//! |---------|-------------------|-----------------------|--------------------------|
//! | 1-D     | 4                 | `N`                   | one dimension            |
//! | 2-D     | 2                 | `N / 2`               | I and Q of one pol.      |
//! | 4-D     | 1                 | `N / 4`               | all four dimensions      |
//!
//! Each amplitude gets an independent equiprobable sign, and the stream is
//! scaled so that `E|a|^2` per polarization equals the launch power.

use std::io::Write;

use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{amplitude_moments, AmplitudeComposition, Mapping};

/// The 64QAM per-dimension amplitude levels.
pub const QAM64_LEVELS: [f64; 4] = [1.0, 3.0, 5.0, 7.0];

/// Counts `N * pmf`, rounded by largest remainder so they sum to `N`.
pub fn make_composition(pmf: &[f64], alphabet: &[f64], n: usize) -> Result<AmplitudeComposition> {
    if pmf.len() != alphabet.len() || pmf.is_empty() {
        return Err(Error::param("pmf", "need one probability per amplitude level"));
    }
    if pmf.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::param("pmf", "probabilities must be non-negative"));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param("pmf", format!("must sum to 1, sums to {total}")));
    }
    if n == 0 {
        return Err(Error::param("blocklength", "must be positive"));
    }
    let exact: Vec<f64> = pmf.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > n {
        return Err(Error::param("pmf", "rounding overshoots the blocklength"));
    }
    let mut order: Vec<usize> = (0..pmf.len()).collect();
    // stable sort keeps the earlier level first on ties
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    AmplitudeComposition::new(alphabet.to_vec(), counts)
}

/// A uniformly random arrangement of the composition multiset.
pub fn generate_block<R: Rng + ?Sized>(comp: &AmplitudeComposition, rng: &mut R) -> Vec<f64> {
    let mut block = comp.multiset();
    block.shuffle(rng);
    block
}

/// Where amplitudes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeSource {
    /// Ideal constant-composition blocks.
    #[default]
    Ccdm,
    /// Independent draws from the composition's empirical pmf.
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingScheme {
    pub composition: AmplitudeComposition,
    pub mapping: Mapping,
    /// Per-polarization `E|a|^2`, W.
    pub power_target: f64,
    pub source: AmplitudeSource,
}

impl ShapingScheme {
    pub fn new(composition: AmplitudeComposition, mapping: Mapping, power_target: f64) -> Result<Self> {
        composition.correlation_length(mapping)?;
        if !(power_target.is_finite() && power_target > 0.0) {
            return Err(Error::param("power_target", "must be positive"));
        }
        Ok(ShapingScheme { composition, mapping, power_target, source: AmplitudeSource::Ccdm })
    }

    pub fn with_source(mut self, source: AmplitudeSource) -> Self {
        self.source = source;
        self
    }

    /// Symbol slots per period, `Ms`.
    pub fn period(&self) -> usize {
        self.composition.blocklength() / self.mapping.h()
    }

    /// Field scale turning `u` into the launched amplitude.
    pub fn scale(&self) -> f64 {
        let e2 = amplitude_moments(&self.composition).expect("validated composition")[0];
        (self.power_target / (2.0 * e2)).sqrt()
    }

    /// Signed amplitudes of block `index`, reproducible from `seed` alone.
    pub fn signed_block(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut block = match self.source {
            AmplitudeSource::Ccdm => generate_block(&self.composition, &mut rng),
            AmplitudeSource::Iid => {
                let dist = WeightedIndex::new(&self.composition.counts).expect("non-empty composition");
                (0..self.composition.blocklength()).map(|_| self.composition.alphabet[dist.sample(&mut rng)]).collect()
            }
        };
        for u in block.iter_mut() {
            if rng.gen::<bool>() {
                *u = -*u;
            }
        }
        block
    }

    /// At least `num_symbols` slots, truncated to exactly that length.
    pub fn generate(&self, num_symbols: usize, seed: u64) -> Result<SymbolStream> {
        let ms = self.period();
        let per_period = 4 / self.mapping.h();
        let periods = num_symbols.div_ceil(ms).max(1);
        let blocks: Vec<Vec<f64>> =
            (0..(periods * per_period) as u64).into_par_iter().map(|b| self.signed_block(seed, b)).collect();
        let mut s = map_to_qam(&blocks, self.mapping, self.scale())?;
        s.x_pol.truncate(num_symbols);
        s.y_pol.truncate(num_symbols);
        s.seed = Some(seed);
        Ok(s)
    }
}

/// Dual-polarization symbols plus the shaping metadata needed to analyse
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub x_pol: Vec<Complex64>,
    pub y_pol: Vec<Complex64>,
    /// `Ms`; slot 0 starts a block.
    pub block_len_symbols: usize,
    pub mapping: Mapping,
    pub seed: Option<u64>,
}

/// Lay signed amplitude blocks onto the four real dimensions and scale.
pub fn map_to_qam(blocks: &[Vec<f64>], mapping: Mapping, scale: f64) -> Result<SymbolStream> {
    let n = blocks.first().map(Vec::len).unwrap_or(0);
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::param("blocklength", format!("must be a positive multiple of 4, got {n}")));
    }
    if blocks.iter().any(|b| b.len() != n) {
        return Err(Error::param("blocks", "all blocks must have the same length"));
    }
    let per_period = 4 / mapping.h();
    if !blocks.len().is_multiple_of(per_period) {
        return Err(Error::param("blocks", format!("{} mapping needs blocks in groups of {per_period}", mapping.h())));
    }
    let ms = n / mapping.h();
    let slots = blocks.len() / per_period * ms;
    let mut x = Vec::with_capacity(slots);
    let mut y = Vec::with_capacity(slots);
    for group in blocks.chunks(per_period) {
        for k in 0..ms {
            // (XI, XQ, YI, YQ)
            let d = match mapping {
                Mapping::OneD => [group[0][k], group[1][k], group[2][k], group[3][k]],
                Mapping::TwoD => [group[0][2 * k], group[0][2 * k + 1], group[1][2 * k], group[1][2 * k + 1]],
                Mapping::FourD => {
                    let b = &group[0];
                    [b[4 * k], b[4 * k + 1], b[4 * k + 2], b[4 * k + 3]]
                }
            };
            x.push(Complex64::new(d[0], d[1]) * scale);
            y.push(Complex64::new(d[2], d[3]) * scale);
        }
    }
    Ok(SymbolStream { x_pol: x, y_pol: y, block_len_symbols: ms, mapping, seed: None })
}

impl SymbolStream {
    pub fn len(&self) -> usize {
        self.x_pol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pol.is_empty()
    }

    /// Mean of `|a|^2` over both polarizations.
    pub fn mean_power(&self) -> f64 {
        let s: f64 = self.x_pol.iter().chain(&self.y_pol).map(|a| a.norm_sqr()).sum();
        s / (2 * self.len()) as f64
    }

    /// The same symbols with slots in random order (both polarizations move
    /// together). Destroys temporal correlations.
    pub fn interleaved(&self, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        SymbolStream {
            x_pol: idx.iter().map(|&i| self.x_pol[i]).collect(),
            y_pol: idx.iter().map(|&i| self.y_pol[i]).collect(),
            ..self.clone()
        }
    }

    /// CSV rows `slot,x_re,x_im,y_re,y_im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["slot", "x_re", "x_im", "y_re", "y_im"]).map_err(io)?;
        for (i, (a, b)) in self.x_pol.iter().zip(&self.y_pol).enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:e}", a.re),
                format!("{:e}", a.im),
                format!("{:e}", b.re),
                format!("{:e}", b.im),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    const PMF: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

    #[test]
    fn compositions_round_to_the_blocklength() {
        assert_eq!(make_composition(&PMF, &QAM64_LEVELS, 40).unwrap().counts, vec![16, 12, 8, 4]);
        assert_eq!(make_composition(&PMF, &QAM64_LEVELS, 10).unwrap().counts, vec![4, 3, 2, 1]);
        assert_eq!(make_composition(&[1.0], &[3.0], 8).unwrap().counts, vec![8]);
        let c = make_composition(&PMF, &QAM64_LEVELS, 13).unwrap();
        assert_eq!(c.blocklength(), 13);
        assert_eq!(c.counts, vec![5, 4, 3, 1]);
        assert!(make_composition(&[0.5, 0.4], &[1.0, 3.0], 8).is_err());
        assert!(make_composition(&[0.5], &[1.0, 3.0], 8).is_err());
    }

    #[test]
    fn blocks_are_permutations() {
        let c = make_composition(&PMF, &QAM64_LEVELS, 40).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut b = generate_block(&c, &mut rng);
            b.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(b, c.multiset());
        }
        let a = generate_block(&c, &mut ChaCha20Rng::seed_from_u64(9));
        let b = generate_block(&c, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn arrangements_are_uniform() {
        let c = AmplitudeComposition::new(vec![1.0, 3.0], vec![2, 2]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let trials = 100_000;
        let mut hist: HashMap<Vec<u8>, usize> = HashMap::new();
        for _ in 0..trials {
            let key = generate_block(&c, &mut rng).iter().map(|&u| u as u8).collect();
            *hist.entry(key).or_default() += 1;
        }
        assert_eq!(hist.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (k, &v) in &hist {
            assert!((v as f64 - trials as f64 * p).abs() < 4.0 * sigma, "{k:?}: {v}");
        }
    }

    #[test]
    fn mapping_periods() {
        let c = make_composition(&[0.5, 0.5], &[1.0, 3.0], 8).unwrap();
        for (m, ms) in [(Mapping::FourD, 2), (Mapping::OneD, 8), (Mapping::TwoD, 4)] {
            let s = ShapingScheme::new(c.clone(), m, 1.0).unwrap();
            assert_eq!(s.period(), ms);
            assert_eq!(s.generate(64, 0).unwrap().block_len_symbols, ms);
        }
        let bad = make_composition(&[0.5, 0.5], &[1.0, 3.0], 6).unwrap();
        assert!(ShapingScheme::new(bad, Mapping::FourD, 1.0).is_err());
    }

    #[test]
    fn layouts_follow_the_mapping() {
        let b: Vec<Vec<f64>> = (0..4).map(|i| (0..8).map(|k| (10 * i + k) as f64).collect()).collect();
        let s = map_to_qam(&b, Mapping::OneD, 1.0).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.x_pol[3], Complex64::new(3.0, 13.0));
        assert_eq!(s.y_pol[3], Complex64::new(23.0, 33.0));
        let s = map_to_qam(&b, Mapping::TwoD, 1.0).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.x_pol[1], Complex64::new(2.0, 3.0));
        assert_eq!(s.y_pol[1], Complex64::new(12.0, 13.0));
        assert_eq!(s.x_pol[4], Complex64::new(20.0, 21.0));
        let s = map_to_qam(&b, Mapping::FourD, 1.0).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.x_pol[1], Complex64::new(4.0, 5.0));
        assert_eq!(s.y_pol[1], Complex64::new(6.0, 7.0));
        assert!(map_to_qam(&b[..3], Mapping::OneD, 1.0).is_err());
    }

    #[test]
    fn constant_composition_power_is_exact() {
        let c = make_composition(&PMF, &QAM64_LEVELS, 40).unwrap();
        for m in Mapping::ALL {
            let s = ShapingScheme::new(c.clone(), m, 2.5e-4).unwrap().generate(400, 3).unwrap();
            assert!((s.mean_power() / 2.5e-4 - 1.0).abs() < 1e-12, "{m:?}");
            // every period holds 4/H copies of the composition
            let ms = s.block_len_symbols;
            let scale = ShapingScheme::new(c.clone(), m, 2.5e-4).unwrap().scale();
            for p in 0..400 / ms {
                let mut levels: Vec<f64> = (p * ms..(p + 1) * ms)
                    .flat_map(|k| [s.x_pol[k].re, s.x_pol[k].im, s.y_pol[k].re, s.y_pol[k].im])
                    .map(|v| (v.abs() / scale).round())
                    .collect();
                levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut want: Vec<f64> = (0..4 / m.h()).flat_map(|_| c.multiset()).collect();
                want.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(levels, want);
            }
        }
    }

    #[test]
    fn streams_are_deterministic() {
        let c = make_composition(&PMF, &QAM64_LEVELS, 100).unwrap();
        let s = ShapingScheme::new(c, Mapping::FourD, 1.0).unwrap();
        assert_eq!(s.generate(1000, 11).unwrap(), s.generate(1000, 11).unwrap());
        assert_ne!(s.generate(1000, 11).unwrap().x_pol, s.generate(1000, 12).unwrap().x_pol);
        let iid = s.clone().with_source(AmplitudeSource::Iid);
        assert_eq!(iid.generate(500, 4).unwrap(), iid.generate(500, 4).unwrap());
    }

    #[test]
    fn csv_dump() {
        let c = make_composition(&PMF, &QAM64_LEVELS, 20).unwrap();
        let s = ShapingScheme::new(c, Mapping::FourD, 1.0).unwrap().generate(7, 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("slot,x_re,x_im,y_re,y_im"));
    }
}
