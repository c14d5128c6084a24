#![allow(dead_code)]

pub mod oracle;

use megn::stats::{self, AmplitudeComposition, Mapping, MomentSet};
use oracle::Oracle;

/// Every count vector over `levels` amplitude levels with `2 <= N <= max_n`.
pub fn compositions(levels: usize, max_n: usize) -> Vec<Vec<usize>> {
    fn rec(levels: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == levels {
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(levels, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(levels, max_n, &mut Vec::new(), &mut out);
    out.retain(|c| c.iter().sum::<usize>() >= 2);
    out
}

/// Largest absolute gap between the closed forms and enumeration, with the
/// symbols scaled to `E|a|^2 = 1`.
pub fn ccdm_discrepancy(alphabet: &[f64], counts: &[usize]) -> f64 {
    let raw = AmplitudeComposition::new(alphabet.to_vec(), counts.to_vec()).unwrap();
    let e2 = stats::amplitude_moments(&raw).unwrap()[0];
    // u^2 -> u^2 * s gives unit power per polarization
    let s = 1.0 / (2.0 * e2);
    let c = s.sqrt();
    let unit = AmplitudeComposition::new(alphabet.iter().map(|u| u * c).collect(), counts.to_vec()).unwrap();
    let n = raw.blocklength();
    let mut worst: f64 = 0.0;
    let mut check = |a: f64, b: f64| worst = worst.max((a - b).abs());

    let mut o = Oracle::new(&raw, Mapping::FourD);
    let (r1, r2, r3) = o.rho();
    let (a1, a2) = stats::rho_pair(&unit).unwrap();
    check(a1, r1 * s * s);
    check(a2, r2 * s * s * s);
    if n >= 3 {
        check(stats::rho_triple(&unit).unwrap(), r3 * s * s * s);
    }
    if !n.is_multiple_of(4) {
        return worst;
    }

    for mapping in Mapping::ALL {
        let mut o = Oracle::new(&raw, mapping);
        let ms = o.period();
        let s2 = s * s;
        let s3 = s2 * s;
        let m = MomentSet::new(&unit, mapping).unwrap();
        for k in 1..=3u32 {
            check(m.sym_moments[k as usize - 1], o.moment(&[(0, 0, k)]) * s.powi(k as i32));
        }
        if ms >= 2 {
            let p = stats::intra_block_pair(&unit, mapping).unwrap();
            check(p.rho_s1, o.moment(&[(0, 0, 1), (1, 0, 1)]) * s2);
            check(p.rho_x1, o.moment(&[(0, 0, 1), (1, 1, 1)]) * s2);
            check(p.rho_s2, o.moment(&[(0, 0, 1), (1, 0, 2)]) * s3);
            check(p.rho_x2, o.moment(&[(0, 0, 1), (1, 1, 2)]) * s3);
        }
        if ms >= 3 {
            let t = stats::intra_block_triple(&unit, mapping).unwrap();
            check(t.rho_s3, o.moment(&[(0, 0, 1), (1, 0, 1), (2, 0, 1)]) * s3);
            check(t.rho_x3, o.moment(&[(0, 0, 1), (1, 1, 1), (2, 0, 1)]) * s3);
        }
        let same = stats::same_slot_correlations(&unit, mapping).unwrap();
        check(same.rho_x1_0, o.moment(&[(0, 0, 1), (0, 1, 1)]) * s2);
        check(same.rho_x2_0, o.moment(&[(0, 0, 1), (0, 1, 2)]) * s3);
        if ms >= 2 {
            check(same.rho_x3_0, o.moment(&[(0, 0, 1), (0, 1, 1), (1, 0, 1)]) * s3);
        }

        let span = 2 * ms + 2;
        let r = stats::analytic_correlations(&unit, mapping, span, span).unwrap();
        for tau in 1..=span {
            check(r.s1[tau - 1], o.time_average(&[(0, 0, 1), (tau, 0, 1)]) * s2);
            check(r.s2[tau - 1], o.time_average(&[(0, 0, 1), (tau, 0, 2)]) * s3);
            check(r.x1[tau - 1], o.time_average(&[(0, 0, 1), (tau, 1, 1)]) * s2);
            check(r.x2[tau - 1], o.time_average(&[(0, 0, 1), (tau, 1, 2)]) * s3);
            check(r.x3_zero[tau - 1], o.time_average(&[(0, 0, 1), (0, 1, 1), (tau, 0, 1)]) * s3);
        }
        check(r.x1_0, o.moment(&[(0, 0, 1), (0, 1, 1)]) * s2);
        for (t, tp, v) in r.s3.iter() {
            check(v, o.time_average(&[(0, 0, 1), (t, 0, 1), (tp, 0, 1)]) * s3);
        }
        for (t, tp, v) in r.x3.iter() {
            check(v, o.time_average(&[(0, 0, 1), (t, 1, 1), (tp, 0, 1)]) * s3);
        }
    }
    worst
}
