use megn::shaping::{make_composition, ShapingScheme, QAM64_LEVELS};
use megn::stats::{analytic_covariances, empirical_covariances, CovarianceSet, Mapping, MomentSet};

const PMF: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

fn worst_z(est: &CovarianceSet, err: &CovarianceSet, exact: &CovarianceSet) -> f64 {
    est.values()
        .zip(err.values())
        .zip(exact.values())
        .map(|((e, s), x)| if s > 0.0 { (e - x).abs() / s } else if (e - x).abs() < 1e-12 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

#[test]
fn generated_streams_match_closed_forms() {
    for (n, blocks) in [(16, 30_000), (40, 20_000)] {
        let comp = make_composition(&PMF, &QAM64_LEVELS, n).unwrap();
        for mapping in Mapping::ALL {
            let scheme = ShapingScheme::new(comp.clone(), mapping, 1.0).unwrap();
            let ms = scheme.period();
            let slots = blocks * n / 4;
            let stream = scheme.generate(slots, 7 + n as u64).unwrap();
            let (mt, mtp) = (ms + 2, (ms + 2).min(14));
            let est = empirical_covariances(&stream, ms, mt, mtp).unwrap();
            let m = MomentSet::new(&comp, mapping).unwrap();
            let exact = analytic_covariances(&comp, mapping, mt, mtp).unwrap().scaled(1.0 / m.p_ch);
            let z = worst_z(&est.value, &est.stderr, &exact);
            assert!(z < 4.5, "N={n} H={}: worst z {z}", mapping.h());
        }
    }
}

#[test]
fn interleaving_removes_temporal_correlation() {
    let comp = make_composition(&PMF, &QAM64_LEVELS, 16).unwrap();
    let scheme = ShapingScheme::new(comp, Mapping::TwoD, 1.0).unwrap();
    let stream = scheme.generate(200_000, 3).unwrap().interleaved(99);
    let est = empirical_covariances(&stream, 8, 6, 6).unwrap();
    for (v, s) in est.value.s1.iter().zip(&est.stderr.s1) {
        assert!(v.abs() < 4.5 * s, "{v} vs {s}");
    }
}
