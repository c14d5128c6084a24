//! Subcommand bodies.

use std::io::Write;

use anyhow::{Context as _, Result};
use megn::config::{Artifact, ExperimentConfig, GridPoint};
use megn::kernels::KernelTable;
use megn::megn::{
    ase_power, channel_functions, double_channel_functions, egn_channel_functions, kernel_table, predict as model_predict,
    xp_channel_functions, Prediction,
};
use megn::ssfm::{estimate_eta_sim, EtaEstimate};
use megn::stats::{analytic_covariances, empirical_covariances, MomentSet};

use crate::output::{num, opt, Context};

pub fn show_config(cfg: &ExperimentConfig) -> Result<()> {
    let d = cfg.derived()?;
    println!("{}", cfg.to_toml());
    println!("# derived (SI)");
    println!("alpha_np_per_m = {:e}", d.link.alpha);
    println!("beta2_s2_per_m = {:e}", d.link.beta2);
    println!("gamma_per_w_m = {:e}", d.link.gamma);
    println!("span_length_m = {:e}", d.link.span_length);
    println!("carrier_hz = {:e}", d.link.carrier_hz);
    println!("noise_figure = {:e}", d.link.noise_figure);
    println!("symbol_rate_hz = {:e}", d.pulse.symbol_rate_hz);
    println!("correlation_length = {}", d.correlation_length);
    println!("launch_power_w = {:e}", d.launch_power_w);
    println!("ase_power_w = {:e}", d.ase_power_w);
    println!("steps_per_span = {}", d.steps_per_span);
    Ok(())
}

fn kernel_rows(table: &KernelTable, max_tau: usize, w: &mut csv::Writer<impl Write>) -> Result<()> {
    for (i, &f) in table.f_grid.iter().enumerate() {
        let phi = &table.phi[i];
        let mut row = |name: &str, tau: Option<usize>, tp: Option<usize>, v: f64| {
            let t = tau.map(|t| t.to_string()).unwrap_or_default();
            let tp = tp.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([name, &t, &tp, &num(f), &num(v)])
        };
        for (k, v) in phi.iter().enumerate() {
            row(&format!("phi{}", k + 1), None, None, *v)?;
        }
        for (k, v) in egn_channel_functions(phi).iter().enumerate() {
            row(&format!("kappa{}", k + 1), None, None, *v)?;
        }
        let [xp1, xp2] = xp_channel_functions(phi);
        row("kappa_xp1", None, None, xp1)?;
        row("kappa_xp2", None, None, xp2)?;
        let s = &table.single[i];
        for tau in 1..=max_tau {
            for (name, v) in [
                ("chi1", s.chi1[tau]),
                ("chi2", s.chi2[tau]),
                ("chi3", s.chi3[tau]),
                ("xi1", s.xi1[tau]),
                ("psi1", s.psi1[tau]),
                ("psi2", s.psi2[tau]),
            ] {
                row(name, Some(tau), None, v)?;
            }
            let c = channel_functions(s, tau);
            for (name, v) in [
                ("kappa_s1", c.s1),
                ("kappa_s2", c.s2),
                ("kappa_x1", c.x1),
                ("kappa_x2", c.x2),
                ("kappa_x3", c.x3),
                ("kappa_s1_pm", c.s1_pm),
            ] {
                row(name, Some(tau), None, v)?;
            }
        }
    }
    Ok(())
}

fn double_rows(cfg: &ExperimentConfig, max_tau: usize, w: &mut csv::Writer<impl Write>) -> Result<()> {
    let link = cfg.link()?;
    let pulse = cfg.signal.pulse()?;
    let t = KernelTable::compute(&[0.0], &pulse, &link, &cfg.quadrature, max_tau, Some(max_tau))?;
    let d = &t.double.as_ref().expect("double kernels requested")[0];
    for tau in 1..max_tau {
        for tp in tau + 1..=max_tau {
            let (xi2, psi3) = (d.xi2_at(tau, tp), d.psi3_at(tau, tp));
            let (ks3, kx3) = double_channel_functions(xi2, psi3);
            for (name, v) in [("xi2", xi2), ("psi3", psi3), ("kappa_s3", ks3), ("kappa_x3_2", kx3)] {
                w.write_record([name, &tau.to_string(), &tp.to_string(), &num(0.0), &num(v)])?;
            }
        }
    }
    Ok(())
}

fn write_kernels(cfg: &ExperimentConfig, ctx: &Context, name: &str, max_tau: usize, double: bool) -> Result<()> {
    let link = cfg.link()?;
    let pulse = cfg.signal.pulse()?;
    let table = KernelTable::compute(&cfg.model.f_grid(&pulse), &pulse, &link, &cfg.quadrature, max_tau, None)?;
    let mut w = ctx.csv(name)?;
    w.write_record(["kernel", "tau", "tau_prime", "f_hz", "value"])?;
    kernel_rows(&table, max_tau, &mut w)?;
    if double {
        double_rows(cfg, max_tau, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn kernels(cfg: &ExperimentConfig, ctx: &Context, max_tau: Option<usize>, double: bool) -> Result<()> {
    let max_tau = max_tau.unwrap_or(cfg.model.memory);
    write_kernels(cfg, ctx, "kernels.csv", max_tau, double)?;
    eprintln!("wrote {}", ctx.dir.join("kernels.csv").display());
    Ok(())
}

fn write_covariances(cfg: &ExperimentConfig, ctx: &Context, name: &str, max_tau: usize, max_tau_prime: usize) -> Result<()> {
    let comp = cfg.signal.composition()?;
    let mapping = cfg.signal.mapping()?;
    let m = MomentSet::new(&comp, mapping)?;
    let k = analytic_covariances(&comp, mapping, max_tau, max_tau_prime)?.scaled(1.0 / m.p_ch);
    k.write_csv(ctx.create(name)?, None)?;
    Ok(())
}

pub fn correlations(
    cfg: &ExperimentConfig,
    ctx: &Context,
    max_tau: Option<usize>,
    max_tau_prime: usize,
    empirical_blocks: Option<usize>,
) -> Result<()> {
    let max_tau = max_tau.unwrap_or(cfg.model.memory);
    write_covariances(cfg, ctx, "covariances.csv", max_tau, max_tau_prime)?;
    eprintln!("wrote {}", ctx.dir.join("covariances.csv").display());
    if let Some(blocks) = empirical_blocks {
        let mut scheme = cfg.signal.scheme()?;
        scheme.power_target = 1.0;
        let period = scheme.period();
        let lag = max_tau.max(max_tau_prime);
        let stream = scheme.generate(blocks * period + lag, cfg.simulation.seed)?;
        let est = empirical_covariances(&stream, period, max_tau, max_tau_prime)?;
        est.value.write_csv(ctx.create("covariances_empirical.csv")?, Some(&est.stderr))?;
        eprintln!(
            "wrote {} ({} jackknife groups)",
            ctx.dir.join("covariances_empirical.csv").display(),
            est.groups
        );
    }
    Ok(())
}

/// Model prediction for one config on a prebuilt kernel table.
fn model(cfg: &ExperimentConfig, table: &KernelTable) -> Result<Prediction> {
    let link = cfg.link()?;
    let pulse = cfg.signal.pulse()?;
    let comp = cfg.signal.composition()?;
    let p = model_predict(
        table,
        &link,
        &pulse,
        &comp,
        cfg.signal.mapping()?,
        cfg.signal.source,
        cfg.signal.launch_power_w(),
        &cfg.model,
    )?;
    Ok(p)
}

fn table_for(cfg: &ExperimentConfig) -> Result<KernelTable> {
    let link = cfg.link()?;
    let pulse = cfg.signal.pulse()?;
    Ok(kernel_table(&link, &pulse, &cfg.quadrature, &cfg.model)?)
}

fn eta_egn(p: &Prediction) -> f64 {
    let pc = p.result.p_ch;
    p.spectrum.integrate(&p.spectrum.g_egn) / (pc * pc * pc)
}

fn dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn predict(cfg: &ExperimentConfig, ctx: &Context) -> Result<()> {
    let table = table_for(cfg)?;
    let p = model(cfg, &table)?;
    p.spectrum.write_csv(ctx.create("psd.csv")?)?;
    let mut w = ctx.csv("summary.csv")?;
    w.write_record(["config", "eta", "eta_egn", "p_nli_w", "p_ase_w", "snr_eff_db", "snr_opt_db", "p_opt_dbm"])?;
    let r = &p.result;
    w.write_record([
        ctx.hash.clone(),
        num(r.eta),
        num(eta_egn(&p)),
        num(r.p_nli),
        num(r.p_ase),
        num(r.snr_eff_db),
        num(r.snr_opt_db),
        num(dbm(r.p_opt)),
    ])?;
    w.flush()?;
    println!("eta = {:.6e} 1/W^2 (EGN {:.6e})", r.eta, eta_egn(&p));
    println!("SNR_eff = {:.3} dB at {:.2} dBm, optimum {:.3} dB at {:.2} dBm", r.snr_eff_db, dbm(r.p_ch), r.snr_opt_db, dbm(r.p_opt));
    Ok(())
}

fn sim_eta(cfg: &ExperimentConfig) -> Result<EtaEstimate> {
    let link = cfg.link()?;
    let pulse = cfg.signal.pulse()?;
    let scheme = cfg.signal.scheme()?;
    Ok(estimate_eta_sim(&scheme, &link, &pulse, &cfg.simulation)?)
}

fn delta_eta(sim: f64, model: f64) -> f64 {
    (sim - model) / sim
}

pub fn simulate(cfg: &ExperimentConfig, ctx: &Context) -> Result<()> {
    let est = sim_eta(cfg).context("simulation failed")?;
    let path = ctx.dir.join("sim_manifest.csv");
    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    est.write_manifest(std::io::BufWriter::new(f), &ctx.header())?;
    let p = model(cfg, &table_for(cfg)?)?;
    let mut w = ctx.csv("sim_summary.csv")?;
    w.write_record(["config", "runs", "eta_sim", "eta_sim_stderr", "eta_megn", "eta_egn", "delta_eta"])?;
    w.write_record([
        ctx.hash.clone(),
        est.runs.len().to_string(),
        num(est.eta),
        opt(est.stderr),
        num(p.result.eta),
        num(eta_egn(&p)),
        num(delta_eta(est.eta, p.result.eta)),
    ])?;
    w.flush()?;
    println!(
        "eta_sim = {:.6e} +- {} 1/W^2, eta_megn = {:.6e}, delta = {:.4}",
        est.eta,
        est.stderr.map(|s| format!("{s:.2e}")).unwrap_or_else(|| "n/a".into()),
        p.result.eta,
        delta_eta(est.eta, p.result.eta)
    );
    Ok(())
}

const ETA_COLUMNS: [&str; 15] = [
    "blocklength",
    "mapping",
    "symbol_rate_gbd",
    "num_spans",
    "memory",
    "mode",
    "eta_megn",
    "eta_egn",
    "p_nli_w",
    "snr_eff_db",
    "snr_opt_db",
    "p_opt_dbm",
    "eta_sim",
    "eta_sim_stderr",
    "delta_eta",
];

fn point_tag(i: usize, g: &GridPoint) -> String {
    format!("{i:03}_n{}_h{}_rs{}_ns{}_m{}", g.blocklength, g.mapping, g.symbol_rate_gbd, g.num_spans, g.memory)
}

pub fn sweep(cfg: &ExperimentConfig, ctx: &Context) -> Result<()> {
    let grid = cfg.grid();
    let wants = |a: Artifact| cfg.sweep.outputs.contains(&a);
    let mut eta_w = if wants(Artifact::Eta) {
        let mut w = ctx.csv("eta.csv")?;
        w.write_record(ETA_COLUMNS)?;
        w.flush()?;
        Some(w)
    } else {
        None
    };
    let mut snr_w = if wants(Artifact::Snr) {
        let mut w = ctx.csv("snr.csv")?;
        w.write_record(["point", "launch_power_dbm", "snr_eff_db"])?;
        Some(w)
    } else {
        None
    };
    let mut cached: Option<((u64, usize, usize), KernelTable)> = None;
    eprintln!("sweep: {} grid points", grid.len());
    for (i, g) in grid.iter().enumerate() {
        let c = cfg.at(g);
        c.validate().with_context(|| format!("grid point {}", point_tag(i, g)))?;
        let key = (g.symbol_rate_gbd.to_bits(), g.num_spans, g.memory);
        if cached.as_ref().map(|(k, _)| *k) != Some(key) {
            cached = Some((key, table_for(&c)?));
            if wants(Artifact::Kernels) {
                write_kernels(&c, ctx, &format!("kernels_{}.csv", point_tag(i, g)), g.memory, false)?;
            }
        }
        let table = &cached.as_ref().expect("table cached").1;
        let p = model(&c, table)?;
        let r = &p.result;
        if wants(Artifact::Psd) {
            p.spectrum.write_csv(ctx.create(&format!("psd_{}.csv", point_tag(i, g)))?)?;
        }
        if wants(Artifact::Covariances) {
            write_covariances(&c, ctx, &format!("covariances_{}.csv", point_tag(i, g)), g.memory, 0)?;
        }
        if let Some(w) = snr_w.as_mut() {
            let link = c.link()?;
            let pulse = c.signal.pulse()?;
            for k in 0..=24 {
                let dbm_k = -6.0 + 0.5 * k as f64;
                let pw = 1e-3 * 10f64.powf(dbm_k / 10.0);
                let snr = pw / (ase_power(&link, &pulse) + r.eta * pw * pw * pw);
                w.write_record([i.to_string(), num(dbm_k), num(10.0 * snr.log10())])?;
            }
            w.flush()?;
        }
        let sim = if cfg.sweep.compare_sim {
            eprintln!("  [{i}] simulating {}", point_tag(i, g));
            Some(sim_eta(&c).with_context(|| format!("simulation failed at grid point {}", point_tag(i, g))))
        } else {
            None
        };
        let (sim_ok, sim_err) = match sim {
            Some(Ok(e)) => (Some(e), None),
            Some(Err(e)) => (None, Some(e)),
            None => (None, None),
        };
        if let Some(w) = eta_w.as_mut() {
                        w.write_record([
                g.blocklength.to_string(),
                g.mapping.to_string(),
                num(g.symbol_rate_gbd),
                g.num_spans.to_string(),
                g.memory.to_string(),
                c.model.mode.to_string(),
                num(r.eta),
                num(eta_egn(&p)),
                num(r.p_nli),
                num(r.snr_eff_db),
                num(r.snr_opt_db),
                num(dbm(r.p_opt)),
                opt(sim_ok.as_ref().map(|e| e.eta)),
                opt(sim_ok.as_ref().and_then(|e| e.stderr)),
                opt(sim_ok.as_ref().map(|e| delta_eta(e.eta, r.eta))),
            ])?;
            w.flush()?;
        }
        if let Some(e) = sim_err {
            return Err(e.context(format!("{} of {} grid points written", i + 1, grid.len())));
        }
        eprintln!("  [{i}] {} eta_megn {:.4e}", point_tag(i, g), r.eta);
    }
    Ok(())
}
