use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[link]
num_spans = 2

[signal]
blocklength = 40

[quadrature]
points_per_axis = 31

[model]
memory = 4
freq_points = 5

[simulation]
num_symbols = 2048
num_runs = 2
step_km = 1.0
guard_symbols = 64
"#;

fn megn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_megn"))
        .current_dir(dir)
        .env("MEGN_WORKERS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(extra: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("exp.toml"), format!("{SMALL}{extra}")).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_is_reported_with_its_path() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[link]\nspan_lenght_km = 80\n").unwrap();
    let o = megn(dir.path(), &["-c", "bad.toml", "config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("link.span_lenght_km"), "{}", stderr(&o));
}

#[test]
fn bad_sweep_axis_names_the_entry() {
    let dir = setup("[sweep]\nmapping = [4, 3]\n");
    let o = megn(dir.path(), &["-c", "exp.toml", "sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sweep.mapping[1]"), "{}", stderr(&o));
}

#[test]
fn config_prints_derived_values() {
    let dir = setup("");
    let o = megn(dir.path(), &["-c", "exp.toml", "config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("steps_per_span = 100"), "{out}");
    assert!(out.contains("correlation_length = 10"), "{out}");
}

#[test]
fn predict_writes_headed_tables_and_reruns_identically() {
    let dir = setup("");
    let o = megn(dir.path(), &["-c", "exp.toml", "-o", "a", "predict"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let psd = read(&dir.path().join("a"), "psd.csv");
    let mut lines = psd.lines();
    assert!(lines.next().unwrap().starts_with("# megn "));
    assert_eq!(lines.next().unwrap(), "f_hz,g_egn,g_spt1,g_spt2,g_xpt1,g_xpt2,g_xp,g_total");
    assert_eq!(lines.count(), 5);
    let summary = read(&dir.path().join("a"), "summary.csv");
    assert!(summary.lines().nth(1).unwrap().starts_with("config,eta,eta_egn"));

    let o = megn(dir.path(), &["-c", "exp.toml", "-o", "b", "predict"]);
    assert!(o.status.success());
    assert_eq!(psd, read(&dir.path().join("b"), "psd.csv"));
    assert_eq!(summary, read(&dir.path().join("b"), "summary.csv"));
}

#[test]
fn config_hash_tracks_the_resolved_config() {
    let a = setup("");
    let b = setup("[sweep]\noutputs = [\"psd\"]\n");
    for d in [&a, &b] {
        assert!(megn(d.path(), &["-c", "exp.toml", "predict"]).status.success());
    }
    let head = |d: &TempDir| read(&d.path().join("out"), "psd.csv").lines().next().unwrap().to_string();
    assert_ne!(head(&a), head(&b));
}

#[test]
fn model_only_sweep_follows_grid_order() {
    let dir = setup("[sweep]\nblocklength = [40, 80]\nmapping = [1, 4]\noutputs = [\"eta\", \"psd\", \"snr\"]\n");
    let o = megn(dir.path(), &["-c", "exp.toml", "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let eta = read(&out, "eta.csv");
    let rows: Vec<&str> = eta.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    let keys: Vec<(&str, &str)> = rows
        .iter()
        .map(|r| {
            let c: Vec<&str> = r.split(',').collect();
            (c[0], c[1])
        })
        .collect();
    assert_eq!(keys, [("40", "1"), ("80", "1"), ("40", "4"), ("80", "4")]);
    // no simulation: the sim columns stay empty
    assert!(rows.iter().all(|r| r.ends_with(",,,")));
    assert!(out.join("psd_000_n40_h1_rs32_ns2_m4.csv").exists());
    assert_eq!(read(&out, "snr.csv").lines().count(), 2 + 4 * 25);
}

#[test]
fn kernels_and_correlations() {
    let dir = setup("");
    let o = megn(dir.path(), &["-c", "exp.toml", "kernels", "--max-tau", "3", "--double"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let k = read(&dir.path().join("out"), "kernels.csv");
    assert_eq!(k.lines().nth(1).unwrap(), "kernel,tau,tau_prime,f_hz,value");
    assert!(k.lines().any(|l| l.starts_with("kappa_s1,3,,")));
    assert!(k.lines().any(|l| l.starts_with("psi3,1,3,")));

    let o = megn(dir.path(), &["-c", "exp.toml", "correlations", "--max-tau", "12", "--empirical-blocks", "2000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = read(&dir.path().join("out"), "covariances.csv");
    assert_eq!(c.lines().nth(1).unwrap(), "kind,tau,tau_prime,value");
    let e = read(&dir.path().join("out"), "covariances_empirical.csv");
    assert_eq!(e.lines().nth(1).unwrap(), "kind,tau,tau_prime,value,stderr");
}

#[test]
fn simulate_writes_a_manifest() {
    let dir = setup("");
    let o = megn(dir.path(), &["-c", "exp.toml", "--seed", "9", "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read(&dir.path().join("out"), "sim_manifest.csv");
    assert!(m.starts_with("# megn "));
    assert_eq!(m.lines().nth(1).unwrap(), "run,seed,launch_power_w,error_power_x,error_power_y,eta");
    assert_eq!(m.lines().count(), 4);
    let s = read(&dir.path().join("out"), "sim_summary.csv");
    assert!(s.lines().nth(2).unwrap().split(',').nth(1) == Some("2"));
}

#[test]
fn simulator_failure_keeps_earlier_rows() {
    // with ASE on the simulator refuses to estimate eta
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("guard_symbols = 64\n", "guard_symbols = 64\nase_enabled = true\n");
    std::fs::write(dir.path().join("exp.toml"), format!("{text}[sweep]\ncompare_sim = true\n")).unwrap();
    let o = megn(dir.path(), &["-c", "exp.toml", "sweep"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("simulation failed"), "{}", stderr(&o));
    let eta = read(&dir.path().join("out"), "eta.csv");
    assert_eq!(eta.lines().count(), 3, "{eta}");
}

#[test]
fn plot_renders_each_kind() {
    let dir = setup("[sweep]\nblocklength = [40, 80]\noutputs = [\"eta\", \"kernels\", \"covariances\"]\n");
    assert!(megn(dir.path(), &["-c", "exp.toml", "sweep"]).status.success());
    assert!(megn(dir.path(), &["-c", "exp.toml", "predict"]).status.success());
    let out = dir.path().join("out");
    let kernels = "out/kernels_000_n40_h4_rs32_ns2_m4.csv";
    let o = megn(dir.path(), &["-o", "plots", "plot", "out/eta.csv", "out/psd.csv", kernels]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = dir.path().join("plots");
    for f in ["eta.svg", "psd.svg", "kernels_000_n40_h4_rs32_ns2_m4_chi1.svg"] {
        let svg = read(&plots, f);
        assert!(svg.contains("<svg"), "{f}");
    }
    assert!(out.join("covariances_001_n80_h4_rs32_ns2_m4.csv").exists());
}

#[test]
fn plot_rejects_unknown_tables() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("x.csv"), "# megn\nf_hz,g_total\n0,abc\n").unwrap();
    let o = megn(dir.path(), &["plot", "x.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("g_total"), "{}", stderr(&o));
}
