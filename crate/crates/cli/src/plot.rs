//! SVG plots of the CSV outputs. The CSV kind is detected from its columns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 560);

/// A parsed CSV with its `#` lines dropped.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Table { columns, rows })
    }

    fn has(&self, names: &[&str]) -> bool {
        names.iter().all(|n| self.columns.iter().any(|c| c == n))
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| anyhow!("missing column `{name}`"))
    }

    /// Column as numbers; empty cells become `None`.
    fn floats(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self.col(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|_| anyhow!("column `{name}`, row {}: `{cell}` is not a number", r + 1))
                }
            })
            .collect()
    }

    fn strings(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| r.get(i).map(String::as_str).unwrap_or("")).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Kernels,
    Eta,
    Covariances,
    Psd,
    Snr,
}

pub fn detect(t: &Table) -> Result<Kind> {
    if t.has(&["kernel", "tau", "tau_prime", "f_hz", "value"]) {
        Ok(Kind::Kernels)
    } else if t.has(&["eta_megn"]) {
        Ok(Kind::Eta)
    } else if t.has(&["kind", "tau", "value"]) {
        Ok(Kind::Covariances)
    } else if t.has(&["f_hz", "g_total"]) {
        Ok(Kind::Psd)
    } else if t.has(&["launch_power_dbm", "snr_eff_db"]) {
        Ok(Kind::Snr)
    } else {
        bail!("unrecognized columns: {}", t.columns.join(","))
    }
}

/// Scale so the largest magnitude is 1.
pub fn normalize_max(v: &[f64]) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / m).collect()
    }
}

/// Dense grid from scattered `(x, y, z)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys`, `NaN` for missing cells.
    pub z: Vec<f64>,
}

impl Heatmap {
    pub fn from_cells(cells: &[(f64, f64, f64)]) -> Self {
        let uniq = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = uniq(cells.iter().map(|c| c.0).collect());
        let ys = uniq(cells.iter().map(|c| c.1).collect());
        let mut z = vec![f64::NAN; xs.len() * ys.len()];
        for &(x, y, v) in cells {
            let i = xs.binary_search_by(|p| p.total_cmp(&x)).unwrap();
            let j = ys.binary_search_by(|p| p.total_cmp(&y)).unwrap();
            z[j * xs.len() + i] = v;
        }
        Heatmap { xs, ys, z }
    }

    pub fn normalized(mut self) -> Self {
        let finite: Vec<f64> = self.z.iter().copied().filter(|v| v.is_finite()).collect();
        let n = normalize_max(&finite);
        let mut it = n.into_iter();
        for v in self.z.iter_mut().filter(|v| v.is_finite()) {
            *v = it.next().unwrap();
        }
        self
    }
}

fn color(v: f64) -> RGBColor {
    // diverging blue-white-red on [-1, 1]
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (1.0, 1.0 - v, 1.0 - v)
    } else {
        (1.0 + v, 1.0 + v, 1.0)
    };
    RGBColor((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

fn cell_edges(c: &[f64]) -> Vec<f64> {
    if c.len() == 1 {
        return vec![c[0] - 0.5, c[0] + 0.5];
    }
    let mut e = Vec::with_capacity(c.len() + 1);
    e.push(c[0] - 0.5 * (c[1] - c[0]));
    for w in c.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    let n = c.len();
    e.push(c[n - 1] + 0.5 * (c[n - 1] - c[n - 2]));
    e
}

fn draw_heatmap(path: &Path, title: &str, xlabel: &str, ylabel: &str, h: &Heatmap, scale: f64) -> Result<()> {
    let ex = cell_edges(&h.xs);
    let ey = cell_edges(&h.ys);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(ex[0]..ex[ex.len() - 1], ey[0]..ey[ey.len() - 1])?;
    chart.configure_mesh().disable_mesh().x_desc(xlabel).y_desc(ylabel).draw()?;
    let nx = h.xs.len();
    chart.draw_series((0..h.z.len()).filter(|k| h.z[*k].is_finite()).map(|k| {
        let (i, j) = (k % nx, k / nx);
        Rectangle::new([(ex[i], ey[j]), (ex[i + 1], ey[j + 1])], color(h.z[k] / scale).filled())
    }))?;
    root.present()?;
    Ok(())
}

fn palette(i: usize) -> RGBColor {
    const C: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    C[i % C.len()]
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    markers: bool,
}

fn bounds(series: &[Series]) -> Result<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        bail!("nothing to plot");
    }
    let pad = |a: f64, b: f64| {
        let d = if b > a { 0.05 * (b - a) } else { 0.5 * a.abs().max(1e-30) };
        (a - d, b + d)
    };
    Ok((pad(x0, x1), pad(y0, y1)))
}

fn draw_lines(path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<()> {
    let ((x0, x1), (y0, y1)) = bounds(series)?;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(xlabel).y_desc(ylabel).y_label_formatter(&|v| format!("{v:.3e}")).draw()?;
    for (i, s) in series.iter().enumerate() {
        let c = palette(i);
        if s.markers {
            chart
                .draw_series(s.points.iter().map(|&p| Circle::new(p, 4, c.filled())))?
                .label(s.label.clone())
                .legend(move |(x, y)| Circle::new((x + 10, y), 4, c.filled()));
        } else {
            chart
                .draw_series(LineSeries::new(s.points.clone(), c.stroke_width(2)))?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        }
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn output_name(out: &Path, input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    if suffix.is_empty() {
        out.join(format!("{stem}.svg"))
    } else {
        out.join(format!("{stem}_{suffix}.svg"))
    }
}

fn plot_kernels(t: &Table, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let names = t.strings("kernel")?;
    let tau = t.floats("tau")?;
    let tp = t.floats("tau_prime")?;
    let f = t.floats("f_hz")?;
    let v = t.floats("value")?;
    let mut single: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut double: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for k in 0..names.len() {
        let value = v[k].ok_or_else(|| anyhow!("column `value`, row {}: empty", k + 1))?;
        let fk = f[k].ok_or_else(|| anyhow!("column `f_hz`, row {}: empty", k + 1))?;
        match (tau[k], tp[k]) {
            (Some(a), None) => single.entry(names[k]).or_default().push((fk * 1e-9, a, value)),
            (Some(a), Some(b)) => double.entry(names[k]).or_default().push((a, b, value)),
            _ => {}
        }
    }
    let mut files = Vec::new();
    for (name, cells) in single {
        let p = output_name(out, input, name);
        let h = Heatmap::from_cells(&cells).normalized();
        draw_heatmap(&p, &format!("{name} / max"), "f (GHz)", "tau", &h, 1.0)?;
        files.push(p);
    }
    for (name, cells) in double {
        let p = output_name(out, input, &format!("{name}_f0"));
        let h = Heatmap::from_cells(&cells).normalized();
        draw_heatmap(&p, &format!("{name}(tau, tau') / max, f = 0"), "tau", "tau'", &h, 1.0)?;
        files.push(p);
    }
    Ok(files)
}

fn plot_covariances(t: &Table, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let kinds = t.strings("kind")?;
    let tau = t.floats("tau")?;
    let tp = t.floats("tau_prime")?;
    let v = t.floats("value")?;
    let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for k in 0..kinds.len() {
        let (Some(a), Some(val)) = (tau[k], v[k]) else { continue };
        let label = match tp[k] {
            None if a > 0.0 => kinds[k].to_string(),
            Some(b) if a == 0.0 => {
                by.entry(format!("{}(0,tau)", kinds[k])).or_default().push((b, val));
                continue;
            }
            _ => continue,
        };
        by.entry(label).or_default().push((a, val));
    }
    let series: Vec<Series> = by.into_iter().map(|(label, points)| Series { label, points, markers: false }).collect();
    let p = output_name(out, input, "");
    draw_lines(&p, "energy covariances", "tau", "K", &series)?;
    Ok(vec![p])
}

fn plot_psd(t: &Table, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let f = t.floats("f_hz")?;
    let mut series = Vec::new();
    for name in ["g_egn", "g_spt1", "g_spt2", "g_xpt1", "g_xpt2", "g_xp", "g_total"] {
        if !t.has(&[name]) {
            continue;
        }
        let g = t.floats(name)?;
        let points = f.iter().zip(&g).filter_map(|(a, b)| Some((a.as_ref()? * 1e-9, *b.as_ref()?))).collect();
        series.push(Series { label: name.into(), points, markers: false });
    }
    let p = output_name(out, input, "");
    draw_lines(&p, "NLI PSD", "f (GHz)", "G (W/Hz)", &series)?;
    Ok(vec![p])
}

fn plot_snr(t: &Table, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let p_dbm = t.floats("launch_power_dbm")?;
    let snr = t.floats("snr_eff_db")?;
    let point = if t.has(&["point"]) { t.strings("point")? } else { vec![""; snr.len()] };
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for k in 0..snr.len() {
        if let (Some(x), Some(y)) = (p_dbm[k], snr[k]) {
            by.entry(point[k]).or_default().push((x, y));
        }
    }
    let series: Vec<Series> =
        by.into_iter().map(|(k, points)| Series { label: format!("point {k}"), points, markers: false }).collect();
    let p = output_name(out, input, "");
    draw_lines(&p, "effective SNR", "launch power (dBm)", "SNR (dB)", &series)?;
    Ok(vec![p])
}

fn plot_eta(t: &Table, input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let n = t.floats("blocklength")?;
    let h = t.strings("mapping")?;
    let rs = t.floats("symbol_rate_gbd")?;
    let ns = t.floats("num_spans")?;
    let megn = t.floats("eta_megn")?;
    let egn = t.floats("eta_egn")?;
    let sim = if t.has(&["eta_sim"]) { t.floats("eta_sim")? } else { vec![None; megn.len()] };
    let mut files = Vec::new();

    let mut by: BTreeMap<String, (Vec<(f64, f64)>, Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
    for k in 0..megn.len() {
        let (Some(x), Some(y)) = (n[k], megn[k]) else { continue };
        let key = format!("H={} Rs={} Ns={}", h[k], rs[k].unwrap_or(0.0), ns[k].unwrap_or(0.0));
        let e = by.entry(key).or_default();
        e.0.push((x, y));
        if let Some(g) = egn[k] {
            e.1.push((x, g));
        }
        if let Some(s) = sim[k] {
            e.2.push((x, s));
        }
    }
    let mut series = Vec::new();
    for (key, (m, g, s)) in by {
        series.push(Series { label: format!("MEGN {key}"), points: m, markers: false });
        series.push(Series { label: format!("EGN {key}"), points: g, markers: false });
        if !s.is_empty() {
            series.push(Series { label: format!("sim {key}"), points: s, markers: true });
        }
    }
    let p = output_name(out, input, "");
    draw_lines(&p, "eta vs blocklength", "N", "eta (1/W^2)", &series)?;
    files.push(p);

    // relative error over (Rs, Ns) when both axes vary
    let cells: Vec<(f64, f64, f64)> = (0..megn.len())
        .filter_map(|k| {
            let m = megn[k]?;
            let reference = sim[k].or(egn[k])?;
            Some((rs[k]?, ns[k]?, (reference - m) / reference))
        })
        .collect();
    let hm = Heatmap::from_cells(&cells);
    if hm.xs.len() > 1 && hm.ys.len() > 1 && hm.xs.len() * hm.ys.len() == cells.len() {
        let what = if sim.iter().all(Option::is_some) { "(sim - MEGN)/sim" } else { "(EGN - MEGN)/EGN" };
        let scale = hm.z.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let p = output_name(out, input, "error");
        draw_heatmap(&p, &format!("{what}, max |.| = {scale:.3e}"), "Rs (GBd)", "spans", &hm, scale)?;
        files.push(p);
    }
    Ok(files)
}

/// Plot every input; returns the written files.
pub fn plot_one(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let t = Table::parse(&text).with_context(|| format!("parsing {}", input.display()))?;
    let kind = detect(&t).with_context(|| input.display().to_string())?;
    let r = match kind {
        Kind::Kernels => plot_kernels(&t, input, out),
        Kind::Eta => plot_eta(&t, input, out),
        Kind::Covariances => plot_covariances(&t, input, out),
        Kind::Psd => plot_psd(&t, input, out),
        Kind::Snr => plot_snr(&t, input, out),
    };
    r.with_context(|| input.display().to_string())
}

pub fn plot_files(inputs: &[PathBuf], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for input in inputs {
        for f in plot_one(input, out)? {
            eprintln!("wrote {}", f.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comment_lines_are_skipped() {
        let t = Table::parse("# megn 0.1.0 config=abc\nf_hz,g_total\n0,1\n").unwrap();
        assert_eq!(t.columns, ["f_hz", "g_total"]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(detect(&t).unwrap(), Kind::Psd);
    }

    #[test]
    fn kinds_from_columns() {
        let k = Table::parse("kernel,tau,tau_prime,f_hz,value\n").unwrap();
        assert_eq!(detect(&k).unwrap(), Kind::Kernels);
        let c = Table::parse("kind,tau,tau_prime,value\n").unwrap();
        assert_eq!(detect(&c).unwrap(), Kind::Covariances);
        let e = Table::parse("blocklength,eta_megn\n").unwrap();
        assert_eq!(detect(&e).unwrap(), Kind::Eta);
        assert!(detect(&Table::parse("a,b\n").unwrap()).is_err());
    }

    #[test]
    fn bad_cell_names_the_column() {
        let t = Table::parse("f_hz,g_total\n0,abc\n").unwrap();
        let e = t.floats("g_total").unwrap_err().to_string();
        assert!(e.contains("g_total"), "{e}");
        let e = t.floats("g_egn").unwrap_err().to_string();
        assert!(e.contains("missing column `g_egn`"), "{e}");
    }

    #[test]
    fn normalized_heatmap_peaks_at_one() {
        let cells = [(0.0, 1.0, -3.0), (1.0, 1.0, 2.0), (0.0, 2.0, 6.0), (1.0, 2.0, 0.5)];
        let h = Heatmap::from_cells(&cells).normalized();
        let max = h.z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, 1.0);
        assert_eq!(h.z, vec![-0.5, 2.0 / 6.0, 1.0, 0.5 / 6.0]);
    }

    #[test]
    fn missing_cells_stay_nan() {
        let h = Heatmap::from_cells(&[(0.0, 0.0, 1.0), (1.0, 1.0, 2.0)]);
        assert_eq!(h.z.len(), 4);
        assert!(h.z[1].is_nan() && h.z[2].is_nan());
    }
}
