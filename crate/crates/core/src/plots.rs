//! Figure generation from a campaign result tree: KLC-vs-epoch curves
//! aggregated across seeds per (environment, latent dim), final
//! object-position scatters per cell, and one long-format CSV collecting
//! every metric row so external plotting stacks can redo the figures.

use crate::arm_env::INITIAL_POS;
use crate::error::Error;
use crate::serialize::{read_klc_csv, read_true_states_csv, KlcRow, StateRow};
use crate::Result;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellRef {
    pub env: String,
    pub algo: String,
    pub latent: usize,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Walk the `<env>/<algo>/<latent>/<seed>/` hierarchy, keeping directories
/// that contain a klc.csv. Anything that does not fit the scheme (caches,
/// manifest, plot output) is skipped.
pub fn scan_tree(root: &Path) -> Result<Vec<CellRef>> {
    fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                out.push(path);
            }
        }
        Ok(out)
    }
    fn name(path: &Path) -> String {
        path.file_name().unwrap_or_default().to_string_lossy().into_owned()
    }

    let mut cells = Vec::new();
    for env_dir in subdirs(root)? {
        for algo_dir in subdirs(&env_dir)? {
            for latent_dir in subdirs(&algo_dir)? {
                let Ok(latent) = name(&latent_dir).parse::<usize>() else {
                    continue;
                };
                for seed_dir in subdirs(&latent_dir)? {
                    let Ok(seed) = name(&seed_dir).parse::<u64>() else {
                        continue;
                    };
                    if seed_dir.join("klc.csv").is_file() {
                        cells.push(CellRef {
                            env: name(&env_dir),
                            algo: name(&algo_dir),
                            latent,
                            seed,
                            dir: seed_dir,
                        });
                    }
                }
            }
        }
    }
    cells.sort();
    Ok(cells)
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        let coords = pts
            .iter()
            .map(|(x, y)| format!("{x},{y}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            self.body,
            r#"<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let coords = pts
            .iter()
            .map(|(x, y)| format!("{x},{y}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            self.body,
            r#"<polygon points="{coords}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>"#
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx}" cy="{cy}" r="{r}" fill="{fill}" fill-opacity="{opacity}"/>"#
        );
    }

    fn circle_outline(&mut self, cx: f64, cy: f64, r: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx}" cy="{cy}" r="{r}" fill="none" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str, rotate: bool) {
        let transform = if rotate {
            format!(r#" transform="rotate(-90 {x} {y})""#)
        } else {
            String::new()
        };
        let _ = writeln!(
            self.body,
            r#"<text x="{x}" y="{y}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}"{transform}>{content}</text>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.width, self.height, self.body
        )
    }
}

const PALETTE: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22",
];

fn nice_ticks(min: f64, max: f64, target: usize) -> Vec<f64> {
    if !(max > min) {
        return vec![min];
    }
    let raw = (max - min) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm <= 1.0 {
            1.0
        } else if norm <= 2.0 {
            2.0
        } else if norm <= 5.0 {
            5.0
        } else {
            10.0
        };
    let mut ticks = Vec::new();
    let mut t = (min / step).ceil() * step;
    while t <= max + 1e-9 * step {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn tick_label(v: f64, step: f64) -> String {
    if step >= 1.0 {
        format!("{v:.0}")
    } else {
        let decimals = (-step.log10()).ceil().max(1.0) as usize;
        format!("{v:.*}", decimals)
    }
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.xmin) / (self.xmax - self.xmin) * self.width
    }
    fn py(&self, y: f64) -> f64 {
        self.top + (self.ymax - y) / (self.ymax - self.ymin) * self.height
    }
}

/// One algorithm's aggregation across seeds on a shared epoch grid.
struct Curve {
    algo: String,
    epochs: Vec<usize>,
    mean: Vec<f64>,
    band: Option<(Vec<f64>, Vec<f64>)>,
    band_label: String,
}

fn aggregate_curves(per_algo: &BTreeMap<String, Vec<Vec<KlcRow>>>) -> Vec<Curve> {
    let mut curves = Vec::new();
    for (algo, runs) in per_algo {
        let runs: Vec<&Vec<KlcRow>> = runs.iter().filter(|r| !r.is_empty()).collect();
        if runs.is_empty() {
            continue;
        }
        let len = runs.iter().map(|r| r.len()).min().unwrap();
        let n = runs.len();
        let epochs: Vec<usize> = runs[0][..len].iter().map(|r| r.epoch).collect();
        let mut mean = vec![0.0; len];
        for run in &runs {
            for i in 0..len {
                mean[i] += run[i].klc / n as f64;
            }
        }
        let (band, band_label) = if n == 1 {
            (None, "single seed".to_string())
        } else if n < 5 {
            let mut lo = vec![f64::INFINITY; len];
            let mut hi = vec![f64::NEG_INFINITY; len];
            for run in &runs {
                for i in 0..len {
                    lo[i] = lo[i].min(run[i].klc);
                    hi[i] = hi[i].max(run[i].klc);
                }
            }
            (Some((lo, hi)), format!("band: min/max, {n} seeds"))
        } else {
            // 90% CI, normal approximation
            let mut lo = vec![0.0; len];
            let mut hi = vec![0.0; len];
            for i in 0..len {
                let var = runs
                    .iter()
                    .map(|r| (r[i].klc - mean[i]).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let half = 1.6449 * (var / n as f64).sqrt();
                lo[i] = mean[i] - half;
                hi[i] = mean[i] + half;
            }
            (Some((lo, hi)), format!("band: 90% CI, {n} seeds"))
        };
        curves.push(Curve {
            algo: algo.clone(),
            epochs,
            mean,
            band,
            band_label,
        });
    }
    curves
}

fn klc_chart(env: &str, latent: usize, curves: &[Curve]) -> String {
    let mut svg = Svg::new(760.0, 460.0);
    let frame_data = {
        let mut xmax = 1.0f64;
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for c in curves {
            xmax = xmax.max(*c.epochs.last().unwrap() as f64);
            for (i, &m) in c.mean.iter().enumerate() {
                let (lo, hi) = match &c.band {
                    Some((lo, hi)) => (lo[i], hi[i]),
                    None => (m, m),
                };
                ymin = ymin.min(lo);
                ymax = ymax.max(hi);
            }
        }
        if !ymin.is_finite() || !ymax.is_finite() {
            ymin = 0.0;
            ymax = 1.0;
        }
        let pad = 0.05 * (ymax - ymin).max(1e-9);
        Frame {
            left: 70.0,
            top: 45.0,
            width: 500.0,
            height: 360.0,
            xmin: 0.0,
            xmax,
            ymin: ymin - pad,
            ymax: ymax + pad,
        }
    };
    let f = &frame_data;

    svg.text(
        f.left + f.width / 2.0,
        24.0,
        15.0,
        "middle",
        &format!("KLC vs epoch — {env}, l = {latent}"),
        false,
    );
    // axes
    svg.line(f.left, f.top, f.left, f.top + f.height, "#333", 1.0);
    svg.line(
        f.left,
        f.top + f.height,
        f.left + f.width,
        f.top + f.height,
        "#333",
        1.0,
    );
    let xticks = nice_ticks(f.xmin, f.xmax, 6);
    let xstep = if xticks.len() > 1 {
        xticks[1] - xticks[0]
    } else {
        1.0
    };
    for &t in &xticks {
        let x = f.px(t);
        svg.line(x, f.top + f.height, x, f.top + f.height + 4.0, "#333", 1.0);
        svg.text(
            x,
            f.top + f.height + 18.0,
            11.0,
            "middle",
            &tick_label(t, xstep),
            false,
        );
    }
    let yticks = nice_ticks(f.ymin, f.ymax, 6);
    let ystep = if yticks.len() > 1 {
        yticks[1] - yticks[0]
    } else {
        1.0
    };
    for &t in &yticks {
        let y = f.py(t);
        svg.line(f.left - 4.0, y, f.left, y, "#333", 1.0);
        svg.text(f.left - 8.0, y + 4.0, 11.0, "end", &tick_label(t, ystep), false);
    }
    svg.text(
        f.left + f.width / 2.0,
        f.top + f.height + 38.0,
        13.0,
        "middle",
        "epoch",
        false,
    );
    svg.text(22.0, f.top + f.height / 2.0, 13.0, "middle", "KLC (nats)", true);

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some((lo, hi)) = &curve.band {
            let mut pts: Vec<(f64, f64)> = curve
                .epochs
                .iter()
                .zip(lo)
                .map(|(&e, &v)| (f.px(e as f64), f.py(v)))
                .collect();
            pts.extend(
                curve
                    .epochs
                    .iter()
                    .zip(hi)
                    .rev()
                    .map(|(&e, &v)| (f.px(e as f64), f.py(v))),
            );
            svg.polygon(&pts, color, 0.18);
        }
        let line: Vec<(f64, f64)> = curve
            .epochs
            .iter()
            .zip(&curve.mean)
            .map(|(&e, &v)| (f.px(e as f64), f.py(v)))
            .collect();
        svg.polyline(&line, color, 1.8);

        let ly = f.top + 14.0 + 20.0 * i as f64;
        svg.line(f.left + f.width + 16.0, ly - 4.0, f.left + f.width + 40.0, ly - 4.0, color, 2.5);
        svg.text(
            f.left + f.width + 46.0,
            ly,
            11.0,
            "start",
            &format!("{} ({})", curve.algo, curve.band_label),
            false,
        );
    }
    svg.finish()
}

fn scatter_chart(cell: &CellRef, states: &[StateRow]) -> String {
    let mut svg = Svg::new(460.0, 490.0);
    let f = Frame {
        left: 30.0,
        top: 60.0,
        width: 400.0,
        height: 400.0,
        xmin: -1.1,
        xmax: 1.1,
        ymin: -1.1,
        ymax: 1.1,
    };
    svg.text(
        230.0,
        24.0,
        14.0,
        "middle",
        &format!(
            "final object positions — {}/{}/{}/seed {}",
            cell.env, cell.algo, cell.latent, cell.seed
        ),
        false,
    );
    let moved = states.iter().filter(|s| s.handled).count();
    svg.text(
        230.0,
        44.0,
        11.0,
        "middle",
        &format!("{} episodes, {} moved the object", states.len(), moved),
        false,
    );
    // object-position bounds and arm reach
    svg.polyline(
        &[
            (f.px(-1.0), f.py(-1.0)),
            (f.px(1.0), f.py(-1.0)),
            (f.px(1.0), f.py(1.0)),
            (f.px(-1.0), f.py(1.0)),
            (f.px(-1.0), f.py(-1.0)),
        ],
        "#999",
        1.0,
    );
    svg.circle_outline(f.px(0.0), f.py(0.0), f.width / 2.2, "#ccc");
    for s in states {
        let (color, opacity) = if s.handled {
            ("#1f77b4", 0.55)
        } else {
            ("#555555", 0.25)
        };
        svg.circle(f.px(s.x), f.py(s.y), 2.5, color, opacity);
    }
    svg.finish()
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Returns the files written: the long-format CSV, one KLC chart per
/// (environment, latent dim), and one scatter per cell.
pub fn emit_plots(tree: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cells = scan_tree(tree)?;
    if cells.is_empty() {
        return Err(Error::EmptyInput("result tree has no cells with a klc.csv"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut long = csv::Writer::from_path(out_dir.join("klc_long.csv")).map_err(Error::from)?;
    long.write_record([
        "env",
        "algo",
        "latent",
        "seed",
        "epoch",
        "klc",
        "handled_cumulative",
    ])?;

    // (env, latent) -> algo -> one KLC series per seed
    let mut groups: BTreeMap<(String, usize), BTreeMap<String, Vec<Vec<KlcRow>>>> =
        BTreeMap::new();
    for cell in &cells {
        let rows = read_klc_csv(&cell.dir.join("klc.csv"))?;
        for r in &rows {
            long.write_record([
                cell.env.clone(),
                cell.algo.clone(),
                cell.latent.to_string(),
                cell.seed.to_string(),
                r.epoch.to_string(),
                format!("{}", r.klc),
                r.handled_cumulative.to_string(),
            ])?;
        }
        groups
            .entry((cell.env.clone(), cell.latent))
            .or_default()
            .entry(cell.algo.clone())
            .or_default()
            .push(rows);
    }
    long.flush().map_err(|e| Error::io(out_dir, e))?;
    written.push(out_dir.join("klc_long.csv"));

    for ((env, latent), per_algo) in &groups {
        let curves = aggregate_curves(per_algo);
        if curves.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("klc_{env}_l{latent}.svg"));
        write_text(&path, &klc_chart(env, *latent, &curves))?;
        written.push(path);
    }

    for cell in &cells {
        let states_path = cell.dir.join("true_states.csv");
        if !states_path.is_file() {
            continue;
        }
        let states = read_true_states_csv(&states_path)?;
        if states.is_empty() {
            continue;
        }
        let path = out_dir.join(format!(
            "scatter_{}_{}_l{}_s{}.svg",
            cell.env, cell.algo, cell.latent, cell.seed
        ));
        write_text(&path, &scatter_chart(cell, &states))?;
        written.push(path);
    }
    Ok(written)
}

/// Fraction of episodes whose final object position is exactly the initial
/// pose (an object that was never grabbed never moves).
pub fn fraction_at_initial_pose(states: &[StateRow]) -> f64 {
    if states.is_empty() {
        return f64::NAN;
    }
    let at_initial = states
        .iter()
        .filter(|s| s.x == INITIAL_POS[0] && s.y == INITIAL_POS[1])
        .count();
    at_initial as f64 / states.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serialize::write_klc_csv;

    fn fake_cell(root: &Path, env: &str, algo: &str, latent: usize, seed: u64, klc: &[f64]) {
        let dir = root.join(env).join(algo).join(latent.to_string()).join(seed.to_string());
        std::fs::create_dir_all(&dir).unwrap();
        let rows: Vec<KlcRow> = klc
            .iter()
            .enumerate()
            .map(|(i, &k)| KlcRow {
                epoch: i,
                klc: k,
                handled_cumulative: i as u64,
            })
            .collect();
        write_klc_csv(&dir.join("klc.csv"), &rows).unwrap();
    }

    fn fake_states(root: &Path, env: &str, algo: &str, latent: usize, seed: u64, rows: &str) {
        let dir = root.join(env).join(algo).join(latent.to_string()).join(seed.to_string());
        std::fs::write(
            dir.join("true_states.csv"),
            format!("episode,x,y,angle,handled\n{rows}"),
        )
        .unwrap();
    }

    #[test]
    fn empty_tree_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(dir.path(), &dir.path().join("plots")).is_err());
    }

    #[test]
    fn single_seed_curve_has_no_band() {
        let dir = tempfile::tempdir().unwrap();
        fake_cell(dir.path(), "armball", "rpe", 2, 1, &[5.0, 4.0, 3.0]);
        let out = dir.path().join("plots");
        emit_plots(dir.path(), &out).unwrap();
        let svg = std::fs::read_to_string(out.join("klc_armball_l2.svg")).unwrap();
        assert!(!svg.contains("<polygon"));
        assert!(svg.contains("single seed"));
    }

    #[test]
    fn three_seeds_get_min_max_band_and_legend_says_so() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 1..=3 {
            fake_cell(dir.path(), "armball", "rpe", 2, seed, &[5.0 + seed as f64, 4.0, 3.0]);
        }
        let out = dir.path().join("plots");
        emit_plots(dir.path(), &out).unwrap();
        let svg = std::fs::read_to_string(out.join("klc_armball_l2.svg")).unwrap();
        assert!(svg.contains("<polygon"));
        assert!(svg.contains("band: min/max, 3 seeds"));
    }

    #[test]
    fn five_seeds_get_a_confidence_band() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 1..=5 {
            fake_cell(dir.path(), "armball", "rge-efr", 2, seed, &[5.0, 4.0 + seed as f64, 3.0]);
        }
        let out = dir.path().join("plots");
        emit_plots(dir.path(), &out).unwrap();
        let svg = std::fs::read_to_string(out.join("klc_armball_l2.svg")).unwrap();
        assert!(svg.contains("band: 90% CI, 5 seeds"));
    }

    #[test]
    fn aggregate_csv_has_one_row_per_epoch_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        fake_cell(dir.path(), "armball", "rpe", 2, 1, &[5.0, 4.0, 3.0]);
        fake_cell(dir.path(), "armball", "rge-efr", 2, 1, &[5.0, 4.0]);
        fake_cell(dir.path(), "armarrow", "rpe", 3, 2, &[6.0; 7]);
        let out = dir.path().join("plots");
        emit_plots(dir.path(), &out).unwrap();
        let csv = std::fs::read_to_string(out.join("klc_long.csv")).unwrap();
        let data_rows = csv.lines().count() - 1;
        assert_eq!(data_rows, 3 + 2 + 7);
        assert!(csv.starts_with("env,algo,latent,seed,epoch,klc,handled_cumulative\n"));
    }

    #[test]
    fn mean_and_minmax_band_match_hand_computation() {
        let mut per_algo: BTreeMap<String, Vec<Vec<KlcRow>>> = BTreeMap::new();
        let series = |vals: &[f64]| -> Vec<KlcRow> {
            vals.iter()
                .enumerate()
                .map(|(i, &k)| KlcRow {
                    epoch: i,
                    klc: k,
                    handled_cumulative: 0,
                })
                .collect()
        };
        per_algo.insert(
            "rpe".into(),
            vec![series(&[1.0, 2.0]), series(&[3.0, 6.0]), series(&[2.0, 4.0])],
        );
        let curves = aggregate_curves(&per_algo);
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].band_label, "band: min/max, 3 seeds");
        assert_eq!(curves[0].mean, vec![2.0, 4.0]);
        let (lo, hi) = curves[0].band.as_ref().unwrap();
        assert_eq!(lo, &vec![1.0, 2.0]);
        assert_eq!(hi, &vec![3.0, 6.0]);
    }

    #[test]
    fn uneven_run_lengths_truncate_to_the_shortest() {
        let mut per_algo: BTreeMap<String, Vec<Vec<KlcRow>>> = BTreeMap::new();
        let series = |n: usize| -> Vec<KlcRow> {
            (0..n)
                .map(|i| KlcRow {
                    epoch: i,
                    klc: 1.0,
                    handled_cumulative: 0,
                })
                .collect()
        };
        per_algo.insert("rpe".into(), vec![series(5), series(3)]);
        let curves = aggregate_curves(&per_algo);
        assert_eq!(curves[0].mean.len(), 3);
    }

    #[test]
    fn scatter_marks_unmoved_episodes_at_the_initial_pose() {
        let dir = tempfile::tempdir().unwrap();
        fake_cell(dir.path(), "armball", "rpe", 2, 1, &[5.0, 4.0, 3.0]);
        fake_states(
            dir.path(),
            "armball",
            "rpe",
            2,
            1,
            "0,0.6,0.6,0,false\n1,0.6,0.6,0,false\n2,-0.3,0.2,0,true\n",
        );
        let out = dir.path().join("plots");
        let written = emit_plots(dir.path(), &out).unwrap();
        let scatter = out.join("scatter_armball_rpe_l2_s1.svg");
        assert!(written.contains(&scatter));
        let states = read_true_states_csv(
            &dir.path()
                .join("armball/rpe/2/1/true_states.csv"),
        )
        .unwrap();
        let frac = fraction_at_initial_pose(&states);
        assert!((frac - 2.0 / 3.0).abs() < 1e-15);
        let moved = states.iter().filter(|s| s.handled).count();
        assert_eq!(states.len() - moved, 2);
        let svg = std::fs::read_to_string(&scatter).unwrap();
        assert!(svg.contains("3 episodes, 1 moved the object"));
    }
}
