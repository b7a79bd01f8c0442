//! File writers: trajectory CSV, spectral report CSV, TOML summaries and a
//! small SVG line plot.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::spectral::EquilibriumReport;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::config("<summary>", e.to_string()))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_toml(value)?)
}

/// `t,u1,u2,V,x1,y1,z1,...,xp,yp,zp`.
pub fn trajectory_header(p: usize) -> String {
    let mut h = String::from("t,u1,u2,V");
    for i in 1..=p {
        let _ = write!(h, ",x{i},y{i},z{i}");
    }
    h
}

/// Renders one row per sample. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    let p = traj.freqs.len();
    writeln!(out, "{}", trajectory_header(p))?;
    let mut line = String::with_capacity(32 * (4 + 3 * p));
    for k in 0..traj.len() {
        line.clear();
        let u = traj.controls[k];
        let _ = write!(line, "{:e},{:e},{:e},{:e}", traj.times[k], u.u1, u.u2, traj.lyapunov[k]);
        for s in &traj.spins[k] {
            let _ = write!(line, ",{:e},{:e},{:e}", s.x(), s.y(), s.z());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    write_trajectory_csv(traj, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub const SPECTRUM_HEADER: &str = "pattern,branch,re,im,residual,class,hyperbolic";

pub fn write_spectrum_csv<W: Write>(reports: &[EquilibriumReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SPECTRUM_HEADER}")?;
    for r in reports {
        for ((l, b), res) in r.eigenvalues.iter().zip(&r.branches).zip(&r.residuals) {
            let branch = match b {
                crate::spectral::Branch::Plus => "+",
                crate::spectral::Branch::Minus => "-",
            };
            writeln!(
                out,
                "\"{}\",{branch},{:e},{:e},{:e},{},{}",
                r.equilibrium,
                l.re,
                l.im,
                res.norm(),
                r.classification,
                r.hyperbolic
            )?;
        }
    }
    Ok(())
}

pub fn save_spectrum_csv(path: &Path, reports: &[EquilibriumReport]) -> Result<()> {
    let mut w = create(path)?;
    write_spectrum_csv(reports, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Writes a header line and pre-rendered rows.
pub fn save_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut w = create(path)?;
    (|| {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 1500;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Panel<'a> {
    title: &'a str,
    series: Vec<(String, Vec<f64>)>,
}

fn polyline(t: &[f64], y: &[f64], x0: f64, y0: f64, t_range: (f64, f64), y_range: (f64, f64)) -> String {
    let step = t.len().div_ceil(MAX_POINTS).max(1);
    let sx = |v: f64| x0 + (v - t_range.0) / (t_range.1 - t_range.0).max(f64::MIN_POSITIVE) * PANEL_W;
    let sy = |v: f64| y0 + PANEL_H - (v - y_range.0) / (y_range.1 - y_range.0) * PANEL_H;
    let mut pts = String::new();
    let mut idx: Vec<usize> = (0..t.len()).step_by(step).collect();
    if idx.last() != Some(&(t.len() - 1)) {
        idx.push(t.len() - 1);
    }
    for k in idx {
        let _ = write!(pts, "{:.2},{:.2} ", sx(t[k]), sy(y[k]));
    }
    pts.trim_end().to_string()
}

/// Stacked panels of `V(t)`, `z_i(t)` and `u(t)` as a standalone SVG.
pub fn trajectory_svg(traj: &Trajectory) -> String {
    let p = traj.freqs.len();
    let panels = [
        Panel {
            title: "V(t)",
            series: vec![("V".into(), traj.lyapunov.clone())],
        },
        Panel {
            title: "z_i(t)",
            series: (0..p).map(|i| (format!("z{}", i + 1), traj.z_series(i))).collect(),
        },
        Panel {
            title: "u(t)",
            series: vec![
                ("u1".into(), traj.controls.iter().map(|u| u.u1).collect()),
                ("u2".into(), traj.controls.iter().map(|u| u.u2).collect()),
            ],
        },
    ];
    let t_range = (traj.times.first().copied().unwrap_or(0.0), traj.t_final());
    let height = panels.len() as f64 * (PANEL_H + MARGIN) + MARGIN;
    let width = PANEL_W + 2.0 * MARGIN;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (j, panel) in panels.iter().enumerate() {
        let y0 = MARGIN + j as f64 * (PANEL_H + MARGIN);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (_, s) in &panel.series {
            for &v in s {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !(hi > lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN}\" y=\"{y0}\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#888\"/>\n\
             <text x=\"{MARGIN}\" y=\"{:.1}\">{}</text>\n\
             <text x=\"4\" y=\"{:.1}\">{hi:.3}</text>\n\
             <text x=\"4\" y=\"{:.1}\">{lo:.3}</text>",
            y0 - 6.0,
            panel.title,
            y0 + 10.0,
            y0 + PANEL_H,
        );
        for (k, (name, s)) in panel.series.iter().enumerate() {
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"><title>{name}</title></polyline>",
                PALETTE[k % PALETTE.len()],
                polyline(&traj.times, s, MARGIN, y0, t_range, (lo, hi)),
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN}\" y=\"{:.1}\">t from {} to {}</text>\n</svg>",
        height - 12.0,
        t_range.0,
        t_range.1
    );
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, ControlLaw, IntegratorConfig};
    use crate::ensemble::{random_ensemble, WeightVector};

    fn short_run(p: usize) -> Trajectory {
        let s = random_ensemble(2, p, (1.0, 4.0), (0.8, 1.0), WeightVector::unit(p)).unwrap();
        integrate(&s, &ControlLaw::FullSum, &IntegratorConfig::rk4(0.01, 1.0).unwrap(), 10).unwrap()
    }

    #[test]
    fn header_layout() {
        assert_eq!(trajectory_header(2), "t,u1,u2,V,x1,y1,z1,x2,y2,z2");
    }

    #[test]
    fn csv_rows_have_fixed_width() {
        let traj = short_run(3);
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), traj.len() + 1);
        for l in &lines {
            assert_eq!(l.split(',').count(), 4 + 3 * 3);
        }
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[4], traj.spins[0][0].x());
    }

    #[test]
    fn svg_is_standalone() {
        let svg = trajectory_svg(&short_run(2));
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1 + 2 + 2);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_text(&blocker.join("sub/out.csv"), "a").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
