//! CSV and SVG artifact writers.
//!
//! Floats are written with shortest round-trip formatting, so identical runs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::report::{ComparisonTable, RidgeRow, RunReport};
use crate::world::SimulationRecord;
use crate::SimError;

/// 67% mass quantile of the χ² distribution with 2 degrees of freedom:
/// `−2 ln(1 − 0.67)`.
const CHI2_2DOF_67: f64 = 2.2173405823835146;

fn fnum(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// `trajectory.csv`: one row per `(step, robot)` with pose, controls and the
/// position measurement.
pub fn write_trajectory_csv(record: &SimulationRecord, path: &Path) -> Result<(), SimError> {
    let mut out = String::from("k,robot,x,y,theta,u_alpha,u_r,u_beta,z_x,z_y\n");
    let n = record.config.robot_count;
    for k in 1..=record.config.steps {
        for i in 0..n {
            let p = record.poses[k][i];
            let u = record.controls[k - 1][i];
            let z = &record.position_measurements[k - 1];
            let _ = writeln!(
                out,
                "{k},{i},{},{},{},{},{},{},{},{}",
                fnum(p.x),
                fnum(p.y),
                fnum(p.theta),
                fnum(u.alpha),
                fnum(u.r),
                fnum(u.beta),
                fnum(z[2 * i]),
                fnum(z[2 * i + 1]),
            );
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `auxiliary.csv`: one row per `(step, pair)` for the window steps.
pub fn write_auxiliary_csv(record: &SimulationRecord, path: &Path) -> Result<(), SimError> {
    let mut out = String::from("k,pair,range,dtheta\n");
    for (idx, aux) in record.auxiliary_measurements.iter().enumerate() {
        if let Some(values) = aux {
            let k = idx + 1;
            for p in 0..values.len() / 2 {
                let _ = writeln!(
                    out,
                    "{k},{p},{},{}",
                    fnum(values[2 * p]),
                    fnum(values[2 * p + 1])
                );
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `beliefs.csv`: posterior summaries per `(step, robot)`.
pub fn write_beliefs_csv(report: &RunReport, path: &Path) -> Result<(), SimError> {
    let mut out =
        String::from("k,robot,mean_x,mean_y,mean_theta,cov_xx,cov_xy,cov_yy,cov_tt,rank\n");
    for b in &report.beliefs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            b.k,
            b.robot,
            fnum(b.mean[0]),
            fnum(b.mean[1]),
            fnum(b.mean[2]),
            fnum(b.cov[0]),
            fnum(b.cov[1]),
            fnum(b.cov[2]),
            fnum(b.cov[3]),
            b.rank
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `ridge.csv`: the λ sweep table.
pub fn write_ridge_csv(rows: &[RidgeRow], path: &Path) -> Result<(), SimError> {
    let mut out = String::from("lambda,kappa,logz_mean,logz_std,failures\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fnum(r.lambda),
            fnum(r.kappa),
            fnum(r.logz_mean),
            fnum(r.logz_std),
            r.failures
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// `models.csv`: the hypothesis comparison table with the argmax marked.
pub fn write_models_csv(table: &ComparisonTable, path: &Path) -> Result<(), SimError> {
    let mut out = String::from("hypothesis,logz_mean,logz_std,argmax\n");
    let best = table.argmax_mean();
    for (h, label) in table.labels.iter().enumerate() {
        let (mean, std) = table.mean_std(h);
        let _ = writeln!(
            out,
            "{label},{},{},{}",
            fnum(mean),
            fnum(std),
            if h == best { 1 } else { 0 }
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Minimal SVG: true trajectories as polylines, posterior means as dots and
/// 67% confidence ellipses from the per-robot position covariance.
pub fn write_beliefs_svg(
    record: &SimulationRecord,
    report: &RunReport,
    path: &Path,
) -> Result<(), SimError> {
    let n = record.config.robot_count;
    // World bounds with margin.
    let mut min_x = f64::MAX;
    let mut max_x = f64::MIN;
    let mut min_y = f64::MAX;
    let mut max_y = f64::MIN;
    for step in &record.poses {
        for p in step {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
    }
    let margin = 1.0;
    min_x -= margin;
    max_x += margin;
    min_y -= margin;
    max_y += margin;
    let width = 900.0;
    let height = 600.0;
    let sx = width / (max_x - min_x);
    let sy = height / (max_y - min_y);
    let s = sx.min(sy);
    let to_px = |x: f64, y: f64| ((x - min_x) * s, height - (y - min_y) * s);

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    for i in 0..n {
        let color = palette[i % palette.len()];
        let mut pts = String::new();
        for step in &record.poses {
            let (px, py) = to_px(step[i].x, step[i].y);
            let _ = write!(pts, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" opacity=\"0.6\"/>",
            pts.trim_end()
        );
    }

    let scale = CHI2_2DOF_67.sqrt();
    for b in &report.beliefs {
        let color = palette[b.robot % palette.len()];
        let (cx, cy) = to_px(b.mean[0], b.mean[1]);
        // Eigendecomposition of the 2x2 position covariance.
        let (a, bxy, c) = (b.cov[0], b.cov[1], b.cov[2]);
        let tr = a + c;
        let det = a * c - bxy * bxy;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let e1 = (tr / 2.0 + disc).max(0.0);
        let e2 = (tr / 2.0 - disc).max(0.0);
        let angle = if bxy.abs() < 1e-15 && a >= c {
            0.0
        } else if bxy.abs() < 1e-15 {
            std::f64::consts::FRAC_PI_2
        } else {
            (e1 - a).atan2(bxy)
        };
        let rx = (e1.sqrt() * scale * s).max(0.3);
        let ry = (e2.sqrt() * scale * s).max(0.3);
        let deg = -angle.to_degrees();
        let _ = writeln!(
            svg,
            "<ellipse cx=\"{cx:.2}\" cy=\"{cy:.2}\" rx=\"{rx:.2}\" ry=\"{ry:.2}\" transform=\"rotate({deg:.2} {cx:.2} {cy:.2})\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.8\"/>"
        );
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"1.2\" fill=\"{color}\"/>"
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}
