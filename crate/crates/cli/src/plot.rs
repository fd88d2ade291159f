//! Whitespace-separated data files for gnuplot-style tools.

use std::fmt::Write;

use nclab_core::io::{self, fmt_f64, Table};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Rate grid (σ rows, d/n columns), then an overlay block.
    Sweep,
    /// `epoch nc1 nc2_h nc2_w nc3`.
    Trajectory,
}

pub fn plot_data(table: &Table, kind: PlotKind) -> Result<String, CliError> {
    match kind {
        PlotKind::Sweep => sweep_grid(table),
        PlotKind::Trajectory => trajectory_series(table),
    }
}

fn distinct_sorted(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn sweep_grid(t: &Table) -> Result<String, CliError> {
    t.expect_header(io::SWEEP_HEADER)?;
    let d = t.column_f64("d")?;
    let n = t.column_f64("n")?;
    let sigma = t.column_f64("sigma")?;
    let rate = t.column_f64("rate")?;
    let union = t.column_f64("union_sigma_star")?;
    let gordon = t.column_f64("gordon_min_d_over_n")?;
    let ratio: Vec<f64> = d.iter().zip(&n).map(|(d, n)| d / n).collect();
    let (ratios, sigmas) = (distinct_sorted(&ratio), distinct_sorted(&sigma));
    let cell = |r: f64, s: f64| (0..ratio.len()).find(|&i| ratio[i] == r && sigma[i] == s);

    let mut out = String::new();
    writeln!(out, "# rate: rows sigma, columns d/n").unwrap();
    write!(out, "# sigma").unwrap();
    for r in &ratios {
        write!(out, " {}", fmt_f64(*r)).unwrap();
    }
    out.push('\n');
    for &s in &sigmas {
        out.push_str(&fmt_f64(s));
        for &r in &ratios {
            let v = cell(r, s).map_or(f64::NAN, |i| rate[i]);
            write!(out, " {}", fmt_f64(v)).unwrap();
        }
        out.push('\n');
    }
    out.push_str("\n\n# d/n union_sigma_star gordon_min_d_over_n\n");
    for &r in &ratios {
        let i = (0..ratio.len()).find(|&i| ratio[i] == r).expect("ratio came from the table");
        writeln!(out, "{} {} {}", fmt_f64(r), fmt_f64(union[i]), fmt_f64(gordon[i])).unwrap();
    }
    Ok(out)
}

fn trajectory_series(t: &Table) -> Result<String, CliError> {
    t.expect_header(io::TRAJECTORY_HEADER)?;
    let mut out = String::from("# epoch nc1 nc2_h nc2_w nc3\n");
    for row in &t.rows {
        let epoch: usize = row[0].parse().map_err(|_| CliError::Config(format!("bad epoch {:?}", row[0])))?;
        let cols: Vec<String> = [2, 3, 4, 5].iter().map(|&j| io::parse_f64(&row[j]).map(fmt_f64)).collect::<Result<_, _>>()?;
        out.push_str(&epoch.to_string());
        out.push(' ');
        out.push_str(&cols.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nclab_core::feasibility::{gordon_threshold, SweepRow};

    fn row(d: usize, sigma: f64, rate: f64) -> SweepRow {
        SweepRow {
            d,
            n: 300,
            k: 2,
            sigma,
            trials: 10,
            successes: (rate * 10.0) as usize,
            failures: 0,
            rate,
            union_sigma_star: 0.01 * d as f64,
            gordon_min_d_over_n: gordon_threshold(300, 2),
        }
    }

    #[test]
    fn sweep_reshapes_to_grid() {
        let rows = vec![row(330, 0.18, 1.0), row(330, 1.42, 0.0), row(600, 0.18, 1.0), row(600, 1.42, 0.5)];
        let t = Table::read(io::sweep_table(&rows).to_csv_string().as_bytes()).unwrap();
        let s = plot_data(&t, PlotKind::Sweep).unwrap();
        let lines: Vec<&str> = s.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
        assert_eq!(lines.len(), 4);
        let high: Vec<f64> = lines[1].split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(high, vec![1.42, 0.0, 0.5]);
        let overlay: Vec<f64> = lines[2].split(' ').map(|v| v.parse().unwrap()).collect();
        assert!((overlay[2] - 1.8198).abs() < 1e-3);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let t = Table::read("epoch,objective\n0,1\n".as_bytes()).unwrap();
        assert!(matches!(plot_data(&t, PlotKind::Sweep), Err(CliError::Config(_))));
        assert!(plot_data(&t, PlotKind::Trajectory).is_err());
    }
}
