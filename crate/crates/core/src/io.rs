//! CSV tables for experiment outputs and the binary weight container.
//!
//! Floats are written with 17 significant digits so every value reads back
//! bit for bit.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{NcError, Result};
use crate::feasibility::SweepRow;
use crate::networks::{Checkpoint, ShallowNet};
use crate::probes::ProbeReport;
use crate::random_features::Centering;

pub const SWEEP_HEADER: &[&str] =
    &["d", "n", "K", "sigma", "trials", "successes", "rate", "union_sigma_star", "gordon_min_d_over_n"];
pub const TRAJECTORY_HEADER: &[&str] = &["epoch", "objective", "nc1", "nc2_h", "nc2_w", "nc3"];
pub const GENERALIZATION_HEADER: &[&str] =
    &["n", "d", "sigma_over_mu", "f_star", "upper_error", "lower_error", "mc_error", "mc_ci"];
pub const PROBE_HEADER: &[&str] =
    &["probe", "trials", "violations", "empirical_rate", "ci", "theoretical_rate_bound", "solver_failures", "params"];
pub const RANK_HEADER: &[&str] =
    &["n_points", "input_dim", "d1", "trial", "rank", "full_rank", "sigma_min", "sigma_max", "nc_feasible"];

/// `{:.16e}`, with NaN and infinities spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|_| NcError::Format(format!("not a number: {t:?}"))),
    }
}

/// Parsed CSV: `#` comment lines, header, string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NcError::Format(format!("missing column {name:?}")))
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        self.rows.iter().map(|r| parse_f64(&r[j])).collect()
    }

    pub fn expect_header(&self, header: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(header.iter().copied()) {
            return Err(NcError::Format(format!("header {:?} does not match {:?}", self.header, header)));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { comments, header, rows })
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(SWEEP_HEADER);
    for r in rows {
        t.push(vec![
            r.d.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            fmt_f64(r.sigma),
            r.trials.to_string(),
            r.successes.to_string(),
            fmt_f64(r.rate),
            fmt_f64(r.union_sigma_star),
            fmt_f64(r.gordon_min_d_over_n),
        ]);
    }
    t
}

pub fn trajectory_table(trajectory: &[Checkpoint]) -> Table {
    let mut t = Table::new(TRAJECTORY_HEADER);
    for c in trajectory {
        let m = &c.metrics;
        t.push(vec![
            c.epoch.to_string(),
            fmt_f64(c.objective),
            fmt_f64(m.nc1),
            fmt_f64(m.nc2_h),
            fmt_f64(m.nc2_w),
            fmt_f64(m.nc3),
        ]);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationRow {
    pub n: usize,
    pub d: usize,
    pub sigma_over_mu: f64,
    pub f_star: f64,
    pub upper_error: f64,
    pub lower_error: f64,
    pub mc_error: f64,
    pub mc_ci: f64,
}

pub fn generalization_table(rows: &[GeneralizationRow]) -> Table {
    let mut t = Table::new(GENERALIZATION_HEADER);
    for r in rows {
        t.push(vec![
            r.n.to_string(),
            r.d.to_string(),
            fmt_f64(r.sigma_over_mu),
            fmt_f64(r.f_star),
            fmt_f64(r.upper_error),
            fmt_f64(r.lower_error),
            fmt_f64(r.mc_error),
            fmt_f64(r.mc_ci),
        ]);
    }
    t
}

/// Parameters are packed as `key=value` pairs separated by `;`.
pub fn probe_table(reports: &[ProbeReport]) -> Table {
    let mut t = Table::new(PROBE_HEADER);
    for r in reports {
        let params: Vec<String> = r.values.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))).collect();
        t.push(vec![
            r.name.clone(),
            r.trials.to_string(),
            r.violations.to_string(),
            fmt_f64(r.empirical_rate),
            fmt_f64(r.ci),
            r.theoretical_rate_bound.map_or_else(|| "constant-free".to_string(), fmt_f64),
            r.solver_failures.to_string(),
            params.join(";"),
        ]);
    }
    t
}

/// Dense matrix with columns named `c0, c1, ...`.
pub fn matrix_table(m: &DMatrix<f64>) -> Table {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    let mut t = Table { header, ..Default::default() };
    for row in m.row_iter() {
        t.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }
    t
}

/// Square matrix with a `centering=` comment line.
pub fn kernel_table(h: &DMatrix<f64>, centering: Centering, samples: Option<usize>) -> Table {
    let mut t = matrix_table(h);
    t.comments.push(format!("centering={}", centering.name()));
    if let Some(m) = samples {
        t.comments.push(format!("samples={m}"));
    }
    t
}

pub fn table_matrix(t: &Table) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(t.rows.len() * t.header.len());
    for r in &t.rows {
        if r.len() != t.header.len() {
            return Err(NcError::Format("ragged matrix rows".into()));
        }
        for c in r {
            data.push(parse_f64(c)?);
        }
    }
    Ok(DMatrix::from_row_slice(t.rows.len(), t.header.len(), &data))
}

const WEIGHT_MAGIC: &[u8; 4] = b"NCLW";
const WEIGHT_VERSION: u32 = 1;

/// Layout, all little-endian: magic `NCLW`, u32 version, u32 depth, then
/// u64 (rows, cols) for each layer in input-to-output order, then each
/// layer's entries as row-major f64.
pub fn write_weights<W: Write>(net: &ShallowNet, mut out: W) -> Result<()> {
    let layers: Vec<&DMatrix<f64>> = std::iter::once(&net.w1).chain(net.w2.as_ref()).chain(std::iter::once(&net.w)).collect();
    out.write_all(WEIGHT_MAGIC)?;
    out.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for m in &layers {
        out.write_all(&(m.nrows() as u64).to_le_bytes())?;
        out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    }
    for m in &layers {
        for r in m.row_iter() {
            for v in r.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b).map_err(|e| NcError::Format(format!("truncated weight file: {e}")))?;
    Ok(b)
}

pub fn read_weights<R: Read>(mut input: R) -> Result<ShallowNet> {
    if &read_array::<4, _>(&mut input)? != WEIGHT_MAGIC {
        return Err(NcError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != WEIGHT_VERSION {
        return Err(NcError::Format(format!("unsupported version {version}")));
    }
    let depth = u32::from_le_bytes(read_array(&mut input)?) as usize;
    if !(2..=3).contains(&depth) {
        return Err(NcError::Format(format!("depth {depth} not supported")));
    }
    let mut dims = Vec::with_capacity(depth);
    for _ in 0..depth {
        let r = u64::from_le_bytes(read_array(&mut input)?) as usize;
        let c = u64::from_le_bytes(read_array(&mut input)?) as usize;
        if r.checked_mul(c).is_none_or(|e| e > 1 << 32) {
            return Err(NcError::Format("layer too large".into()));
        }
        dims.push((r, c));
    }
    let mut layers = Vec::with_capacity(depth);
    for (r, c) in dims {
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            data.push(f64::from_le_bytes(read_array(&mut input)?));
        }
        layers.push(DMatrix::from_row_slice(r, c, &data));
    }
    let w = layers.pop().expect("depth >= 2");
    let w2 = if depth == 3 { layers.pop() } else { None };
    let w1 = layers.pop().expect("depth >= 2");
    let net = ShallowNet { w1, w2, w };
    net.validate().map_err(|e| NcError::Format(e.to_string()))?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{NcMetrics, NetShape};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn weights_round_trip() {
        for depth in [2, 3] {
            let shape = NetShape { depth, input_dim: 5, hidden_dim: 7, feature_dim: 4, classes: 3 };
            let net = ShallowNet::init(shape, false, RngStream::new(1, 0)).unwrap();
            let mut buf = Vec::new();
            write_weights(&net, &mut buf).unwrap();
            let layers = if depth == 2 { 5 * 4 + 4 * 3 } else { 5 * 7 + 7 * 4 + 4 * 3 };
            assert_eq!(buf.len(), 12 + 16 * depth + 8 * layers);
            assert_eq!(read_weights(buf.as_slice()).unwrap(), net);
        }
    }

    #[test]
    fn weights_header_is_little_endian() {
        let net = ShallowNet { w1: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), w2: None, w: DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]) };
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NCLW");
        assert_eq!(&buf[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[12..20], &[1, 0, 0, 0, 0, 0, 0, 0]);
        // Row-major payload of the classifier starts after W1's two entries.
        let off = 12 + 32 + 16;
        assert_eq!(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), 3.0);
        assert_eq!(f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap()), 4.0);
    }

    #[test]
    fn corrupt_weights_are_rejected() {
        assert!(read_weights(&b"XXXX"[..]).is_err());
        let net = ShallowNet::init(NetShape { depth: 2, input_dim: 3, hidden_dim: 0, feature_dim: 2, classes: 2 }, false, RngStream::new(2, 0)).unwrap();
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_weights(buf.as_slice()), Err(NcError::Format(_))));
    }

    #[test]
    fn trajectory_round_trip() {
        let cp = |epoch, x: f64| Checkpoint {
            epoch,
            objective: x,
            metrics: NcMetrics { nc1: x / 3.0, nc2_h: f64::NAN, nc2_w: 0.1, nc3: 1e-300, degenerate: false },
        };
        let t = trajectory_table(&[cp(0, 1.0 / 7.0), cp(4, 2.5)]);
        let back = Table::read(t.to_csv_string().as_bytes()).unwrap();
        back.expect_header(TRAJECTORY_HEADER).unwrap();
        assert_eq!(back.column_f64("nc1").unwrap()[0], 1.0 / 21.0);
        assert!(back.column_f64("nc2_h").unwrap()[1].is_nan());
        assert_eq!(back.column_f64("nc3").unwrap()[0], 1e-300);
    }

    #[test]
    fn kernel_table_keeps_centering_comment() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let t = kernel_table(&h, Centering::RootTwoOverPi, Some(100));
        let back = Table::read(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back.comments[0], "centering=root_two_over_pi");
        assert_eq!(table_matrix(&back).unwrap(), h);
    }

    #[test]
    fn probe_rows_mark_missing_bounds() {
        let r = ProbeReport {
            name: "jl_angle".into(),
            trials: 10,
            violations: 1,
            values: [("m".to_string(), 3.0)].into_iter().collect(),
            empirical_rate: 0.1,
            ci: 0.09,
            theoretical_rate_bound: None,
            solver_failures: 0,
        };
        let t = probe_table(&[r]);
        assert_eq!(t.rows[0][5], "constant-free");
        assert_eq!(t.rows[0][7], "m=3.0000000000000000e0");
    }

    #[test]
    fn header_mismatch_is_reported() {
        let t = Table::read("a,b\n1,2\n".as_bytes()).unwrap();
        assert!(t.expect_header(SWEEP_HEADER).is_err());
        assert!(t.column_f64("c").is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(x in proptest::num::f64::ANY) {
            let y = parse_f64(&fmt_f64(x)).unwrap();
            prop_assert!(y == x || (x.is_nan() && y.is_nan()));
        }
    }
}
