//! Grid sweeps of thresholds and gain lower bounds, emitted as CSV.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{gains, thresholds, SpectrumSpec};

pub const CSV_HEADER: &str = "d,r_star,kappa,thr_v1,thr_v2,thr_v3,G1_lb,G2_lb,G3_lb";

/// Points are visited `d`-major, then `r_star`, then `κ`. `λmin` is
/// `κ·λmax` at every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure4Grid {
    pub ds: Vec<usize>,
    pub r_stars: Vec<usize>,
    pub kappas: Vec<f64>,
    pub lambda_max: f64,
}

impl Figure4Grid {
    /// Fixed `λmin = 5`, `λmax = 10`, varying collective rank.
    pub fn rank_panel() -> Self {
        Figure4Grid {
            ds: vec![100, 500],
            r_stars: (1..=9).map(|i| 10 * i).collect(),
            kappas: vec![0.5],
            lambda_max: 10.0,
        }
    }

    /// Fixed `λmax = 10`, `r_star = 50`, varying `κ`.
    pub fn kappa_panel() -> Self {
        Figure4Grid {
            ds: vec![100, 500],
            r_stars: vec![50],
            kappas: (1..=19).map(|i| i as f64 / 20.0).collect(),
            lambda_max: 10.0,
        }
    }

    fn points(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.ds.len() * self.r_stars.len() * self.kappas.len());
        for &d in &self.ds {
            for &r in &self.r_stars {
                for &k in &self.kappas {
                    out.push((d, r, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub d: usize,
    pub r_star: usize,
    pub kappa: f64,
    pub thr_v1: f64,
    pub thr_v2: f64,
    pub thr_v3: f64,
    pub g1_lb: f64,
    pub g2_lb: f64,
    pub g3_lb: f64,
}

impl SweepRow {
    pub fn compute(d: usize, r_star: usize, kappa: f64, lambda_max: f64) -> Result<Self> {
        let spec = SpectrumSpec::new(d, kappa * lambda_max, lambda_max, r_star, 1)?;
        let t = thresholds(&spec)?;
        let g = gains(&spec)?;
        Ok(SweepRow {
            d,
            r_star,
            kappa,
            thr_v1: t.thr_v1,
            thr_v2: t.thr_v2,
            thr_v3: t.thr_v3,
            g1_lb: g.g1_lb,
            g2_lb: g.g2_lb,
            g3_lb: g.g3_lb,
        })
    }

    /// One CSV line; floats carry 17 significant digits so parsing
    /// recovers them exactly.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.d, self.r_star, self.kappa, self.thr_v1, self.thr_v2, self.thr_v3, self.g1_lb, self.g2_lb, self.g3_lb
        )
    }
}

/// Evaluates every grid point, in parallel, returning rows in grid order.
pub fn figure4_sweep(grid: &Figure4Grid) -> Result<Vec<SweepRow>> {
    if grid.ds.is_empty() || grid.r_stars.is_empty() || grid.kappas.is_empty() {
        return Err(Error::InvalidArgument("every sweep axis needs at least one value".into()));
    }
    grid.points()
        .into_par_iter()
        .map(|(d, r, k)| SweepRow::compute(d, r, k, grid.lambda_max))
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::with_capacity(CSV_HEADER.len() + 1 + rows.len() * 200);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidArgument("sweep CSV header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::InvalidArgument(format!("sweep CSV line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("expected 9 fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad("bad float"));
            Ok(SweepRow {
                d: int(f[0])?,
                r_star: int(f[1])?,
                kappa: float(f[2])?,
                thr_v1: float(f[3])?,
                thr_v2: float(f[4])?,
                thr_v3: float(f[5])?,
                g1_lb: float(f[6])?,
                g2_lb: float(f[7])?,
                g3_lb: float(f[8])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_grid() {
        let g = Figure4Grid {
            ds: vec![100],
            r_stars: vec![30],
            kappas: vec![0.5],
            lambda_max: 10.0,
        };
        let rows = figure4_sweep(&g).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].d, rows[0].r_star), (100, 30));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = Figure4Grid::rank_panel();
        let rows = figure4_sweep(&g).unwrap();
        let text = to_csv(&rows);
        assert!(text.starts_with("d,r_star,kappa,thr_v1,thr_v2,thr_v3,G1_lb,G2_lb,G3_lb\n"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, rows);
        for r in &back {
            assert_eq!(SweepRow::compute(r.d, r.r_star, r.kappa, g.lambda_max).unwrap(), *r);
        }
    }

    #[test]
    fn grid_order_is_d_major() {
        let rows = figure4_sweep(&Figure4Grid::rank_panel()).unwrap();
        assert_eq!(rows.len(), 18);
        assert!(rows[..9].iter().all(|r| r.d == 100));
        assert_eq!(rows[1].r_star, 20);
    }

    #[test]
    fn empty_axis_and_invalid_point_rejected() {
        let mut g = Figure4Grid::rank_panel();
        g.kappas.clear();
        assert!(figure4_sweep(&g).is_err());
        let mut g = Figure4Grid::rank_panel();
        g.r_stars.push(100);
        assert!(figure4_sweep(&g).is_err());
    }
}
