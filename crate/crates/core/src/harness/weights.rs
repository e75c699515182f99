//! Per-column statistics of learned combination weights `b`.
//!
//! One CSV row per (block, role, stack column). A column of a v1 weight is
//! a single scalar; a column of a v2/v3 weight has `d` entries.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const WEIGHTS_HEADER: &str = "block,role,column,count,median,p05,p95";

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub block: String,
    pub role: String,
    pub column: usize,
    pub count: usize,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

/// Percentile `q ∈ [0, 1]` of unsorted values with linear interpolation
/// between order statistics at position `q·(n − 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Splits `block3.grn_q.b` into `("block3", "grn_q")`.
fn grn_name(name: &str) -> Option<(&str, &str)> {
    let stem = name.strip_suffix(".b")?;
    let (block, role) = stem.split_once('.')?;
    role.contains("grn").then_some((block, role))
}

pub fn weight_stats(ck: &Checkpoint) -> Result<Vec<ColumnStats>> {
    let mut out = Vec::new();
    for rec in &ck.records {
        let Some((block, role)) = grn_name(&rec.name) else {
            continue;
        };
        let b = &rec.value;
        let columns: Vec<Vec<f64>> = match b.rank() {
            1 => b.data().iter().map(|&x| vec![x]).collect(),
            2 => (0..b.cols()).map(|j| b.column(j)).collect(),
            r => {
                return Err(Error::Checkpoint(format!("{} has rank {r}; expected 1 or 2", rec.name)));
            }
        };
        for (j, col) in columns.iter().enumerate() {
            out.push(ColumnStats {
                block: block.to_string(),
                role: role.to_string(),
                column: j,
                count: col.len(),
                median: percentile(col, 0.5),
                p05: percentile(col, 0.05),
                p95: percentile(col, 0.95),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no combination weights".into()));
    }
    Ok(out)
}

pub fn stats_csv(stats: &[ColumnStats]) -> String {
    let mut s = String::from(WEIGHTS_HEADER);
    s.push('\n');
    for c in stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.16e},{:.16e},{:.16e}",
            c.block, c.role, c.column, c.count, c.median, c.p05, c.p95
        );
    }
    s
}

pub fn dump_weights(checkpoint: &Path) -> Result<String> {
    Ok(stats_csv(&weight_stats(&Checkpoint::load(checkpoint)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::dca::{LmConfig, LmModel};
    use crate::grn::{build_linear_model, Arch, LinearModelSpec};
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    /// Independent oracle: selection instead of a full sort.
    fn select_percentile(values: &[f64], q: f64) -> f64 {
        let n = values.len();
        let pos = q * (n - 1) as f64;
        let k = pos.floor() as usize;
        let mut v = values.to_vec();
        let (_, lo, rest) = v.select_nth_unstable_by(k, f64::total_cmp);
        let lo = *lo;
        let frac = pos - k as f64;
        if frac == 0.0 {
            return lo;
        }
        let hi = rest.iter().copied().fold(f64::INFINITY, f64::min);
        lo + frac * (hi - lo)
    }

    #[test]
    fn fresh_init_is_all_ones() {
        let cfg = LmConfig {
            arch: Arch::Dca,
            vocab: 16,
            d: 8,
            heads: 2,
            blocks: 2,
            max_seq: 4,
            k: None,
            init_std: 0.02,
            shared_qkv_norm: true,
        };
        let m = LmModel::new(cfg, &mut Rng::new(1)).unwrap();
        let stats = weight_stats(&Checkpoint::from_store(&m.store)).unwrap();
        assert!(!stats.is_empty());
        for s in &stats {
            assert_eq!((s.median, s.p05, s.p95, s.count), (1.0, 1.0, 1.0, 8));
        }
        assert!(stats.iter().any(|s| s.block == "out" && s.role == "grn"));
        assert!(stats.iter().any(|s| s.block == "block2" && s.role == "grn_v"));
    }

    #[test]
    fn v1_columns_are_scalars() {
        let spec = LinearModelSpec::new(Arch::V1, 6, vec![1; 3]);
        let mut net = build_linear_model(spec, &mut Rng::new(2)).unwrap();
        let id = net.store.id("layer2.grn.b").unwrap();
        net.store.set(id, Tensor::vector(vec![0.5, 2.0])).unwrap();
        let stats = weight_stats(&Checkpoint::from_store(&net.store)).unwrap();
        let l2: Vec<_> = stats.iter().filter(|s| s.block == "layer2").collect();
        assert_eq!(l2.len(), 2);
        assert_eq!((l2[1].count, l2[1].median, l2[1].p05, l2[1].p95), (1, 2.0, 2.0, 2.0));
        let csv = stats_csv(&stats);
        assert!(csv.starts_with(WEIGHTS_HEADER));
        assert_eq!(csv.lines().count(), stats.len() + 1);
    }

    #[test]
    fn checkpoint_without_grn_rejected() {
        let spec = LinearModelSpec::new(Arch::ResNet, 4, vec![1; 2]);
        let net = build_linear_model(spec, &mut Rng::new(3)).unwrap();
        assert!(matches!(weight_stats(&Checkpoint::from_store(&net.store)), Err(Error::Checkpoint(_))));
        assert!(weight_stats(&Checkpoint::from_store(&ParamStore::new())).is_err());
    }

    #[test]
    fn known_percentiles() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.05), 1.2);
        assert!((percentile(&v, 0.95) - 4.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn percentile_matches_selection_oracle(
            v in prop::collection::vec(-10.0f64..10.0, 1..60),
            q in 0.0f64..=1.0,
        ) {
            let a = percentile(&v, q);
            let b = select_percentile(&v, q);
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}
