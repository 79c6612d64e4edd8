//! Pure arithmetic over measured or simulated times: speedups, scaling
//! efficiency, resolution ratios, and overhead percentages.
//!
//! All functions keep full precision; rounding happens only at display time
//! through [`round_half_up`], which table emitters apply at the conventional
//! places (two decimals for speedups, one for percentages).

use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("time argument '{0}' must be positive and finite")]
    NonPositiveTime(&'static str),
    #[error("argument '{0}' must be positive and finite")]
    NonPositive(&'static str),
}

fn check_time(value: f64, name: &'static str) -> Result<(), MetricsError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(MetricsError::NonPositiveTime(name))
    }
}

/// `t_base / t_new`: how many times faster the new time is.
pub fn speedup(t_base: f64, t_new: f64) -> Result<f64, MetricsError> {
    check_time(t_base, "t_base")?;
    check_time(t_new, "t_new")?;
    Ok(t_base / t_new)
}

/// Scaling efficiency in percent: `100 * t1 / (tp * p)`. Superlinear values
/// above 100 are reported as-is.
pub fn efficiency(t1: f64, tp: f64, p: u32) -> Result<f64, MetricsError> {
    check_time(t1, "t1")?;
    check_time(tp, "tp")?;
    if p == 0 {
        return Err(MetricsError::NonPositive("p"));
    }
    Ok(100.0 * t1 / (tp * f64::from(p)))
}

/// Volume growth from a per-side voxel resolution change: `(r_new/r_base)^3`.
pub fn resolution_ratio(r_new: f64, r_base: f64) -> Result<f64, MetricsError> {
    for (v, name) in [(r_new, "r_new"), (r_base, "r_base")] {
        if !(v.is_finite() && v > 0.0) {
            return Err(MetricsError::NonPositive(name));
        }
    }
    Ok((r_new / r_base).powi(3))
}

/// Relative slowdown in percent: `100 * (t_with - t_without) / t_without`.
pub fn overhead_pct(t_with: f64, t_without: f64) -> Result<f64, MetricsError> {
    check_time(t_with, "t_with")?;
    check_time(t_without, "t_without")?;
    Ok(100.0 * (t_with - t_without) / t_without)
}

/// Rounds half away from zero at `decimals` places: 1.965 -> 1.97, not the
/// half-to-even 1.96.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let factor = 10f64.powi(decimals as i32);
    (x.abs() * factor + 0.5).floor() / factor * x.signum()
}

/// One row of a strong-scaling table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub ranks: u32,
    pub nodes: u32,
    pub time_s: f64,
    /// Previous row's time over this row's; `None` for the first row, whose
    /// cell stays empty in rendered tables.
    pub speedup_prev: Option<f64>,
    pub efficiency_pct: f64,
}

/// Builds a scaling table from `(ranks, nodes, time_s)` measurements.
///
/// Efficiency is relative to the first row, which is treated as perfectly
/// efficient: the 1-rank-equivalent time is `rows[0].time_s * rows[0].ranks`
/// (exactly `t1` when the table starts at one rank, as scaling tables conventionally do).
pub fn scaling_table(rows: &[(u32, u32, f64)]) -> Result<Vec<ScalingRow>, MetricsError> {
    let &(first_ranks, _, first_time) = rows.first().ok_or(MetricsError::NonPositive("rows"))?;
    check_time(first_time, "time_s")?;
    if first_ranks == 0 {
        return Err(MetricsError::NonPositive("ranks"));
    }
    let t1 = first_time * f64::from(first_ranks);
    let mut out = Vec::with_capacity(rows.len());
    let mut prev_time = None;
    for &(ranks, nodes, time_s) in rows {
        let speedup_prev = prev_time.map(|p| speedup(p, time_s)).transpose()?;
        out.push(ScalingRow {
            ranks,
            nodes,
            time_s,
            speedup_prev,
            efficiency_pct: efficiency(t1, time_s, ranks)?,
        });
        prev_time = Some(time_s);
    }
    Ok(out)
}

/// Renders a scaling table as CSV: `ranks,epoch_s,speedup_prev,efficiency_pct`,
/// speedups at two decimals, efficiencies at one, and an empty speedup cell
/// on the first row.
pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ranks", "epoch_s", "speedup_prev", "efficiency_pct"]).expect("csv header");
    for r in rows {
        w.write_record([
            &format!("{}", r.ranks),
            &format!("{}", r.time_s),
            &r.speedup_prev.map(|s| format!("{:.2}", round_half_up(s, 2))).unwrap_or_default(),
            &format!("{:.1}", round_half_up(r.efficiency_pct, 1)),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference strong-scaling measurements used as oracles throughout:
    /// seconds per epoch at 1/2/4/8/16 accelerators.
    const TIMES: [(u32, u32, f64); 5] = [
        (1, 1, 6439.93),
        (2, 1, 3268.65),
        (4, 1, 1694.73),
        (8, 2, 843.92),
        (16, 4, 461.23),
    ];

    #[test]
    fn speedup_matches_reference_cells() {
        let cases = [
            (6439.93, 3268.65, 1.97),
            (3268.65, 1694.73, 1.93),
            (1694.73, 843.92, 2.01),
            (843.92, 461.23, 1.83),
        ];
        for (base, new, expected) in cases {
            assert_eq!(round_half_up(speedup(base, new).unwrap(), 2), expected);
        }
        assert_eq!(speedup(5.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn efficiency_matches_reference_cells() {
        let cases = [
            (3268.65, 2, 98.5),
            (1694.73, 4, 95.0),
            (843.92, 8, 95.4),
            (461.23, 16, 87.3),
        ];
        for (tp, p, expected) in cases {
            assert_eq!(round_half_up(efficiency(6439.93, tp, p).unwrap(), 1), expected);
        }
        assert_eq!(efficiency(7.5, 7.5, 1).unwrap(), 100.0);
    }

    #[test]
    fn composed_epoch_speedups() {
        // Epoch times 590/150/76/40 s against the 590 s baseline.
        for (t, expected) in [(150.0, 3.93), (76.0, 7.76), (40.0, 14.75)] {
            assert_eq!(round_half_up(speedup(590.0, t).unwrap(), 2), expected);
        }
    }

    #[test]
    fn resolution_ratios() {
        let r = resolution_ratio(192.0, 144.0).unwrap();
        assert!((r - 2.3703703703703702).abs() < 1e-12);
        assert_eq!(round_half_up(r, 1), 2.4);
        assert_eq!(resolution_ratio(144.0, 144.0).unwrap(), 1.0);
        assert_eq!(resolution_ratio(96.0, 64.0).unwrap(), 3.375);
    }

    #[test]
    fn overhead_percentages() {
        assert_eq!(overhead_pct(5.0, 5.0).unwrap(), 0.0);
        let v = overhead_pct(590.0 * 1.137, 590.0).unwrap();
        assert_eq!(round_half_up(v, 1), 13.7);
    }

    #[test]
    fn speedups_compose() {
        let ab = speedup(100.0, 37.0).unwrap();
        let bc = speedup(37.0, 11.5).unwrap();
        let ac = speedup(100.0, 11.5).unwrap();
        assert!((ab * bc - ac).abs() < 1e-12 * ac);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_up(1.965, 2), 1.97);
        assert_eq!(round_half_up(2.5, 0), 3.0);
        assert_eq!(round_half_up(-1.25, 1), -1.3);
        assert_eq!(round_half_up(0.9449, 1), 0.9);
    }

    #[test]
    fn non_positive_inputs_are_rejected() {
        assert_eq!(speedup(0.0, 1.0).unwrap_err(), MetricsError::NonPositiveTime("t_base"));
        assert_eq!(speedup(1.0, f64::NAN).unwrap_err(), MetricsError::NonPositiveTime("t_new"));
        assert_eq!(efficiency(1.0, 1.0, 0).unwrap_err(), MetricsError::NonPositive("p"));
        assert_eq!(
            resolution_ratio(-2.0, 1.0).unwrap_err(),
            MetricsError::NonPositive("r_new")
        );
        assert_eq!(
            overhead_pct(1.0, f64::INFINITY).unwrap_err(),
            MetricsError::NonPositiveTime("t_without")
        );
        assert!(scaling_table(&[]).is_err());
    }

    #[test]
    fn scaling_table_reproduces_reference_rows() {
        let table = scaling_table(&TIMES).unwrap();
        let speedups: Vec<Option<f64>> =
            table.iter().map(|r| r.speedup_prev.map(|s| round_half_up(s, 2))).collect();
        assert_eq!(
            speedups,
            vec![None, Some(1.97), Some(1.93), Some(2.01), Some(1.83)]
        );
        let efficiencies: Vec<f64> =
            table.iter().map(|r| round_half_up(r.efficiency_pct, 1)).collect();
        assert_eq!(efficiencies, vec![100.0, 98.5, 95.0, 95.4, 87.3]);
        assert_eq!(table[3].nodes, 2);
    }

    #[test]
    fn scaling_csv_leaves_first_speedup_empty() {
        let table = scaling_table(&TIMES).unwrap();
        let csv = scaling_csv(&table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "ranks,epoch_s,speedup_prev,efficiency_pct");
        assert_eq!(lines[1], "1,6439.93,,100.0");
        assert_eq!(lines[2], "2,3268.65,1.97,98.5");
        assert_eq!(lines[5], "16,461.23,1.83,87.3");
    }
}
