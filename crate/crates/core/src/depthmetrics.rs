//! RMSE, MAE, iRMSE and iMAE over pixels with ground truth.
//!
//! Depth errors are in millimetres and inverse-depth errors in 1/km.

use std::fmt::Write as _;

use crate::dataio::{DenseDepth, SparseDepth};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub irmse: f64,
    pub imae: f64,
    pub valid_pixels: usize,
}

impl MetricReport {
    /// A report from externally obtained values (no pixel count).
    pub fn from_values(rmse: f64, mae: f64, irmse: f64, imae: f64) -> Self {
        Self {
            rmse,
            mae,
            irmse,
            imae,
            valid_pixels: 0,
        }
    }

    /// Per-image average of several reports; pixel counts add up.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::invalid("mean of zero metric reports"));
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            rmse: avg(|r| r.rmse),
            mae: avg(|r| r.mae),
            irmse: avg(|r| r.irmse),
            imae: avg(|r| r.imae),
            valid_pixels: reports.iter().map(|r| r.valid_pixels).sum(),
        })
    }
}

pub fn evaluate(pred: &DenseDepth, gt: &SparseDepth) -> Result<MetricReport> {
    pred.grid().check_same_size(gt.grid(), "prediction vs ground truth")?;
    let (mut sq, mut abs, mut isq, mut iabs) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    for (&p, &g) in pred.grid().data().iter().zip(gt.grid().data()) {
        if g > 0.0 {
            let r = p - g;
            let ir = 1.0 / p - 1.0 / g;
            sq += r * r;
            abs += r.abs();
            isq += ir * ir;
            iabs += ir.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("ground truth has no valid pixels; metrics are undefined"));
    }
    let n_f = n as f64;
    Ok(MetricReport {
        rmse: (sq / n_f).sqrt() * 1e3,
        mae: abs / n_f * 1e3,
        irmse: (isq / n_f).sqrt() * 1e3,
        imae: iabs / n_f * 1e3,
        valid_pixels: n,
    })
}

/// Reports sorted by RMSE, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedTable {
    pub rows: Vec<(String, MetricReport)>,
}

impl RankedTable {
    pub fn names(&self) -> Vec<&str> {
        self.rows.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,name,rmse_mm,mae_mm,irmse_per_km,imae_per_km,valid_pixels\n");
        for (i, (name, r)) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{:.2},{:.2},{:.2},{:.2},{}",
                i + 1,
                name,
                r.rmse,
                r.mae,
                r.irmse,
                r.imae,
                r.valid_pixels
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| rank | name | RMSE (mm) | MAE (mm) | iRMSE (1/km) | iMAE (1/km) |\n");
        s.push_str("|---:|---|---:|---:|---:|---:|\n");
        for (i, (name, r)) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
                i + 1,
                name,
                r.rmse,
                r.mae,
                r.irmse,
                r.imae
            );
        }
        s
    }
}

pub fn compare(reports: Vec<(String, MetricReport)>) -> Result<RankedTable> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    for (i, (a, _)) in reports.iter().enumerate() {
        if reports[..i].iter().any(|(b, _)| a == b) {
            return Err(Error::invalid(format!("duplicate entry name `{a}`")));
        }
        if a.contains(',') || a.contains('|') {
            return Err(Error::invalid(format!("entry name `{a}` contains a table separator")));
        }
    }
    let mut rows = reports;
    rows.sort_by(|a, b| a.1.rmse.total_cmp(&b.1.rmse));
    Ok(RankedTable { rows })
}

/// Reads `name,rmse,mae,irmse,imae` rows (header optional, `#` comments).
pub fn parse_reports_csv(text: &str) -> Result<Vec<(String, MetricReport)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |why: &str| Error::format("metrics csv", format!("line {}: {why}", no + 1));
        if cols.len() != 5 {
            return Err(bad(&format!("expected 5 columns, found {}", cols.len())));
        }
        let nums: std::result::Result<Vec<f64>, _> = cols[1..].iter().map(|c| c.parse::<f64>()).collect();
        match nums {
            Ok(v) => out.push((cols[0].to_string(), MetricReport::from_values(v[0], v[1], v[2], v[3]))),
            Err(_) if out.is_empty() && no == 0 => continue,
            Err(e) => return Err(bad(&e.to_string())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Grid;
    use proptest::prelude::*;

    fn dense(v: Vec<f64>) -> DenseDepth {
        DenseDepth::new(Grid::from_vec(v.len(), 1, v).unwrap()).unwrap()
    }

    fn sparse(v: Vec<f64>) -> SparseDepth {
        SparseDepth::new(Grid::from_vec(v.len(), 1, v).unwrap()).unwrap()
    }

    #[test]
    fn hand_case() {
        let r = evaluate(&dense(vec![3.0, 2.0, 9.0]), &sparse(vec![2.0, 4.0, 0.0])).unwrap();
        assert_eq!(r.valid_pixels, 2);
        assert!((r.mae - 1500.0).abs() < 1e-9);
        assert!((r.rmse - 2.5f64.sqrt() * 1000.0).abs() < 1e-9);
        assert!((r.rmse - 1581.14).abs() < 0.01);
        let imae = ((1.0f64 / 3.0 - 0.5).abs() + (0.5f64 - 0.25).abs()) / 2.0 * 1000.0;
        assert!((r.imae - imae).abs() < 1e-9);
        assert!((r.imae - 208.33).abs() < 0.01);
    }

    #[test]
    fn constant_offset_and_exact_prediction() {
        let gt = sparse(vec![5.0, 0.0, 7.0, 11.0]);
        let r = evaluate(&dense(vec![7.0, 1.0, 9.0, 13.0]), &gt).unwrap();
        assert!((r.rmse - 2000.0).abs() < 1e-9 && (r.mae - 2000.0).abs() < 1e-9);
        let r = evaluate(&dense(vec![5.0, 1.0, 7.0, 11.0]), &gt).unwrap();
        assert_eq!((r.rmse, r.mae, r.irmse, r.imae), (0.0, 0.0, 0.0, 0.0));
        assert!(evaluate(&dense(vec![1.0]), &sparse(vec![0.0])).is_err());
    }

    #[test]
    fn ranking_and_rendering() {
        let t = compare(vec![
            ("a".into(), MetricReport::from_values(1300.0, 1.0, 1.0, 1.0)),
            ("b".into(), MetricReport::from_values(1214.0, 1.0, 1.0, 1.0)),
        ])
        .unwrap();
        assert_eq!(t.names(), ["b", "a"]);
        assert!(t.to_csv().lines().nth(1).unwrap().starts_with("1,b,1214.00"));
        assert_eq!(t.to_markdown().lines().count(), 4);
        let one = compare(vec![("x".into(), MetricReport::from_values(1.0, 1.0, 1.0, 1.0))]).unwrap();
        assert_eq!(one.rows.len(), 1);
        let dup = vec![
            ("x".into(), MetricReport::from_values(1.0, 1.0, 1.0, 1.0)),
            ("x".into(), MetricReport::from_values(2.0, 1.0, 1.0, 1.0)),
        ];
        assert!(compare(dup).is_err());
        assert!(compare(vec![]).is_err());
    }

    #[test]
    fn csv_input() {
        let rows = parse_reports_csv("name,rmse,mae,irmse,imae\nm1, 10, 5, 1, 0.5\n# c\nm2,9,6,2,1\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].1.rmse, 9.0);
        assert!(parse_reports_csv("a,1,2\n").is_err());
        assert!(parse_reports_csv("a,1,2,3,4\nb,x,2,3,4\n").is_err());
    }

    proptest! {
        #[test]
        fn power_mean_and_permutation(
            px in prop::collection::vec((0.5f64..80.0, 0.5f64..80.0, any::<bool>()), 1..40),
            rot in 0usize..40,
        ) {
            prop_assume!(px.iter().any(|p| p.2));
            let pred: Vec<f64> = px.iter().map(|p| p.0).collect();
            let gt: Vec<f64> = px.iter().map(|p| if p.2 { p.1 } else { 0.0 }).collect();
            let r = evaluate(&dense(pred.clone()), &sparse(gt.clone())).unwrap();
            prop_assert!(r.rmse >= r.mae * (1.0 - 1e-12));
            prop_assert!(r.irmse >= r.imae * (1.0 - 1e-12));
            let k = rot % pred.len();
            let (mut p2, mut g2) = (pred.clone(), gt.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            let s = evaluate(&dense(p2), &sparse(g2)).unwrap();
            prop_assert!((s.rmse - r.rmse).abs() <= 1e-9 * r.rmse.max(1.0));
            prop_assert!((s.imae - r.imae).abs() <= 1e-9 * r.imae.max(1.0));
            // An extra exact pixel never increases a metric.
            let (mut p3, mut g3) = (pred, gt);
            p3.push(5.0);
            g3.push(5.0);
            let t = evaluate(&dense(p3), &sparse(g3)).unwrap();
            prop_assert!(t.rmse <= r.rmse && t.mae <= r.mae && t.irmse <= r.irmse && t.imae <= r.imae);
        }
    }
}
