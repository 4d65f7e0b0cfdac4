//! Losses' evaluation counterparts: PSNR, ROI-local PSNR, Dice, BCE,
//! classification accuracy/F1, and paired-samples t-test reporting.

use crate::error::{CsError, Result};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Axis-aligned region of interest in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ROIBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl ROIBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        if self.area() == 0 {
            return Err(CsError::InvalidInput("ROI area must be ≥ 1".into()));
        }
        if self.top + self.height > shape.0 || self.left + self.width > shape.1 {
            return Err(CsError::InvalidInput(format!(
                "ROI {:?} exceeds image bounds {:?}",
                self, shape
            )));
        }
        Ok(())
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self {
            top: 0,
            left: 0,
            height: shape.0,
            width: shape.1,
        }
    }

    /// 1.0 inside the box, 0.0 outside.
    pub fn indicator(&self, shape: (usize, usize)) -> Array2<f64> {
        let mut m = Array2::zeros(shape);
        for r in self.top..self.top + self.height {
            for c in self.left..self.left + self.width {
                m[[r, c]] = 1.0;
            }
        }
        m
    }
}

/// Peak signal-to-noise ratio in dB, with the peak taken from the ground
/// truth. Identical inputs give the +inf sentinel.
pub fn psnr(xhat: &Array2<f64>, x: &Array2<f64>) -> f64 {
    assert_eq!(xhat.dim(), x.dim(), "psnr: shape mismatch");
    let mse = xhat
        .iter()
        .zip(x.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    let peak = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

/// PSNR with the MSE restricted to the ROI; the peak stays global.
pub fn local_psnr(xhat: &Array2<f64>, x: &Array2<f64>, roi: &ROIBox) -> Result<f64> {
    assert_eq!(xhat.dim(), x.dim(), "local_psnr: shape mismatch");
    roi.validate(x.dim())?;
    let mut sum = 0.0;
    for r in roi.top..roi.top + roi.height {
        for c in roi.left..roi.left + roi.width {
            let d = xhat[[r, c]] - x[[r, c]];
            sum += d * d;
        }
    }
    let mse = sum / roi.area() as f64;
    let peak = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const DICE_EPS: f64 = 1e-6;

/// Macro-averaged Dice over non-background classes (class 0 is background),
/// with epsilon smoothing so classes absent from both maps score ~1.
/// Inputs are (C, H, W); soft scores and one-hot maps both work.
pub fn dice_score(pred: &Array3<f64>, gt: &Array3<f64>) -> f64 {
    assert_eq!(pred.dim(), gt.dim(), "dice: shape mismatch");
    let c = pred.dim().0;
    assert!(c >= 2, "dice needs ≥2 classes");
    let mut acc = 0.0;
    for cls in 1..c {
        let p = pred.index_axis(Axis(0), cls);
        let g = gt.index_axis(Axis(0), cls);
        let inter: f64 = p.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        let total: f64 = p.sum() + g.sum();
        acc += (2.0 * inter + DICE_EPS) / (total + DICE_EPS);
    }
    acc / (c - 1) as f64
}

/// Cross entropy of softmax(logits) against a binary label, with clamped
/// probabilities so the value stays finite.
pub fn bce_loss(logits: &[f64; 2], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let z = (logits[0] - m).exp() + (logits[1] - m).exp();
    let p = ((logits[label as usize] - m).exp() / z).max(1e-12);
    -p.ln()
}

#[derive(Clone, Copy, Debug)]
pub struct ClsMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// True when 2TP + FP + FN = 0 and F1 was defined as 0.
    pub f1_degenerate: bool,
}

/// Accuracy and F1 from predicted / true binary labels.
pub fn cls_metrics(preds: &[u8], labels: &[u8]) -> Result<ClsMetrics> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(CsError::InvalidInput(
            "cls_metrics needs equal-length nonempty label lists".into(),
        ));
    }
    let (mut tp, mut tn, mut fp, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels.iter()) {
        match (p, l) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            (0, 1) => fnn += 1,
            _ => return Err(CsError::InvalidInput("labels must be 0/1".into())),
        }
    }
    let accuracy = (tp + tn) as f64 / preds.len() as f64;
    let denom = 2 * tp + fp + fnn;
    let (f1, f1_degenerate) = if denom == 0 {
        (0.0, true)
    } else {
        (2.0 * tp as f64 / denom as f64, false)
    };
    Ok(ClsMetrics {
        accuracy,
        f1,
        f1_degenerate,
    })
}

/// 2x2 confusion counts, rows = truth, cols = prediction.
pub fn confusion_matrix(preds: &[u8], labels: &[u8]) -> [[usize; 2]; 2] {
    let mut m = [[0usize; 2]; 2];
    for (&p, &l) in preds.iter().zip(labels.iter()) {
        m[l as usize][p as usize] += 1;
    }
    m
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TTestReport {
    pub t_stat: f64,
    pub p_value: f64,
    /// Percentage of samples where b > a.
    pub pct_improved: f64,
    /// Zero variance of the differences (p reported as the 0 sentinel).
    pub degenerate: bool,
}

/// Two-sided paired-samples t-test on b - a.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestReport> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CsError::InvalidInput(
            "paired t-test needs equal lengths ≥ 2".into(),
        ));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = b.iter().zip(a.iter()).map(|(&bv, &av)| bv - av).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Err(CsError::DegenerateStatistic(
            "all paired differences are zero".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let pct_improved = 100.0 * diffs.iter().filter(|&&d| d > 0.0).count() as f64 / n;
    if var == 0.0 {
        // constant nonzero shift: zero-variance limit, p collapses to 0
        return Ok(TTestReport {
            t_stat: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            p_value: 0.0,
            pct_improved,
            degenerate: true,
        });
    }
    let t_stat = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| CsError::DegenerateStatistic(e.to_string()))?;
    let p_value = 2.0 * dist.sf(t_stat.abs());
    Ok(TTestReport {
        t_stat,
        p_value,
        pct_improved,
        degenerate: false,
    })
}

/// Per-sample metric rows plus the aggregate, serialized as CSV by the CLI.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub metric_name: String,
    pub rows: Vec<(String, f64)>,
    pub comparison: Option<TTestReport>,
    pub ood: bool,
    /// Count of +inf sentinels excluded from the mean.
    pub infinite_excluded: usize,
}

impl MetricReport {
    pub fn new(metric_name: &str, rows: Vec<(String, f64)>) -> Self {
        let infinite_excluded = rows.iter().filter(|(_, v)| v.is_infinite()).count();
        Self {
            metric_name: metric_name.to_string(),
            rows,
            comparison: None,
            ood: false,
            infinite_excluded,
        }
    }

    /// Mean over finite per-sample values.
    pub fn aggregate(&self) -> f64 {
        let finite: Vec<f64> = self
            .rows
            .iter()
            .map(|(_, v)| *v)
            .filter(|v| v.is_finite())
            .collect();
        finite.iter().sum::<f64>() / finite.len() as f64
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, v)| *v).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,value\n");
        for (id, v) in &self.rows {
            out.push_str(&format!("{id},{v:.10}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn psnr_hand_values() {
        // flat offset of 0.1*max → exactly 20 dB
        let x = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64 / 15.0);
        let peak = 1.0;
        let xhat = x.mapv(|v| v + 0.1 * peak);
        assert!((psnr(&xhat, &x) - 20.0).abs() < 1e-10);

        // zero estimate, max 1, mean square 0.25 → 10 log10(4)
        let mut x2 = Array2::zeros((2, 2));
        x2[[0, 0]] = 1.0;
        // mean square of x2 should be 0.25: entries {1,0,0,0} → 0.25 ✓
        let xhat2 = Array2::zeros((2, 2));
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        assert!((psnr(&xhat2, &x2) - expected).abs() < 1e-10);
        assert!((expected - 6.0206).abs() < 1e-3);

        // scale invariance
        let a = x.mapv(|v| v * 3.7);
        let b = xhat.mapv(|v| v * 3.7);
        assert!((psnr(&b, &a) - psnr(&xhat, &x)).abs() < 1e-9);

        // identical inputs → +inf sentinel
        assert!(psnr(&x, &x).is_infinite());
    }

    #[test]
    fn local_psnr_hand_value_and_degeneracy() {
        // max(x)=2, roi of 2 pixels with errors 0.1, 0.2 → 10 log10(160)
        let mut x = Array2::zeros((4, 4));
        x[[0, 0]] = 2.0;
        let mut xhat = x.clone();
        xhat[[2, 0]] += 0.1;
        xhat[[2, 1]] += 0.2;
        // large error outside the ROI must not matter
        xhat[[3, 3]] += 5.0;
        let roi = ROIBox { top: 2, left: 0, height: 1, width: 2 };
        let got = local_psnr(&xhat, &x, &roi).unwrap();
        let expected = 10.0 * (4.0f64 / 0.025).log10();
        assert!((got - expected).abs() < 1e-10);
        assert!((expected - 22.0412).abs() < 1e-3);

        // full-image ROI degenerates to psnr, bitwise
        let roi_full = ROIBox::full((4, 4));
        assert_eq!(local_psnr(&xhat, &x, &roi_full).unwrap(), psnr(&xhat, &x));
    }

    #[test]
    fn roi_bounds_checked() {
        let x = Array2::<f64>::zeros((4, 4));
        let bad = ROIBox { top: 3, left: 3, height: 2, width: 2 };
        assert!(local_psnr(&x, &x, &bad).is_err());
        let empty = ROIBox { top: 0, left: 0, height: 0, width: 2 };
        assert!(empty.validate((4, 4)).is_err());
    }

    #[test]
    fn dice_hand_values() {
        // |A| = |B| = 2 with one shared pixel → 0.5
        let mut pred = Array3::zeros((2, 2, 2));
        let mut gt = Array3::zeros((2, 2, 2));
        // class 1 pixels
        pred[[1, 0, 0]] = 1.0;
        pred[[1, 0, 1]] = 1.0;
        gt[[1, 0, 0]] = 1.0;
        gt[[1, 1, 1]] = 1.0;
        // background elsewhere
        for i in 0..2 {
            for j in 0..2 {
                pred[[0, i, j]] = 1.0 - pred[[1, i, j]];
                gt[[0, i, j]] = 1.0 - gt[[1, i, j]];
            }
        }
        let d = dice_score(&pred, &gt);
        assert!((d - 0.5).abs() < 1e-4);

        // perfect overlap → 1, disjoint → ~0
        assert!((dice_score(&gt, &gt) - 1.0).abs() < 1e-6);
        let mut far = gt.clone();
        far.index_axis_mut(Axis(0), 1).fill(0.0);
        far[[1, 1, 0]] = 1.0;
        far[[1, 0, 1]] = 1.0;
        assert!(dice_score(&far, &gt) < 1e-6 + 0.26); // one-pixel overlap check below
        let mut disj = Array3::zeros((2, 2, 2));
        disj[[1, 1, 0]] = 1.0;
        let mut gt2 = Array3::zeros((2, 2, 2));
        gt2[[1, 0, 1]] = 1.0;
        assert!(dice_score(&disj, &gt2) < 1e-5);
    }

    #[test]
    fn dice_symmetry_and_range() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut a = Array3::zeros((3, 4, 4));
            let mut b = Array3::zeros((3, 4, 4));
            for i in 0..4 {
                for j in 0..4 {
                    let ca = rng.random_range(0..3);
                    let cb = rng.random_range(0..3);
                    a[[ca, i, j]] = 1.0;
                    b[[cb, i, j]] = 1.0;
                }
            }
            let dab = dice_score(&a, &b);
            let dba = dice_score(&b, &a);
            assert!((dab - dba).abs() < 1e-12);
            assert!((0.0..=1.0 + 1e-9).contains(&dab));
        }
    }

    #[test]
    fn bce_hand_values() {
        assert!((bce_loss(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&[0.0, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-12);
        // strongly correct logits → ~2.06e-9
        let v = bce_loss(&[10.0, -10.0], 0);
        assert!(v > 0.0 && v < 1e-8);
        // monotone decrease as the correct logit grows
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let v = bce_loss(&[k as f64, 0.0], 0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn cls_metrics_hand_counts() {
        // TP=2, TN=5, FP=1, FN=2 → accuracy 0.7
        let labels = vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let preds = vec![1, 1, 0, 0, 1, 0, 0, 0, 0, 0];
        let m = cls_metrics(&preds, &labels).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);

        // TP=2, FP=1, FN=1 → F1 = 4/6
        let labels = vec![1, 1, 1, 0];
        let preds = vec![1, 1, 0, 1];
        let m = cls_metrics(&preds, &labels).unwrap();
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);

        // all correct with positives → both 1
        let m = cls_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert!((m.accuracy - 1.0).abs() < 1e-12 && (m.f1 - 1.0).abs() < 1e-12);

        // no positives anywhere → degenerate F1 = 0
        let m = cls_metrics(&[0, 0], &[0, 0]).unwrap();
        assert!(m.f1_degenerate && m.f1 == 0.0 && m.accuracy == 1.0);
    }

    #[test]
    fn ttest_shift_symmetry_and_errors() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let r = paired_ttest(&a, &b).unwrap();
        assert_eq!(r.pct_improved, 100.0);
        assert_eq!(r.p_value, 0.0);
        assert!(r.degenerate);

        // symmetric roles: t flips, p unchanged
        let b2: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + ((i % 3) as f64 - 1.0)).collect();
        let r1 = paired_ttest(&a, &b2).unwrap();
        let r2 = paired_ttest(&b2, &a).unwrap();
        assert!((r1.t_stat + r2.t_stat).abs() < 1e-12);
        assert!((r1.p_value - r2.p_value).abs() < 1e-12);

        assert!(matches!(
            paired_ttest(&a, &a),
            Err(CsError::DegenerateStatistic(_))
        ));
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn report_aggregate_is_mean() {
        let rows = vec![
            ("a".to_string(), 1.0),
            ("b".to_string(), 2.0),
            ("c".to_string(), f64::INFINITY),
        ];
        let rep = MetricReport::new("psnr", rows);
        assert_eq!(rep.infinite_excluded, 1);
        assert!((rep.aggregate() - 1.5).abs() < 1e-12);
    }
}
