//! Metrics and statistics for fold evaluation: Pearson, Spearman, Cohen's
//! kappa, precision/recall/F1, paired t-tests, per-fold aggregation, and
//! the curiosity-score match/mismatch histogram.
//!
//! Undefined-metric policy: degenerate inputs (constant sequences, zero
//! denominators, chance agreement 1) yield a flagged 0 instead of an abort,
//! so one degenerate fold cannot kill a cross-validation aggregate. Every
//! flagged cell carries its reason and is marked in reports.
//!
//! On binary verdict encodings Pearson equals the phi coefficient, which is
//! why Pearson and kappa move together in the result tables.

use serde::Serialize;
use std::collections::BTreeMap;

/// A metric value plus the reason it is degenerate, if it is.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flagged {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Flagged {
    pub fn ok(value: f64) -> Self {
        Self { value, flag: None }
    }

    pub fn flagged(value: f64, why: &str) -> Self {
        Self { value, flag: Some(why.to_string()) }
    }

    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Product-moment correlation; constant input -> flagged 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Flagged {
    assert_eq!(x.len(), y.len(), "pearson over unequal lengths");
    assert!(x.len() >= 2, "pearson needs at least 2 points");
    if is_constant(x) || is_constant(y) {
        return Flagged::flagged(0.0, "constant input");
    }
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    Flagged::ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks (1-based); ties share the mean of their rank block.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Flagged {
    assert_eq!(x.len(), y.len(), "spearman over unequal lengths");
    assert!(x.len() >= 2, "spearman needs at least 2 points");
    if is_constant(x) || is_constant(y) {
        return Flagged::flagged(0.0, "constant input");
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Counts with yes as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(pred: &[bool], truth: &[bool]) -> Self {
        assert_eq!(pred.len(), truth.len(), "confusion over unequal lengths");
        let mut cm = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// kappa = (p_o - p_e) / (1 - p_e); chance agreement 1 -> flagged 0.
pub fn cohen_kappa(pred: &[bool], truth: &[bool]) -> Flagged {
    assert_eq!(pred.len(), truth.len(), "kappa over unequal lengths");
    assert!(!pred.is_empty(), "kappa over empty input");
    let cm = ConfusionMatrix::from_pairs(pred, truth);
    let n = cm.total() as f64;
    let p_o = (cm.tp + cm.tn) as f64 / n;
    let pred_yes = (cm.tp + cm.fp) as f64 / n;
    let truth_yes = (cm.tp + cm.fn_) as f64 / n;
    let p_e = pred_yes * truth_yes + (1.0 - pred_yes) * (1.0 - truth_yes);
    if (1.0 - p_e).abs() < 1e-12 {
        return Flagged::flagged(0.0, "chance agreement 1 (constant marginals)");
    }
    Flagged::ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prf {
    pub precision: Flagged,
    pub recall: Flagged,
    pub f1: Flagged,
}

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); zero denominators ->
/// flagged 0.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Prf {
    let ratio = |num: usize, den: usize, what: &str| {
        if den == 0 {
            Flagged::flagged(0.0, what)
        } else {
            Flagged::ok(num as f64 / den as f64)
        }
    };
    let precision = ratio(cm.tp, cm.tp + cm.fp, "no positive predictions");
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "no positive truths");
    let f1 = if precision.value + recall.value == 0.0 {
        Flagged::flagged(0.0, "precision + recall = 0")
    } else {
        Flagged::ok(2.0 * precision.value * recall.value / (precision.value + recall.value))
    };
    Prf { precision, recall, f1 }
}

/// Two-sided paired Student t over differences a_i - b_i. `t` and `p` are
/// NaN when the differences have zero variance (flagged).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTest {
    pub mean_delta: f64,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub significant_at_05: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> TTest {
    assert_eq!(a.len(), b.len(), "paired t over unequal lengths");
    assert!(a.len() >= 2, "paired t needs at least 2 pairs");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_delta = mean(&d);
    let sd = sample_sd(&d);
    let df = d.len() - 1;
    if sd == 0.0 {
        return TTest {
            mean_delta,
            t: f64::NAN,
            df,
            p: f64::NAN,
            significant_at_05: false,
            flag: Some("zero-variance differences; p undefined".to_string()),
        };
    }
    let t = mean_delta / (sd / (d.len() as f64).sqrt());
    let p = 2.0 * (1.0 - t_cdf(t.abs(), df as f64));
    TTest { mean_delta, t, df, p, significant_at_05: p < 0.05, flag: None }
}

/// ln Gamma via the Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the regularized incomplete beta (Lentz's method).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b), accurate to about 1e-14.
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x outside [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // Use the symmetry that keeps the continued fraction convergent.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF via the incomplete beta; documented accuracy 1e-8.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if t.is_nan() {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Per-fold verdict metrics over aligned prediction/truth sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub pearson: Flagged,
    pub spearman: Flagged,
    pub kappa: Flagged,
    pub precision: Flagged,
    pub recall: Flagged,
    pub f1: Flagged,
    pub confusion: ConfusionMatrix,
}

pub const METRIC_NAMES: [&str; 6] =
    ["pearson", "spearman", "kappa", "precision", "recall", "f1"];

impl FoldMetrics {
    pub fn compute(fold: usize, pred: &[bool], truth: &[bool]) -> Self {
        assert_eq!(pred.len(), truth.len(), "metrics over unequal lengths");
        let px: Vec<f64> = pred.iter().map(|&b| b as u8 as f64).collect();
        let ty: Vec<f64> = truth.iter().map(|&b| b as u8 as f64).collect();
        let confusion = ConfusionMatrix::from_pairs(pred, truth);
        let prf = precision_recall_f1(&confusion);
        FoldMetrics {
            fold,
            pearson: pearson(&px, &ty),
            spearman: spearman(&px, &ty),
            kappa: cohen_kappa(pred, truth),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            confusion,
        }
    }

    pub fn get(&self, name: &str) -> &Flagged {
        match name {
            "pearson" => &self.pearson,
            "spearman" => &self.spearman,
            "kappa" => &self.kappa,
            "precision" => &self.precision,
            "recall" => &self.recall,
            "f1" => &self.f1,
            _ => panic!("unknown metric {name}"),
        }
    }
}

/// Mean and sample SD of one metric across folds, Table-style display.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCell {
    pub mean: f64,
    pub sd: f64,
    pub display: String,
    /// Number of folds whose value was a flagged 0.
    pub flagged_folds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// "m +/-s" with 3 decimals, e.g. "0.524 ±0.092".
pub fn format_mean_sd(mean: f64, sd: f64) -> String {
    format!("{mean:.3} \u{b1}{sd:.3}")
}

/// Aggregate per-fold metrics; flagged fold values contribute their 0.
pub fn aggregate(per_fold: &[FoldMetrics]) -> BTreeMap<String, AggregateCell> {
    assert!(!per_fold.is_empty(), "aggregate over no folds");
    let mut out = BTreeMap::new();
    for name in METRIC_NAMES {
        let values: Vec<f64> = per_fold.iter().map(|f| f.get(name).value).collect();
        let flagged_folds = per_fold.iter().filter(|f| f.get(name).is_flagged()).count();
        let m = mean(&values);
        let sd = sample_sd(&values);
        let flag = if per_fold.len() == 1 {
            Some("single fold; SD reported as 0".to_string())
        } else {
            None
        };
        out.insert(
            name.to_string(),
            AggregateCell { mean: m, sd, display: format_mean_sd(m, sd), flagged_folds, flag },
        );
    }
    out
}

/// One binned pair of histograms of curiosity scores, partitioned by
/// whether the pre-explanation prediction matched ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CuriosityHistogram {
    /// n_bins + 1 edges; empty when there is no data.
    pub edges: Vec<f64>,
    pub match_counts: Vec<usize>,
    pub mismatch_counts: Vec<usize>,
    pub match_mean_abs: f64,
    pub mismatch_mean_abs: f64,
    pub match_n: usize,
    pub mismatch_n: usize,
}

pub fn curiosity_histogram(scores: &[f64], matches: &[bool], n_bins: usize) -> CuriosityHistogram {
    assert_eq!(scores.len(), matches.len(), "histogram over unequal lengths");
    assert!(n_bins > 0, "need at least one bin");
    if scores.is_empty() {
        return CuriosityHistogram {
            edges: vec![],
            match_counts: vec![],
            mismatch_counts: vec![],
            match_mean_abs: 0.0,
            mismatch_mean_abs: 0.0,
            match_n: 0,
            mismatch_n: 0,
        };
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut match_counts = vec![0usize; n_bins];
    let mut mismatch_counts = vec![0usize; n_bins];
    let mut sums = [0.0f64; 2];
    let mut ns = [0usize; 2];
    for (&s, &m) in scores.iter().zip(matches) {
        let bin = (((s - lo) / width) as usize).min(n_bins - 1);
        if m {
            match_counts[bin] += 1;
        } else {
            mismatch_counts[bin] += 1;
        }
        let side = usize::from(!m);
        sums[side] += s.abs();
        ns[side] += 1;
    }
    let mean_of = |i: usize| if ns[i] == 0 { 0.0 } else { sums[i] / ns[i] as f64 };
    CuriosityHistogram {
        edges,
        match_counts,
        mismatch_counts,
        match_mean_abs: mean_of(0),
        mismatch_mean_abs: mean_of(1),
        match_n: ns[0],
        mismatch_n: ns[1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::ContinuousCDF;

    #[test]
    fn pearson_goldens() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).value, 1.0);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).value, -1.0);
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).value,
            0.8,
            max_relative = 1e-12
        );
    }

    #[test]
    fn pearson_constant_input_flagged() {
        let r = pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r.value, 0.0);
        assert!(r.is_flagged());
    }

    #[test]
    fn spearman_goldens_and_ties() {
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).value,
            0.8,
            max_relative = 1e-12
        );
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        // Monotone but nonlinear: rank correlation is exactly 1.
        let x: [f64; 4] = [0.5, 1.5, 2.5, 3.5];
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert_relative_eq!(spearman(&x, &y).value, 1.0);
        assert_relative_eq!(
            spearman(&x, &y.iter().map(|v| -v).collect::<Vec<_>>()).value,
            -1.0
        );
    }

    #[test]
    fn kappa_goldens() {
        let pred = [true, true, false, false];
        let truth = [true, true, false, false];
        assert_relative_eq!(cohen_kappa(&pred, &truth).value, 1.0);

        // Confusion (tp=20, fp=5, fn=10, tn=15): p_o = 0.7, p_e = 0.5.
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (p, t, n) in [(true, true, 20), (true, false, 5), (false, true, 10), (false, false, 15)]
        {
            for _ in 0..n {
                pred.push(p);
                truth.push(t);
            }
        }
        assert_relative_eq!(cohen_kappa(&pred, &truth).value, 0.4, max_relative = 1e-12);
    }

    #[test]
    fn kappa_random_predictions_near_zero() {
        for seed in 0..5u64 {
            let mut rng = crate::rng::seeded_rng(seed, "kappa-mc");
            let n = 10_000;
            let pred: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            let k = cohen_kappa(&pred, &truth).value;
            assert!(k.abs() < 0.05, "seed {seed}: kappa {k}");
        }
    }

    #[test]
    fn kappa_chance_agreement_flagged() {
        let r = cohen_kappa(&[true, true], &[true, true]);
        assert_eq!(r.value, 0.0);
        assert!(r.is_flagged());
    }

    #[test]
    fn prf_goldens() {
        let prf = precision_recall_f1(&ConfusionMatrix { tp: 2, fp: 1, fn_: 1, tn: 0 });
        assert_relative_eq!(prf.precision.value, 2.0 / 3.0);
        assert_relative_eq!(prf.recall.value, 2.0 / 3.0);
        assert_relative_eq!(prf.f1.value, 2.0 / 3.0);

        let perfect = precision_recall_f1(&ConfusionMatrix { tp: 5, fp: 0, fn_: 0, tn: 5 });
        assert_eq!(
            (perfect.precision.value, perfect.recall.value, perfect.f1.value),
            (1.0, 1.0, 1.0)
        );

        let degen = precision_recall_f1(&ConfusionMatrix { tp: 0, fp: 3, fn_: 2, tn: 1 });
        assert_eq!((degen.precision.value, degen.recall.value, degen.f1.value), (0.0, 0.0, 0.0));
        assert!(degen.f1.is_flagged());
    }

    #[test]
    fn confusion_total_invariant() {
        let pred = [true, false, true, true, false];
        let truth = [false, false, true, true, true];
        let cm = ConfusionMatrix::from_pairs(&pred, &truth);
        assert_eq!(cm.total(), pred.len());
    }

    #[test]
    fn paired_t_golden() {
        // b - a differences (1,2,3,4,5): t = 4.2426..., p two-sided 0.0132.
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let r = paired_t_test(&a, &b);
        assert_relative_eq!(r.mean_delta, 3.0);
        assert_relative_eq!(r.t, 4.242640687119285, max_relative = 1e-12);
        assert_eq!(r.df, 4);
        assert_relative_eq!(r.p, 0.013235599563682695, max_relative = 1e-8);
        assert!(r.significant_at_05);
    }

    #[test]
    fn paired_t_zero_variance_flagged() {
        let a = [0.5, 0.6, 0.7];
        let r = paired_t_test(&a, &a);
        assert_eq!(r.mean_delta, 0.0);
        assert!(r.t.is_nan() && r.p.is_nan());
        assert!(!r.significant_at_05);
        assert!(r.flag.is_some());
    }

    #[test]
    fn paired_t_constant_shift_with_jitter() {
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let c = 0.3;
        let jitter = [0.1, -0.1, 0.0, 0.05, -0.05];
        let a: Vec<f64> = b.iter().zip(&jitter).map(|(x, j)| x + c + j).collect();
        let r = paired_t_test(&a, &b);
        assert_relative_eq!(r.mean_delta, c, max_relative = 1e-12);
    }

    #[test]
    fn t_cdf_goldens() {
        let cases = [
            (0.0, 3.0, 0.5),
            (1.0, 1.0, 0.7500000000000002),
            (4.242640687119285, 4.0, 0.9933822002181586),
            (-2.5, 7.0, 0.020496109292876437),
            (0.7, 2.0, 0.7218034876835673),
            (3.0, 29.0, 0.9972504039330483),
            (1.812461122811676, 10.0, 0.95),
            (12.0, 2.0, 0.9965635331614208),
        ];
        for (t, df, expected) in cases {
            let got = t_cdf(t, df);
            assert!((got - expected).abs() < 1e-8, "t={t} df={df}: {got} vs {expected}");
        }
    }

    #[test]
    fn t_cdf_matches_statrs_on_random_cases() {
        let mut rng = crate::rng::seeded_rng(4, "tcdf-oracle");
        for _ in 0..200 {
            let t: f64 = rng.gen_range(-8.0..8.0);
            let df: f64 = rng.gen_range(1..60) as f64;
            let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df).unwrap();
            let want = dist.cdf(t);
            let got = t_cdf(t, df);
            assert!((got - want).abs() < 1e-8, "t={t} df={df}: {got} vs {want}");
        }
    }

    #[test]
    fn correlation_matches_independent_formulas_on_random_cases() {
        let mut rng = crate::rng::seeded_rng(9, "corr-oracle");
        for case in 0..200 {
            let n = rng.gen_range(3..40);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            // Raw-sums Pearson formula as the independent route.
            let nf = n as f64;
            let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let sxx: f64 = x.iter().map(|a| a * a).sum();
            let syy: f64 = y.iter().map(|a| a * a).sum();
            let want = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
            let got = pearson(&x, &y).value;
            assert!((got - want).abs() < 1e-8, "case {case}: {got} vs {want}");

            // O(n^2) rank construction as the independent Spearman route.
            let slow_ranks = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .map(|&a| {
                        let below = v.iter().filter(|&&b| b < a).count() as f64;
                        let equal = v.iter().filter(|&&b| b == a).count() as f64;
                        below + (equal + 1.0) / 2.0
                    })
                    .collect()
            };
            let want = pearson(&slow_ranks(&x), &slow_ranks(&y)).value;
            let got = spearman(&x, &y).value;
            assert!((got - want).abs() < 1e-8, "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn kappa_matches_direct_formula_on_random_cases() {
        let mut rng = crate::rng::seeded_rng(10, "kappa-oracle");
        for _ in 0..200 {
            let n = rng.gen_range(4..60);
            let pred: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.6).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.4).collect();
            let agree =
                pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
            let py = pred.iter().filter(|&&b| b).count() as f64 / n as f64;
            let ty = truth.iter().filter(|&&b| b).count() as f64 / n as f64;
            let pe = py * ty + (1.0 - py) * (1.0 - ty);
            let got = cohen_kappa(&pred, &truth);
            if (1.0 - pe).abs() < 1e-12 {
                assert!(got.is_flagged());
            } else {
                let want = (agree - pe) / (1.0 - pe);
                assert!((got.value - want).abs() < 1e-8);
                assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&got.value));
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_symmetry_and_affine_invariance(
            x in proptest::collection::vec(-10.0f64..10.0, 3..20),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let y: Vec<f64> = x.iter().rev().map(|v| v * 0.7 + 1.0).collect();
            prop_assume!(!is_constant(&x));
            let base = pearson(&x, &y).value;
            prop_assert!((pearson(&y, &x).value - base).abs() < 1e-9);
            let ax: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            prop_assume!(!is_constant(&ax));
            prop_assert!((pearson(&ax, &y).value - base).abs() < 1e-9);
        }

        #[test]
        fn spearman_monotone_invariance(
            x in proptest::collection::vec(-10.0f64..10.0, 4..16),
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + i as f64 * 0.01).collect();
            prop_assume!(!is_constant(&x) && !is_constant(&y));
            let base = spearman(&x, &y).value;
            // Strictly increasing transform of x: ranks unchanged.
            let gx: Vec<f64> = x.iter().map(|v| 2.0 * v.powi(3) + v).collect();
            prop_assert!((spearman(&gx, &y).value - base).abs() < 1e-9);
        }

        #[test]
        fn f1_equals_p_and_r_when_equal(tp in 1usize..50, err in 0usize..20) {
            let prf = precision_recall_f1(&ConfusionMatrix { tp, fp: err, fn_: err, tn: 3 });
            prop_assert!((prf.precision.value - prf.recall.value).abs() < 1e-12);
            prop_assert!((prf.f1.value - prf.precision.value).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_goldens_and_recomputability() {
        let mk = |fold: usize, v: f64| {
            let pred = [true, false, true, false];
            let truth = [true, false, false, true];
            let mut m = FoldMetrics::compute(fold, &pred, &truth);
            m.pearson = Flagged::ok(v);
            m
        };
        let folds = vec![mk(0, 0.5), mk(1, 0.6), mk(2, 0.7)];
        let agg = aggregate(&folds);
        let cell = &agg["pearson"];
        assert_relative_eq!(cell.mean, 0.6, max_relative = 1e-12);
        assert_relative_eq!(cell.sd, 0.1, max_relative = 1e-12);
        // Recomputable from per-fold values exactly.
        let values: Vec<f64> = folds.iter().map(|f| f.pearson.value).collect();
        assert_eq!(cell.mean, mean(&values));
        assert_eq!(cell.sd, sample_sd(&values));

        let single = aggregate(&folds[..1]);
        assert_eq!(single["pearson"].sd, 0.0);
        assert!(single["pearson"].flag.is_some());
    }

    #[test]
    fn format_golden() {
        assert_eq!(format_mean_sd(0.524, 0.092), "0.524 \u{b1}0.092");
        assert_eq!(format_mean_sd(0.5238, 0.0921), "0.524 \u{b1}0.092");
    }

    #[test]
    fn histogram_basics() {
        let h = curiosity_histogram(&[], &[], 10);
        assert!(h.edges.is_empty() && h.match_counts.is_empty());

        let scores = [0.1, 0.2, 0.3, 0.4];
        let h = curiosity_histogram(&scores, &[true, true, true, true], 4);
        assert_eq!(h.mismatch_counts.iter().sum::<usize>(), 0);
        assert_eq!(h.match_counts.iter().sum::<usize>(), 4);
        assert_eq!(h.edges.len(), 5);

        // Mismatches built with larger |score|: means differ as constructed.
        let scores = [0.1, -0.1, 0.2, 1.5, -1.8, 2.0];
        let matches = [true, true, true, false, false, false];
        let h = curiosity_histogram(&scores, &matches, 3);
        assert!(h.mismatch_mean_abs > h.match_mean_abs);
        assert_eq!(h.match_n, 3);
        assert_eq!(h.mismatch_n, 3);
        let total: usize =
            h.match_counts.iter().sum::<usize>() + h.mismatch_counts.iter().sum::<usize>();
        assert_eq!(total, 6);
    }

    #[test]
    fn fold_metrics_phi_equals_pearson_on_binary() {
        let pred = [true, true, false, true, false, false, true, false];
        let truth = [true, false, false, true, true, false, true, false];
        let m = FoldMetrics::compute(0, &pred, &truth);
        // Phi from the confusion matrix.
        let cm = &m.confusion;
        let (tp, fp, fnn, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
        let phi = (tp * tn - fp * fnn)
            / ((tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn)).sqrt();
        assert_relative_eq!(m.pearson.value, phi, max_relative = 1e-9);
    }
}
