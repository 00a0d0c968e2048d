//! Paired t-tests, Benjamini-Hochberg FDR and one-way repeated-measures
//! ANOVA with the Greenhouse-Geisser correction.

mod dist;

use std::fmt::Write as _;
use std::path::Path;

pub use dist::{f_sf, inc_beta, ln_gamma, t_two_sided};

use crate::dataset::AlphaSample;
use crate::dsp::Condition;
use crate::error::{Error, Result};

/// Two equal-length, finite samples measured on the same subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSamples {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::Stats(format!("paired samples need equal lengths >= 2, got {} and {}", x.len(), y.len())));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Stats("paired samples contain a non-finite value".into()));
        }
        Ok(PairedSamples { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn paired_t(s: &PairedSamples) -> Result<TTest> {
    let n = s.len() as f64;
    let d: Vec<f64> = s.x.iter().zip(&s.y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if var <= (1e-13 * scale).powi(2) {
        return Err(Error::Stats("paired differences have zero variance".into()));
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    Ok(TTest { t, df, p: t_two_sided(t, df)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    pub rejected: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Benjamini-Hochberg step-up procedure at level `q`. Outputs follow the
/// input order.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<BhResult> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Stats(format!("p value {bad} outside [0, 1]")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Stats(format!("FDR level {q} outside (0, 1)")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let cutoff = (1..=m).rev().find(|&i| p[order[i - 1]] <= i as f64 * q / m as f64).unwrap_or(0);
    let mut rejected = vec![false; m];
    for &idx in &order[..cutoff] {
        rejected[idx] = true;
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let idx = order[rank - 1];
        running = running.min(p[idx] * (m as f64 / rank as f64));
        adjusted[idx] = running.min(1.0);
    }
    Ok(BhResult { rejected, adjusted })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmAnovaTable {
    pub n: usize,
    pub k: usize,
    pub f: f64,
    /// Uncorrected degrees of freedom `(k - 1, (k - 1)(n - 1))`.
    pub df: (f64, f64),
    pub epsilon: f64,
    /// Tail probability at the corrected degrees of freedom.
    pub p: f64,
}

/// One-way repeated-measures ANOVA on a subjects x conditions matrix.
pub fn rm_anova_gg(matrix: &[Vec<f64>]) -> Result<RmAnovaTable> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::Stats(format!("repeated-measures ANOVA needs >= 2 subjects and conditions, got {n}x{k}")));
    }
    if matrix.iter().any(|row| row.len() != k || row.iter().any(|v| !v.is_finite())) {
        return Err(Error::Stats("ragged or non-finite ANOVA matrix".into()));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = matrix.iter().flatten().sum::<f64>() / (nf * kf);
    let subj_mean: Vec<f64> = matrix.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let cond_mean: Vec<f64> = (0..k).map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ss_cond = nf * cond_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for (row, sm) in matrix.iter().zip(&subj_mean) {
        for (v, cm) in row.iter().zip(&cond_mean) {
            ss_err += (v - sm - cm + grand).powi(2);
        }
    }
    let df = (kf - 1.0, (kf - 1.0) * (nf - 1.0));
    let scale = matrix.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let negligible = |ss: f64| ss <= (1e-12 * scale).powi(2) * nf * kf;
    if negligible(ss_cond) {
        return Ok(RmAnovaTable { n, k, f: 0.0, df, epsilon: 1.0, p: 1.0 });
    }
    if negligible(ss_err) {
        return Err(Error::Stats("repeated-measures ANOVA has zero residual variance".into()));
    }
    let f = (ss_cond / df.0) / (ss_err / df.1);
    let epsilon = gg_epsilon(matrix, &cond_mean)?;
    let p = f_sf(f, epsilon * df.0, epsilon * df.1)?;
    Ok(RmAnovaTable { n, k, f, df, epsilon, p })
}

/// Greenhouse-Geisser epsilon from the double-centred condition covariance.
fn gg_epsilon(matrix: &[Vec<f64>], cond_mean: &[f64]) -> Result<f64> {
    let (n, k) = (matrix.len(), cond_mean.len());
    let mut cov = vec![0.0; k * k];
    for row in matrix {
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] += (row[i] - cond_mean[i]) * (row[j] - cond_mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    let row_mean: Vec<f64> = (0..k).map(|i| cov[i * k..(i + 1) * k].iter().sum::<f64>() / k as f64).collect();
    let all_mean = row_mean.iter().sum::<f64>() / k as f64;
    let mut trace = 0.0;
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = cov[i * k + j] - row_mean[i] - row_mean[j] + all_mean;
            sq += c * c;
            if i == j {
                trace += c;
            }
        }
    }
    if !(sq > 0.0) {
        return Err(Error::Stats("degenerate condition covariance".into()));
    }
    let lower = 1.0 / (k - 1) as f64;
    Ok((trace * trace / ((k - 1) as f64 * sq)).clamp(lower, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRow {
    pub a: Condition,
    pub b: Condition,
    pub test: TTest,
    pub p_adjusted: f64,
    pub significant: bool,
}

impl PairwiseRow {
    pub fn name(&self) -> String {
        format!("{}_vs_{}", self.a.name(), self.b.name())
    }
}

/// Omnibus ANOVA plus all pairwise condition contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub q: f64,
    pub n_subjects: usize,
    pub anova: RmAnovaTable,
    pub pairs: Vec<PairwiseRow>,
}

impl ValidationReport {
    pub fn omnibus_significant(&self) -> bool {
        self.anova.p < self.q
    }

    pub fn pair(&self, a: Condition, b: Condition) -> Option<&PairwiseRow> {
        self.pairs.iter().find(|r| (r.a, r.b) == (a, b) || (r.a, r.b) == (b, a))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("comparison,statistic,df,epsilon,p_raw,p_adjusted,significant\n");
        let a = &self.anova;
        let _ = writeln!(
            s,
            "rm_anova,{},{};{},{},{},{},{}",
            a.f,
            a.df.0,
            a.df.1,
            a.epsilon,
            a.p,
            a.p,
            self.omnibus_significant()
        );
        for r in &self.pairs {
            let _ = writeln!(s, "{},{},{},,{},{},{}", r.name(), r.test.t, r.test.df, r.test.p, r.p_adjusted, r.significant);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-subject condition means in `Condition::ALL` order, subjects in order
/// of first appearance.
pub fn condition_means(samples: &[AlphaSample]) -> Result<(Vec<u16>, Vec<Vec<f64>>)> {
    let mut ids: Vec<u16> = Vec::new();
    let mut sums: Vec<[(f64, usize); 4]> = Vec::new();
    for s in samples {
        let pos = match ids.iter().position(|&id| id == s.subject_id) {
            Some(p) => p,
            None => {
                ids.push(s.subject_id);
                sums.push([(0.0, 0); 4]);
                ids.len() - 1
            }
        };
        let cell = &mut sums[pos][s.condition.code() as usize];
        cell.0 += s.power;
        cell.1 += 1;
    }
    let mut matrix = Vec::with_capacity(ids.len());
    for (id, row) in ids.iter().zip(&sums) {
        let mut means = Vec::with_capacity(4);
        for (c, &(sum, count)) in Condition::ALL.iter().zip(row) {
            if count == 0 {
                return Err(Error::Stats(format!("subject {id} has no {c} epochs")));
            }
            means.push(sum / count as f64);
        }
        matrix.push(means);
    }
    Ok((ids, matrix))
}

/// Tests whether mean alpha power differs between listening conditions.
pub fn validate_dataset(samples: &[AlphaSample], q: f64) -> Result<ValidationReport> {
    let (ids, matrix) = condition_means(samples)?;
    if ids.len() < 2 {
        return Err(Error::Stats(format!("dataset validation needs >= 2 subjects, got {}", ids.len())));
    }
    let anova = rm_anova_gg(&matrix)?;
    let mut pairs = Vec::with_capacity(6);
    for i in 0..4 {
        for j in i + 1..4 {
            let col = |c: usize| matrix.iter().map(|r| r[c]).collect::<Vec<f64>>();
            let test = paired_t(&PairedSamples::new(col(j), col(i))?)?;
            pairs.push(PairwiseRow { a: Condition::ALL[j], b: Condition::ALL[i], test, p_adjusted: 0.0, significant: false });
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|r| r.test.p).collect();
    let bh = bh_fdr(&raw, q)?;
    for (r, (adj, rej)) in pairs.iter_mut().zip(bh.adjusted.into_iter().zip(bh.rejected)) {
        r.p_adjusted = adj;
        r.significant = rej;
    }
    Ok(ValidationReport { q, n_subjects: ids.len(), anova, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: [[f64; 4]; 10] = [
        [10.002, 11.397, 9.752, 9.719],
        [9.091, 8.817, 10.42, 14.18],
        [9.016, 9.559, 11.28, 12.214],
        [10.211, 8.939, 10.241, 12.891],
        [7.312, 9.885, 6.498, 8.921],
        [6.317, 10.33, 7.765, 12.043],
        [10.314, 10.426, 5.266, 10.423],
        [9.903, 11.027, 7.24, 10.544],
        [8.043, 9.182, 12.422, 9.885],
        [9.935, 12.569, 9.133, 11.277],
    ];

    fn m() -> Vec<Vec<f64>> {
        M.iter().map(|r| r.to_vec()).collect()
    }

    fn pair(x: &[f64], y: &[f64]) -> PairedSamples {
        PairedSamples::new(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn paired_t_matches_reference() {
        let r = paired_t(&pair(&[1., 2., 3., 4., 5.], &[2., 2., 4., 4., 6.])).unwrap();
        assert!((r.t - -2.449489742783178).abs() < 1e-12);
        assert!((r.p - 0.07048399691021993).abs() < 1e-12);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn paired_t_rejects_constant_differences() {
        assert!(paired_t(&pair(&[1., 2., 3.], &[1., 2., 3.])).is_err());
        assert!(paired_t(&pair(&[2., 3., 4., 5.], &[1., 2., 3., 4.])).is_err());
        assert!(PairedSamples::new(vec![1.0], vec![2.0]).is_err());
        assert!(PairedSamples::new(vec![1.0, f64::NAN], vec![2.0, 3.0]).is_err());
    }

    #[test]
    fn bh_reference_cases() {
        let r = bh_fdr(&[0.01, 0.02, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(r.rejected, vec![true; 4]);
        assert!(r.adjusted.iter().all(|&a| (a - 0.04).abs() < 1e-15));

        let pv = [0.001, 0.008, 0.039, 0.041, 0.042, 0.06, 0.074, 0.205, 0.212, 0.216];
        let want = [0.01, 0.04, 0.084, 0.084, 0.084, 0.1, 0.10571428571428572, 0.216, 0.216, 0.216];
        let r = bh_fdr(&pv, 0.05).unwrap();
        assert_eq!(r.rejected, [true, true, false, false, false, false, false, false, false, false]);
        for (a, w) in r.adjusted.iter().zip(want) {
            assert!((a - w).abs() < 1e-12, "{a} vs {w}");
        }
    }

    #[test]
    fn bh_trivial_cases() {
        assert_eq!(bh_fdr(&[1.0, 1.0], 0.05).unwrap().rejected, vec![false, false]);
        assert_eq!(bh_fdr(&[0.01], 0.05).unwrap().rejected, vec![true]);
        assert!(bh_fdr(&[], 0.05).unwrap().rejected.is_empty());
        assert!(bh_fdr(&[1.2], 0.05).is_err());
        // Output follows input order.
        let r = bh_fdr(&[0.5, 0.001], 0.05).unwrap();
        assert_eq!(r.rejected, vec![false, true]);
    }

    #[test]
    fn anova_matches_reference() {
        let t = rm_anova_gg(&m()).unwrap();
        assert!((t.f - 4.171661804040518).abs() < 1e-10);
        assert!((t.epsilon - 0.7397921891742676).abs() < 1e-10);
        assert!((t.p - 0.027359752756524747).abs() < 1e-10);
        assert_eq!(t.df, (3.0, 27.0));
    }

    #[test]
    fn two_conditions_reduce_to_paired_t() {
        let x = [1., 2., 3., 4., 5.];
        let y = [2., 2., 4., 4., 6.];
        let t = paired_t(&pair(&x, &y)).unwrap();
        let a = rm_anova_gg(&x.iter().zip(&y).map(|(a, b)| vec![*a, *b]).collect::<Vec<_>>()).unwrap();
        assert_eq!(a.epsilon, 1.0);
        assert!((a.f - t.t * t.t).abs() < 1e-9);
        assert!((a.p - t.p).abs() < 1e-9);
    }

    #[test]
    fn identical_conditions_give_zero_f() {
        let mat: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 3]).collect();
        let t = rm_anova_gg(&mat).unwrap();
        assert_eq!((t.f, t.p), (0.0, 1.0));
        // Pure condition effect without residual.
        let mat: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, i as f64 + 1.0]).collect();
        assert!(rm_anova_gg(&mat).is_err());
        assert!(rm_anova_gg(&[vec![1.0, 2.0]]).is_err());
    }

    fn samples(powers: [f64; 4], n_subj: u16) -> Vec<AlphaSample> {
        let mut out = Vec::new();
        for s in 1..=n_subj {
            for (i, c) in Condition::ALL.into_iter().enumerate() {
                let wobble = ((s as f64 * 7.3 + i as f64 * 3.1).sin()) * 0.3;
                out.push(AlphaSample { subject_id: s, condition: c, power: powers[i] + s as f64 + wobble });
            }
        }
        out
    }

    #[test]
    fn validation_lists_six_pairs_and_finds_gap() {
        let r = validate_dataset(&samples([10.0, 12.0, 10.5, 11.5], 12), 0.05).unwrap();
        assert_eq!(r.pairs.len(), 6);
        assert!(r.omnibus_significant());
        let nc = r.pair(Condition::Noisy, Condition::Clean).unwrap();
        assert!(nc.significant && nc.test.t > 0.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(2).unwrap().starts_with("noisy_vs_clean,"));
    }

    #[test]
    fn validation_requires_every_condition() {
        let mut s = samples([1.0; 4], 3);
        s.retain(|a| !(a.subject_id == 2 && a.condition == Condition::Mmse));
        assert!(validate_dataset(&s, 0.05).is_err());
    }
}
