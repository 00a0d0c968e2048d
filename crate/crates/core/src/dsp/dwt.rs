//! Multi-level discrete wavelet transform with half-sample symmetric
//! boundary extension.

use crate::error::{Error, Result};

/// Daubechies-4 (8-tap) decomposition low-pass filter.
pub const DB4_DEC_LO: [f64; 8] = [
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl Wavelet {
    /// Builds the quadrature-mirror filter bank from an orthogonal low-pass.
    pub fn orthogonal(dec_lo: &[f64]) -> Self {
        let f = dec_lo.len();
        let dec_hi: Vec<f64> = (0..f).map(|k| if k % 2 == 0 { -dec_lo[f - 1 - k] } else { dec_lo[f - 1 - k] }).collect();
        let rec_lo = dec_lo.iter().rev().copied().collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        Wavelet { dec_lo: dec_lo.to_vec(), dec_hi, rec_lo, rec_hi }
    }

    pub fn db4() -> Self {
        Self::orthogonal(&DB4_DEC_LO)
    }

    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::orthogonal(&[h, h])
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }

    pub fn coeff_len(&self, n: usize) -> usize {
        (n + self.len() - 1) / 2
    }
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Single-level analysis: approximation and detail coefficients.
pub fn dwt(x: &[f64], w: &Wavelet) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() || x.len() < w.len() {
        return Err(Error::SignalTooShort { len: x.len(), filter_len: w.len() });
    }
    let out = w.coeff_len(x.len());
    let mut ca = vec![0.0; out];
    let mut cd = vec![0.0; out];
    for i in 0..out {
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..w.len() {
            let v = x[mirror(2 * i as isize + 1 - j as isize, x.len())];
            a += w.dec_lo[j] * v;
            d += w.dec_hi[j] * v;
        }
        ca[i] = a;
        cd[i] = d;
    }
    Ok((ca, cd))
}

/// Single-level synthesis producing `out_len` samples.
pub fn idwt(ca: &[f64], cd: &[f64], w: &Wavelet, out_len: usize) -> Result<Vec<f64>> {
    if ca.len() != cd.len() {
        return Err(Error::shape("idwt", format!("approximation {} vs detail {}", ca.len(), cd.len())));
    }
    let f = w.len();
    let full = (2 * ca.len() + 2).saturating_sub(f);
    if out_len > full {
        return Err(Error::shape("idwt", format!("{} coefficients cannot yield {out_len} samples", ca.len())));
    }
    let mut y = vec![0.0; out_len];
    for (n, yn) in y.iter_mut().enumerate() {
        // rec index k = n + f - 2 - 2i must lie in 0..f.
        let hi = (n + f - 2) / 2;
        let lo = (n + 1).saturating_sub(2).div_ceil(2);
        let mut s = 0.0;
        for i in lo..=hi.min(ca.len() - 1) {
            let k = n + f - 2 - 2 * i;
            if k < f {
                s += ca[i] * w.rec_lo[k] + cd[i] * w.rec_hi[k];
            }
        }
        *yn = s;
    }
    Ok(y)
}

/// Coefficients of a `levels`-deep decomposition, coarsest first:
/// `[cA_L, cD_L, ..., cD_1]`, plus the signal length at each level.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub bands: Vec<Vec<f64>>,
    lengths: Vec<usize>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.lengths.len()
    }

    pub fn total_len(&self) -> usize {
        self.bands.iter().map(Vec::len).sum()
    }

    pub fn concatenated(&self) -> Vec<f64> {
        self.bands.concat()
    }
}

pub fn wavedec(x: &[f64], w: &Wavelet, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::Invalid("wavelet decomposition needs at least one level".into()));
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = dwt(&approx, w)?;
        details.push(d);
        approx = a;
    }
    let mut bands = vec![approx];
    bands.extend(details.into_iter().rev());
    Ok(Pyramid { bands, lengths })
}

pub fn waverec(p: &Pyramid, w: &Wavelet) -> Result<Vec<f64>> {
    let mut approx = p.bands[0].clone();
    for (level, d) in p.bands[1..].iter().enumerate() {
        let target = p.lengths[p.lengths.len() - 1 - level];
        approx = idwt(&approx, d, w, target)?;
    }
    Ok(approx)
}

/// Lengths of `[cA_L, cD_L, ..., cD_1]` for an `n`-sample input.
pub fn band_lengths(n: usize, filter_len: usize, levels: usize) -> Vec<usize> {
    let mut lens = Vec::with_capacity(levels);
    let mut m = n;
    for _ in 0..levels {
        m = (m + filter_len - 1) / 2;
        lens.push(m);
    }
    let mut out = vec![m];
    out.extend(lens.into_iter().rev());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal() -> Vec<f64> {
        (0..23).map(|n| (0.3 * n as f64).sin() + 0.05 * (n * n) as f64 - 0.4 * (n % 3) as f64).collect()
    }

    #[test]
    fn single_level_matches_reference_coefficients() {
        // Values from an independent wavelet package, same boundary mode.
        let (ca, cd) = dwt(&signal(), &Wavelet::db4()).unwrap();
        assert_eq!(ca.len(), 15);
        let ref_a = [(0, 2.0755129291103236), (3, -0.23991913301734985), (7, 5.879342222624815), (14, 33.758064764420034)];
        let ref_d = [(0, -0.013641239309494247), (4, -0.47688208044344177), (11, 0.36499446777426575), (14, -0.5716006775618225)];
        for (i, v) in ref_a {
            assert!((ca[i] - v).abs() < 1e-12, "cA[{i}] {} vs {v}", ca[i]);
        }
        for (i, v) in ref_d {
            assert!((cd[i] - v).abs() < 1e-12, "cD[{i}] {} vs {v}", cd[i]);
        }
    }

    #[test]
    fn haar_on_constant_and_alternating_signals() {
        let r2 = 2f64.sqrt();
        let (a, d) = dwt(&[1.0, 1.0, 1.0, 1.0], &Wavelet::haar()).unwrap();
        assert!(a.iter().all(|v| (v - r2).abs() < 1e-12) && d.iter().all(|v| v.abs() < 1e-12));
        let (a, d) = dwt(&[1.0, -1.0, 1.0, -1.0], &Wavelet::haar()).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1e-12) && d.iter().all(|v| (v.abs() - r2).abs() < 1e-12));
    }

    #[test]
    fn filter_bank_is_orthonormal() {
        let w = Wavelet::db4();
        let dot = |a: &[f64], b: &[f64], shift: usize| -> f64 { (0..a.len() - shift).map(|k| a[k + shift] * b[k]).sum() };
        assert!((dot(&w.dec_lo, &w.dec_lo, 0) - 1.0).abs() < 1e-12);
        assert!((dot(&w.dec_hi, &w.dec_hi, 0) - 1.0).abs() < 1e-12);
        for s in [2, 4, 6] {
            assert!(dot(&w.dec_lo, &w.dec_lo, s).abs() < 1e-12);
        }
        assert!(dot(&w.dec_lo, &w.dec_hi, 0).abs() < 1e-12);
        assert!((w.dec_lo.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn four_level_lengths_for_downsampled_epoch() {
        let p = wavedec(&vec![1.0; 539], &Wavelet::db4(), 4).unwrap();
        let lens: Vec<usize> = p.bands.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![40, 40, 73, 140, 273]);
        assert_eq!(lens, band_lengths(539, 8, 4));
        assert_eq!(p.total_len(), 566);
    }

    #[test]
    fn reconstructs_odd_and_even_lengths() {
        let w = Wavelet::db4();
        for n in [8usize, 9, 23, 64, 539] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3 + (i as f64 * 0.1).cos()).collect();
            let levels = if n >= 64 { 3 } else { 1 };
            let y = waverec(&wavedec(&x, &w, levels).unwrap(), &w).unwrap();
            assert_eq!(y.len(), n);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n}: {err}");
        }
    }

    #[test]
    fn rejects_too_short_signal() {
        assert!(matches!(wavedec(&[1.0; 7], &Wavelet::db4(), 1), Err(Error::SignalTooShort { .. })));
        assert!(wavedec(&[1.0; 16], &Wavelet::db4(), 0).is_err());
    }
}
