//! Chebyshev type II band-pass design and second-order-section filtering.
//!
//! Design follows the classic analog route: normalised low-pass prototype
//! (stop-band edge at 1 rad/s), low-pass to band-pass transform about the
//! pre-warped stop-band edges, then the bilinear transform. The resulting
//! zeros and poles are paired into biquads.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Band-pass Chebyshev-II specification. Edges in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub pass_lo: f64,
    pub pass_hi: f64,
    pub stop_lo: f64,
    pub stop_hi: f64,
    pub attenuation_db: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { order: 5, pass_lo: 8.0, pass_hi: 13.0, stop_lo: 6.0, stop_hi: 16.0, attenuation_db: 40.0 }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        let nyq = fs / 2.0;
        if self.order == 0 {
            return Err(Error::InfeasibleFilter("order must be positive".into()));
        }
        if !(self.attenuation_db > 0.0) {
            return Err(Error::InfeasibleFilter(format!("attenuation {} dB must be positive", self.attenuation_db)));
        }
        let edges = [0.0, self.stop_lo, self.pass_lo, self.pass_hi, self.stop_hi, nyq];
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InfeasibleFilter(format!(
                "edges must satisfy 0 < {} < {} < {} < {} < {nyq}",
                self.stop_lo, self.pass_lo, self.pass_hi, self.stop_hi
            )));
        }
        Ok(())
    }
}

/// One biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn poles(&self) -> [Complex64; 2] {
        quadratic_roots(self.a[0], self.a[1], self.a[2])
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    if a == 0.0 {
        return [Complex64::new(-c / b, 0.0), Complex64::new(0.0, 0.0)];
    }
    let disc = Complex64::new(b * b - 4.0 * a * c, 0.0).sqrt();
    [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)]
}

/// Cascade of biquads with the sampling rate it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl Sos {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections.iter().flat_map(|s| s.poles()).map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Single causal pass, transposed direct form II, with optional
    /// per-section initial states.
    pub fn filter_in_place(&self, x: &mut [f64], init: Option<&[[f64; 2]]>) {
        for (k, s) in self.sections.iter().enumerate() {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            let [mut z0, mut z1] = init.map_or([0.0, 0.0], |zi| zi[k]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z0;
                z0 = b1 * xin - a1 * y + z1;
                z1 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Per-section states that make a unit step start in steady state.
    pub fn step_initial_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2] = s.b;
                let [a0, a1, a2] = s.a;
                let dc = (b0 + b1 + b2) / (a0 + a1 + a2);
                let z1 = b2 - a2 * dc;
                let z0 = b1 - a1 * dc + z1;
                let zi = [z0 * scale, z1 * scale];
                scale *= dc;
                zi
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-symmetric padding of
    /// `pad` samples on each side (clipped to `len - 1`).
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_initial_state();
        let scaled = |z: &[[f64; 2]], v: f64| z.iter().map(|s| [s[0] * v, s[1] * v]).collect::<Vec<_>>();
        let init = scaled(&zi, ext[0]);
        self.filter_in_place(&mut ext, Some(&init));
        ext.reverse();
        let init = scaled(&zi, ext[0]);
        self.filter_in_place(&mut ext, Some(&init));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Chebyshev-II low-pass prototype with the stop-band edge at 1 rad/s.
fn cheby2_prototype(order: usize, attenuation_db: f64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let n = order as f64;
    let de = 1.0 / (10f64.powf(0.1 * attenuation_db) - 1.0).sqrt();
    let mu = (1.0 / de).asinh() / n;
    let ms: Vec<i64> = if order % 2 == 1 {
        (-(order as i64) + 1..0).step_by(2).chain((2..order as i64).step_by(2)).collect()
    } else {
        (-(order as i64) + 1..order as i64).step_by(2).collect()
    };
    let zeros: Vec<Complex64> =
        ms.iter().map(|&m| -(Complex64::i() / (m as f64 * PI / (2.0 * n)).sin()).conj()).collect();
    let poles: Vec<Complex64> = (-(order as i64) + 1..order as i64)
        .step_by(2)
        .map(|m| {
            let p = -Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n));
            let warped = Complex64::new(mu.sinh() * p.re, mu.cosh() * p.im);
            1.0 / warped
        })
        .collect();
    let num: Complex64 = poles.iter().map(|p| -p).product();
    let den: Complex64 = zeros.iter().map(|z| -z).product();
    (zeros, poles, (num / den).re)
}

fn lowpass_to_bandpass(z: &[Complex64], p: &[Complex64], k: f64, w0: f64, bw: f64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let degree = p.len() - z.len();
    let split = |roots: &[Complex64]| -> Vec<Complex64> {
        let scaled: Vec<Complex64> = roots.iter().map(|r| r * (bw / 2.0)).collect();
        let mut out: Vec<Complex64> = scaled.iter().map(|r| r + (r * r - w0 * w0).sqrt()).collect();
        out.extend(scaled.iter().map(|r| r - (r * r - w0 * w0).sqrt()));
        out
    };
    let mut zb = split(z);
    zb.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    (zb, split(p), k * bw.powi(degree as i32))
}

fn bilinear(z: &[Complex64], p: &[Complex64], k: f64, fs: f64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let fs2 = 2.0 * fs;
    let degree = p.len() - z.len();
    let mut zd: Vec<Complex64> = z.iter().map(|r| (fs2 + r) / (fs2 - r)).collect();
    let pd: Vec<Complex64> = p.iter().map(|r| (fs2 + r) / (fs2 - r)).collect();
    zd.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    let num: Complex64 = z.iter().map(|r| fs2 - r).product();
    let den: Complex64 = p.iter().map(|r| fs2 - r).product();
    (zd, pd, k * (num / den).re)
}

/// Groups roots into conjugate pairs (upper-half-plane representative) and
/// real roots.
fn split_conjugates(roots: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
    let tol = 1e-10;
    let complex = roots.iter().filter(|r| r.im > tol).copied().collect();
    let real = roots.iter().filter(|r| r.im.abs() <= tol).map(|r| r.re).collect();
    (complex, real)
}

/// A pole or zero pair as quadratic coefficients `[1, c1, c2]`.
#[derive(Debug, Clone, Copy)]
enum Pair {
    Complex(Complex64),
    Real(f64, f64),
    Single(f64),
}

impl Pair {
    fn coeffs(self) -> [f64; 3] {
        match self {
            Pair::Complex(r) => [1.0, -2.0 * r.re, r.norm_sqr()],
            Pair::Real(a, b) => [1.0, -(a + b), a * b],
            Pair::Single(a) => [1.0, -a, 0.0],
        }
    }

    fn anchor(self) -> Complex64 {
        match self {
            Pair::Complex(r) => r,
            Pair::Real(a, b) => Complex64::new(if a.abs() > b.abs() { a } else { b }, 0.0),
            Pair::Single(a) => Complex64::new(a, 0.0),
        }
    }
}

fn pairs(roots: &[Complex64]) -> Vec<Pair> {
    let (complex, mut real) = split_conjugates(roots);
    real.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let mut out: Vec<Pair> = complex.into_iter().map(Pair::Complex).collect();
    let mut it = real.chunks(2);
    for ch in &mut it {
        out.push(if ch.len() == 2 { Pair::Real(ch[0], ch[1]) } else { Pair::Single(ch[0]) });
    }
    out
}

fn zpk_to_sos(z: &[Complex64], p: &[Complex64], k: f64, fs: f64) -> Sos {
    let mut pole_pairs = pairs(p);
    let mut zero_pairs = pairs(z);
    // Poles nearest the unit circle get their zeros first and end up last
    // in the cascade.
    pole_pairs.sort_by(|a, b| (1.0 - a.anchor().norm()).abs().total_cmp(&(1.0 - b.anchor().norm()).abs()));
    let mut sections = Vec::with_capacity(pole_pairs.len().max(zero_pairs.len()));
    for pp in &pole_pairs {
        let zero = if zero_pairs.is_empty() {
            None
        } else {
            let best = (0..zero_pairs.len())
                .min_by(|&i, &j| {
                    (zero_pairs[i].anchor() - pp.anchor()).norm().total_cmp(&(zero_pairs[j].anchor() - pp.anchor()).norm())
                })
                .unwrap();
            Some(zero_pairs.remove(best))
        };
        sections.push(Biquad { b: zero.map_or([1.0, 0.0, 0.0], Pair::coeffs), a: pp.coeffs() });
    }
    for zp in zero_pairs {
        sections.push(Biquad { b: zp.coeffs(), a: [1.0, 0.0, 0.0] });
    }
    sections.reverse();
    if let Some(first) = sections.first_mut() {
        first.b.iter_mut().for_each(|c| *c *= k);
    }
    Sos { sections, fs }
}

/// Designs the digital Chebyshev-II band-pass described by `spec`.
///
/// Fails when the edges are inconsistent, when the result is unstable, or
/// when the pass-band edges fall more than 3 dB below unity.
pub fn design_cheby2_bandpass(spec: &FilterSpec, fs: f64) -> Result<Sos> {
    spec.validate(fs)?;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (w1, w2) = (warp(spec.stop_lo), warp(spec.stop_hi));
    let (z, p, k) = cheby2_prototype(spec.order, spec.attenuation_db);
    let (z, p, k) = lowpass_to_bandpass(&z, &p, k, (w1 * w2).sqrt(), w2 - w1);
    let (z, p, k) = bilinear(&z, &p, k, fs);
    let sos = zpk_to_sos(&z, &p, k, fs);
    if !(sos.max_pole_radius() < 1.0) {
        return Err(Error::InfeasibleFilter(format!("unstable design (pole radius {})", sos.max_pole_radius())));
    }
    for edge in [spec.pass_lo, spec.pass_hi] {
        let db = sos.magnitude_db(edge);
        if !(db >= -3.0) {
            return Err(Error::InfeasibleFilter(format!(
                "{db:.2} dB at pass-band edge {edge} Hz; order {} cannot reach {} dB at {}-{} Hz",
                spec.order, spec.attenuation_db, spec.stop_lo, spec.stop_hi
            )));
        }
    }
    Ok(sos)
}
