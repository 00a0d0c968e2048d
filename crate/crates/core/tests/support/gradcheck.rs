//! Random miniature networks checked against central differences of an
//! independent f64 forward pass.
#![allow(dead_code)]


use effortnet::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f32 = 1e-3;
const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

#[derive(Debug, Clone)]
pub enum Head {
    /// pool -> flatten -> dense -> relu -> dense -> sigmoid -> BCE
    Classify { hidden: usize, labels: Vec<f32> },
    /// pool -> upsample -> 3x3 conv -> x + (-0.25 x) -> (masked) MSE against the input
    Reconstruct { mask: Option<Vec<bool>> },
}

#[derive(Debug, Clone)]
pub struct Net {
    pub dims: [usize; 4],
    pub input: Vec<f32>,
    pub conv: Conv,
    pub pool: [usize; 4],
    pub head: Head,
    pub params: Vec<Param>,
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * scale).collect()
}

fn out_len(len: usize, k: usize, s: usize, p: usize) -> usize {
    (len + 2 * p - k) / s + 1
}

impl Net {
    pub fn random(seed: u64, reconstruct: bool) -> Net {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let (h, w) = (rng.random_range(4..=7), rng.random_range(4..=8));
        let conv = Conv {
            o: rng.random_range(1..=3),
            kh: rng.random_range(1..=3),
            kw: rng.random_range(1..=3),
            sh: rng.random_range(1..=2),
            sw: rng.random_range(1..=2),
            ph: rng.random_range(0..=1),
            pw: rng.random_range(0..=1),
        };
        let ho = out_len(h, conv.kh, conv.sh, conv.ph);
        let wo = out_len(w, conv.kw, conv.sw, conv.pw);
        let pool = [ho.min(2), wo.min(2), rng.random_range(1..=2), rng.random_range(1..=2)];
        let input = normal(&mut rng, n * c * h * w, 1.0);
        let fan = (c * conv.kh * conv.kw) as f32;
        let mut params = vec![
            Param { shape: vec![conv.o, c, conv.kh, conv.kw], data: normal(&mut rng, conv.o * c * conv.kh * conv.kw, fan.sqrt().recip()) },
            Param { shape: vec![conv.o], data: normal(&mut rng, conv.o, 0.1) },
        ];
        let head = if reconstruct {
            params.push(Param { shape: vec![c, conv.o, 3, 3], data: normal(&mut rng, c * conv.o * 9, (conv.o as f32 * 9.0).sqrt().recip()) });
            params.push(Param { shape: vec![c], data: normal(&mut rng, c, 0.1) });
            let mask = rng.random_bool(0.5).then(|| {
                let mut m: Vec<bool> = (0..n * c * h * w).map(|_| rng.random_bool(0.4)).collect();
                m[0] = true;
                m
            });
            Head::Reconstruct { mask }
        } else {
            let (po, pwo) = (out_len(ho, pool[0], pool[2], 0), out_len(wo, pool[1], pool[3], 0));
            let feat = conv.o * po * pwo;
            let hidden = rng.random_range(2..=5);
            params.push(Param { shape: vec![hidden, feat], data: normal(&mut rng, hidden * feat, (feat as f32).sqrt().recip()) });
            params.push(Param { shape: vec![hidden], data: normal(&mut rng, hidden, 0.1) });
            params.push(Param { shape: vec![1, hidden], data: normal(&mut rng, hidden, 1.0) });
            params.push(Param { shape: vec![1], data: normal(&mut rng, 1, 0.1) });
            let labels = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            Head::Classify { hidden, labels }
        };
        Net { dims: [n, c, h, w], input, conv, pool, head, params }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Loss and parameter gradients from the autodiff tape.
    pub fn tape(&self) -> (f64, Vec<Vec<f32>>) {
        let [n, c, h, w] = self.dims;
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&self.dims, self.input.clone()).unwrap());
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(&Tensor::new(&p.shape, p.data.clone()).unwrap())).collect();
        let cv = self.conv;
        let z = tape.conv2d(x, vars[0], vars[1], (cv.sh, cv.sw), (cv.ph, cv.pw)).unwrap();
        let a = tape.relu(z).unwrap();
        let p = tape.max_pool2d(a, (self.pool[0], self.pool[1]), (self.pool[2], self.pool[3])).unwrap();
        let loss = match &self.head {
            Head::Classify { labels, .. } => {
                let feat = tape.value(p).len() / n;
                let f = tape.reshape(p, &[n, feat]).unwrap();
                let d1 = tape.dense(f, vars[2], vars[3]).unwrap();
                let r1 = tape.relu(d1).unwrap();
                let d2 = tape.dense(r1, vars[4], vars[5]).unwrap();
                let s = tape.sigmoid(d2).unwrap();
                let s = tape.reshape(s, &[n]).unwrap();
                tape.bce_loss(s, labels).unwrap()
            }
            Head::Reconstruct { mask } => {
                let u = tape.upsample_nearest(p, h, w).unwrap();
                let d = tape.conv2d(u, vars[2], vars[3], (1, 1), (1, 1)).unwrap();
                let q = tape.scale(d, -0.25).unwrap();
                let y = tape.add(d, q).unwrap();
                let target = tape.constant(&Tensor::new(&[n, c, h, w], self.input.clone()).unwrap());
                match mask {
                    Some(m) => tape.masked_mse_loss(y, target, m.clone()).unwrap(),
                    None => tape.mse_loss(y, target).unwrap(),
                }
            }
        };
        tape.backward(loss).unwrap();
        let l = tape.scalar(loss) as f64;
        (l, vars.iter().map(|v| tape.grad(*v).unwrap().to_vec()).collect())
    }

    /// Loss in f64 plus the activation pattern (ReLU signs, pool winners,
    /// probability clamps) that the loss is smooth within.
    pub fn reference(&self, params: &[Vec<f64>]) -> (f64, Vec<u32>) {
        let [n, c, h, w] = self.dims;
        let x: Vec<f64> = self.input.iter().map(|&v| v as f64).collect();
        let mut pattern = Vec::new();
        let cv = self.conv;
        let (z, ho, wo) = conv_ref(&x, [n, c, h, w], &params[0], &params[1], cv);
        let a = relu_ref(&z, &mut pattern);
        let (p, po, pwo) = pool_ref(&a, [n, cv.o, ho, wo], self.pool, &mut pattern);
        match &self.head {
            Head::Classify { hidden, labels } => {
                let feat = cv.o * po * pwo;
                let mut loss = 0.0;
                for (i, y) in labels.iter().enumerate() {
                    let f = &p[i * feat..(i + 1) * feat];
                    let d1 = dense_ref(f, &params[2], &params[3], *hidden);
                    let r1 = relu_ref(&d1, &mut pattern);
                    let d2 = dense_ref(&r1, &params[4], &params[5], 1)[0];
                    let s = 1.0 / (1.0 + (-d2).exp());
                    pattern.push(u32::from(s < PROB_FLOOR) + 2 * u32::from(s > 1.0 - PROB_FLOOR));
                    let s = s.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    let y = *y as f64;
                    loss -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
                }
                (loss / n as f64, pattern)
            }
            Head::Reconstruct { mask } => {
                let u = upsample_ref(&p, [n, cv.o, po, pwo], h, w);
                let dec = Conv { o: c, kh: 3, kw: 3, sh: 1, sw: 1, ph: 1, pw: 1 };
                let (d, _, _) = conv_ref(&u, [n, cv.o, h, w], &params[2], &params[3], dec);
                let (mut acc, mut count) = (0.0, 0usize);
                for i in 0..d.len() {
                    if mask.as_ref().is_none_or(|m| m[i]) {
                        let e = 0.75 * d[i] - x[i];
                        acc += e * e;
                        count += 1;
                    }
                }
                (acc / count as f64, pattern)
            }
        }
    }
}

fn conv_ref(x: &[f64], [n, c, h, w]: [usize; 4], k: &[f64], b: &[f64], cv: Conv) -> (Vec<f64>, usize, usize) {
    let ho = out_len(h, cv.kh, cv.sh, cv.ph);
    let wo = out_len(w, cv.kw, cv.sw, cv.pw);
    let mut out = vec![0.0; n * cv.o * ho * wo];
    for bi in 0..n {
        for o in 0..cv.o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[o];
                    for ci in 0..c {
                        for ky in 0..cv.kh {
                            for kx in 0..cv.kw {
                                let iy = (oy * cv.sh + ky) as isize - cv.ph as isize;
                                let ix = (ox * cv.sw + kx) as isize - cv.pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += k[((o * c + ci) * cv.kh + ky) * cv.kw + kx] * x[((bi * c + ci) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((bi * cv.o + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    (out, ho, wo)
}

fn relu_ref(z: &[f64], pattern: &mut Vec<u32>) -> Vec<f64> {
    z.iter()
        .map(|&v| {
            pattern.push(u32::from(v > 0.0));
            v.max(0.0)
        })
        .collect()
}

fn pool_ref(a: &[f64], [n, c, h, w]: [usize; 4], [wh, ww, sh, sw]: [usize; 4], pattern: &mut Vec<u32>) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = (out_len(h, wh, sh, 0), out_len(w, ww, sw, 0));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (f64::NEG_INFINITY, 0u32);
                for dy in 0..wh {
                    for dx in 0..ww {
                        let idx = plane * h * w + (oy * sh + dy) * w + ox * sw + dx;
                        if a[idx] > best.0 {
                            best = (a[idx], idx as u32);
                        }
                    }
                }
                out.push(best.0);
                pattern.push(best.1);
            }
        }
    }
    (out, ho, wo)
}

fn upsample_ref(p: &[f64], [n, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(p[plane * h * w + (oy * h / oh) * w + ox * w / ow]);
            }
        }
    }
    out
}

fn dense_ref(x: &[f64], wt: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    (0..out).map(|j| b[j] + x.iter().enumerate().map(|(i, v)| wt[j * x.len() + i] * v).sum::<f64>()).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Check {
    /// ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||) over smooth components.
    pub rel_err: f64,
    pub forward_gap: f64,
    pub compared: usize,
    pub excluded: usize,
}

/// Central differences with the f32 parameter stepped by `H`; components
/// whose step crosses a ReLU, pool or clamp boundary are excluded.
pub fn check(net: &Net) -> Check {
    let (tape_loss, grads) = net.tape();
    compare(net, tape_loss, &grads)
}

pub fn compare(net: &Net, tape_loss: f64, grads: &[Vec<f32>]) -> Check {
    let base: Vec<Vec<f64>> = net.params.iter().map(|p| p.data.iter().map(|&v| v as f64).collect()).collect();
    let (ref_loss, pattern) = net.reference(&base);
    let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
    let (mut compared, mut excluded) = (0, 0);
    for (pi, p) in net.params.iter().enumerate() {
        for i in 0..p.data.len() {
            let (up, dn) = (p.data[i] + H, p.data[i] - H);
            let mut q = base.clone();
            q[pi][i] = up as f64;
            let (lu, pu) = net.reference(&q);
            q[pi][i] = dn as f64;
            let (ld, pd) = net.reference(&q);
            if pu != pattern || pd != pattern {
                excluded += 1;
                continue;
            }
            let fd = (lu - ld) / (up as f64 - dn as f64);
            let ad = grads[pi][i] as f64;
            diff += (ad - fd).powi(2);
            na += ad * ad;
            nf += fd * fd;
            compared += 1;
        }
    }
    let denom = na.sqrt().max(nf.sqrt());
    let rel_err = if denom < 1e-12 { diff.sqrt() } else { diff.sqrt() / denom };
    Check { rel_err, forward_gap: (tape_loss - ref_loss).abs() / ref_loss.abs().max(1.0), compared, excluded }
}
