use rand::seq::index;

use crate::dsp::InputMap;
use crate::error::{Error, Result};
use crate::seed;

/// Column-span masking. The map is cut into `cols / span` slots and whole
/// slots are zeroed across every channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    /// Target fraction of masked columns; 0 disables masking.
    pub ratio: f64,
    pub span: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec { ratio: 0.25, span: 8, seed: 0 }
    }
}

impl MaskSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        MaskSpec { seed, ..self }
    }

    pub fn validate(&self, cols: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::Invalid(format!("mask ratio {} outside [0, 1)", self.ratio)));
        }
        if self.span == 0 || self.span > cols {
            return Err(Error::Invalid(format!("mask span {} for {cols} columns", self.span)));
        }
        Ok(())
    }

    /// Number of spans masked on a map with `cols` columns.
    pub fn n_spans(&self, cols: usize) -> usize {
        if self.ratio == 0.0 {
            return 0;
        }
        let slots = cols / self.span;
        ((self.ratio * cols as f64 / self.span as f64).round() as usize).clamp(1, slots)
    }
}

/// Masked copy of `x` and the per-cell mask (true where zeroed).
pub fn mask_input(x: &InputMap, spec: &MaskSpec) -> Result<(InputMap, Vec<bool>)> {
    spec.validate(x.cols)?;
    let slots = x.cols / spec.span;
    let mut rng = seed::rng(spec.seed);
    let mut col_masked = vec![false; x.cols];
    for slot in index::sample(&mut rng, slots, spec.n_spans(x.cols)) {
        col_masked[slot * spec.span..(slot + 1) * spec.span].fill(true);
    }
    let mut out = x.clone();
    let mut mask = Vec::with_capacity(x.data.len());
    for row in out.data.chunks_exact_mut(x.cols) {
        for (v, &m) in row.iter_mut().zip(&col_masked) {
            if m {
                *v = 0.0;
            }
        }
        mask.extend_from_slice(&col_masked);
    }
    Ok((out, mask))
}
