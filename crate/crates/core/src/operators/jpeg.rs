//! Grayscale block-DCT codec standing in for JPEG.
//!
//! Pixels in `[0, 1]` are scaled to `[-128, 127]`, transformed with an
//! orthonormal 8x8 DCT-II, divided by the quality-scaled luminance table,
//! rounded, multiplied back and inverse transformed. No entropy coding.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const BLOCK: usize = 8;

/// Baseline luminance quantisation table, row-major.
pub const LUMA_TABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-factor scaling: `50 / QF` below 50, `2 - QF / 50` otherwise;
/// entries rounded and clamped to `[1, 255]`.
pub fn scaled_table(quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidParameter(format!("quality factor {quality} outside [1, 100]")));
    }
    let q = quality as f64;
    let scale = if quality < 50 { 50.0 / q } else { 2.0 - q / 50.0 };
    let mut table = [0.0; 64];
    for (out, base) in table.iter_mut().zip(LUMA_TABLE) {
        *out = (base * scale + 0.5).floor().clamp(1.0, 255.0);
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct ToyJpeg {
    side: usize,
    quality: u32,
    table: [f64; 64],
    /// `basis[u][i] = c(u) cos((2i + 1) u pi / 16)`
    basis: [[f64; BLOCK]; BLOCK],
}

impl ToyJpeg {
    pub fn new(side: usize, quality: u32) -> Result<Self> {
        if side == 0 || !side.is_multiple_of(BLOCK) {
            return Err(Error::InvalidParameter(format!(
                "toy-jpeg image side {side} is not a multiple of {BLOCK}"
            )));
        }
        let table = scaled_table(quality)?;
        let mut basis = [[0.0; BLOCK]; BLOCK];
        for (u, row) in basis.iter_mut().enumerate() {
            let c = if u == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (i, b) in row.iter_mut().enumerate() {
                *b = c * ((2 * i + 1) as f64 * u as f64 * PI / (2 * BLOCK) as f64).cos();
            }
        }
        Ok(ToyJpeg {
            side,
            quality,
            table,
            basis,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn quality(&self) -> u32 {
        self.quality
    }

    pub fn table(&self) -> &[f64; 64] {
        &self.table
    }

    pub fn forward_dct(&self, block: &[f64; 64]) -> [f64; 64] {
        self.separable(block, false)
    }

    pub fn inverse_dct(&self, coeffs: &[f64; 64]) -> [f64; 64] {
        self.separable(coeffs, true)
    }

    fn separable(&self, input: &[f64; 64], inverse: bool) -> [f64; 64] {
        let b = &self.basis;
        let coef = |u: usize, i: usize| if inverse { b[i][u] } else { b[u][i] };
        let mut tmp = [0.0; 64];
        for r in 0..BLOCK {
            for u in 0..BLOCK {
                tmp[r * BLOCK + u] = (0..BLOCK).map(|i| coef(u, i) * input[r * BLOCK + i]).sum();
            }
        }
        let mut out = [0.0; 64];
        for v in 0..BLOCK {
            for c in 0..BLOCK {
                out[v * BLOCK + c] = (0..BLOCK).map(|j| coef(v, j) * tmp[j * BLOCK + c]).sum();
            }
        }
        out
    }

    /// Encode/decode round trip of a row-major `side x side` image.
    pub fn roundtrip(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.side;
        let mut out = DVector::zeros(n * n);
        for by in (0..n).step_by(BLOCK) {
            for bx in (0..n).step_by(BLOCK) {
                let mut block = [0.0; 64];
                for r in 0..BLOCK {
                    for c in 0..BLOCK {
                        let px = x[(by + r) * n + bx + c].clamp(0.0, 1.0);
                        block[r * BLOCK + c] = px * 255.0 - 128.0;
                    }
                }
                let mut coeffs = self.forward_dct(&block);
                for (f, q) in coeffs.iter_mut().zip(self.table.iter()) {
                    *f = (*f / q).round() * q;
                }
                let recon = self.inverse_dct(&coeffs);
                for r in 0..BLOCK {
                    for c in 0..BLOCK {
                        out[(by + r) * n + bx + c] = ((recon[r * BLOCK + c] + 128.0) / 255.0).clamp(0.0, 1.0);
                    }
                }
            }
        }
        out
    }
}
