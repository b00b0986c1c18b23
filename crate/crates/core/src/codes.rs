//! Binary codes over {-1, +1} and their packed form.
//!
//! Packed layout: each row takes `ceil(L / 8)` bytes; bit `j` of a row lives in
//! byte `j / 8` at position `j % 8` (least significant bit first) and is set
//! when the code entry is `+1`. Padding bits are always zero.

use nalgebra::DMatrix;

use crate::error::{Result, ScqError};
use crate::linalg::{FeatureMatrix, ProjectionMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    n: usize,
    bits: usize,
    /// Row-major signs, `n * bits` entries of -1 or +1.
    signs: Vec<i8>,
    packed: Vec<u8>,
}

pub fn bytes_per_row(bits: usize) -> usize {
    bits.div_ceil(8)
}

impl BinaryCodes {
    /// Builds codes from row-major signs. Every entry must be -1 or +1.
    pub fn from_signs(n: usize, bits: usize, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != n * bits {
            return Err(ScqError::InvalidInput(format!(
                "expected {} signs for {n}x{bits} codes, got {}",
                n * bits,
                signs.len()
            )));
        }
        if let Some(pos) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(ScqError::InvalidInput(format!(
                "code entry {} at row {}, bit {} is not +-1",
                signs[pos],
                pos / bits.max(1),
                pos % bits.max(1)
            )));
        }
        let packed = pack(n, bits, &signs);
        Ok(Self { n, bits, signs, packed })
    }

    /// Builds codes from packed rows; nonzero padding bits are rejected.
    pub fn from_packed(n: usize, bits: usize, packed: Vec<u8>) -> Result<Self> {
        let stride = bytes_per_row(bits);
        if packed.len() != n * stride {
            return Err(ScqError::InvalidInput(format!(
                "expected {} packed bytes for {n}x{bits} codes, got {}",
                n * stride,
                packed.len()
            )));
        }
        let pad_mask = padding_mask(bits);
        if pad_mask != 0 {
            for i in 0..n {
                if packed[(i + 1) * stride - 1] & pad_mask != 0 {
                    return Err(ScqError::InvalidInput(format!("row {i} has nonzero padding bits")));
                }
            }
        }
        let mut signs = Vec::with_capacity(n * bits);
        for row in packed.chunks_exact(stride.max(1)).take(n) {
            for j in 0..bits {
                signs.push(if row[j / 8] >> (j % 8) & 1 == 1 { 1 } else { -1 });
            }
        }
        Ok(Self { n, bits, signs, packed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn get(&self, row: usize, bit: usize) -> i8 {
        self.signs[row * self.bits + bit]
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn stride(&self) -> usize {
        bytes_per_row(self.bits)
    }

    pub fn packed_row(&self, row: usize) -> &[u8] {
        let s = self.stride();
        &self.packed[row * s..(row + 1) * s]
    }

    /// Codes as an `n x L` real matrix of +-1.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.bits, self.signs.iter().map(|&s| s as f64))
    }
}

/// Mask of the unused high bits in the last byte of a row.
pub(crate) fn padding_mask(bits: usize) -> u8 {
    match bits % 8 {
        0 => 0,
        r => !((1u8 << r) - 1),
    }
}

fn pack(n: usize, bits: usize, signs: &[i8]) -> Vec<u8> {
    let stride = bytes_per_row(bits);
    let mut out = vec![0u8; n * stride];
    for i in 0..n {
        let row = &mut out[i * stride..(i + 1) * stride];
        for j in 0..bits {
            if signs[i * bits + j] > 0 {
                row[j / 8] |= 1 << (j % 8);
            }
        }
    }
    out
}

/// Element-wise sign with `sign(0) = +1`.
pub fn sign_codes(u: &DMatrix<f64>) -> BinaryCodes {
    let (n, bits) = u.shape();
    let mut signs = Vec::with_capacity(n * bits);
    for i in 0..n {
        for j in 0..bits {
            signs.push(if u[(i, j)] >= 0.0 { 1 } else { -1 });
        }
    }
    let packed = pack(n, bits, &signs);
    BinaryCodes { n, bits, signs, packed }
}

/// B-step: `B = sign(XV)`.
pub fn compute_b(x: &FeatureMatrix, v: &ProjectionMatrix) -> Result<BinaryCodes> {
    if x.d() != v.d() {
        return Err(ScqError::InvalidInput(format!(
            "feature dimension {} does not match projection rows {}",
            x.d(),
            v.d()
        )));
    }
    Ok(sign_codes(&x.project(v.data())))
}
