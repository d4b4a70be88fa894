//! Dense matrices and the scalar matmul oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::ElemType;

/// Row-major matrix of one element type.
///
/// Elements are held as 32-bit patterns: f32 bits for floats, the
/// sign-extended value for integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub etype: ElemType,
    pub data: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("inner dimensions differ: A is {a_rows}x{a_cols}, B is {b_rows}x{b_cols}")]
    Mismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("element types differ: {0} and {1}")]
    ElemType(ElemType, ElemType),
    #[error("{got} bytes do not hold a {rows}x{cols} {etype} matrix")]
    Size {
        rows: usize,
        cols: usize,
        etype: ElemType,
        got: usize,
    },
    #[error("empty dimension")]
    Empty,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize, etype: ElemType) -> Self {
        Self {
            rows,
            cols,
            etype,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, etype: ElemType, mut f: impl FnMut(usize, usize) -> u32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            rows,
            cols,
            etype,
            data,
        }
    }

    pub fn identity(n: usize, etype: ElemType) -> Self {
        let one = if etype.is_float() { 1.0f32.to_bits() } else { 1 };
        Self::from_fn(n, n, etype, |r, c| if r == c { one } else { 0 })
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, self.etype, |r, c| self.get(c, r))
    }

    /// Packed little-endian bytes, `sew` bits per element.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.etype.sew_bytes() as usize;
        self.data
            .iter()
            .flat_map(|v| v.to_le_bytes().into_iter().take(w))
            .collect()
    }

    pub fn from_bytes(rows: usize, cols: usize, etype: ElemType, bytes: &[u8]) -> Result<Self, MatrixError> {
        let w = etype.sew_bytes() as usize;
        if bytes.len() != rows * cols * w {
            return Err(MatrixError::Size {
                rows,
                cols,
                etype,
                got: bytes.len(),
            });
        }
        let data = bytes
            .chunks(w)
            .map(|c| match etype {
                ElemType::I8 => c[0] as i8 as i32 as u32,
                ElemType::I16 => i16::from_le_bytes([c[0], c[1]]) as i32 as u32,
                ElemType::I32 | ElemType::F32 => u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            etype,
            data,
        })
    }

    /// Copy into a larger zero matrix.
    pub fn padded(&self, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, self.etype, |r, c| {
            if r < self.rows && c < self.cols {
                self.get(r, c)
            } else {
                0
            }
        })
    }

    pub fn cropped(&self, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, self.etype, |r, c| self.get(r, c))
    }
}

/// Element type of the 32-bit accumulators an `etype` product lands in.
pub fn accumulator_type(etype: ElemType) -> ElemType {
    if etype.is_float() {
        ElemType::F32
    } else {
        ElemType::I32
    }
}

/// `C = A * B` for row-major `A` (M x K) and `B` (K x N).
///
/// Each output is one ascending-k chain starting from zero: fused
/// multiply-adds for f32, wrapping 32-bit arithmetic for integers. That is
/// the order the generated kernel accumulates in, so results compare
/// bit-for-bit.
pub fn reference_matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, MatrixError> {
    if a.etype != b.etype {
        return Err(MatrixError::ElemType(a.etype, b.etype));
    }
    if a.cols != b.rows {
        return Err(MatrixError::Mismatch {
            a_rows: a.rows,
            a_cols: a.cols,
            b_rows: b.rows,
            b_cols: b.cols,
        });
    }
    if a.rows == 0 || a.cols == 0 || b.cols == 0 {
        return Err(MatrixError::Empty);
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let out = accumulator_type(a.etype);
    Ok(Matrix::from_fn(m, n, out, |i, j| {
        if a.etype.is_float() {
            let mut acc = 0.0f32;
            for kk in 0..k {
                acc = f32::from_bits(a.get(i, kk)).mul_add(f32::from_bits(b.get(kk, j)), acc);
            }
            acc.to_bits()
        } else {
            let mut acc = 0i32;
            for kk in 0..k {
                acc = acc.wrapping_add((a.get(i, kk) as i32).wrapping_mul(b.get(kk, j) as i32));
            }
            acc as u32
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(rows: usize, cols: usize, etype: ElemType, vals: &[i32]) -> Matrix {
        Matrix {
            rows,
            cols,
            etype,
            data: vals.iter().map(|&v| v as u32).collect(),
        }
    }

    #[test]
    fn zero_and_identity() {
        let b = Matrix::from_fn(4, 4, ElemType::F32, |r, c| ((r * 4 + c) as f32 * 0.5).to_bits());
        let z = reference_matmul(&Matrix::zeros(4, 4, ElemType::F32), &b).unwrap();
        assert!(z.data.iter().all(|&v| f32::from_bits(v) == 0.0));
        assert_eq!(reference_matmul(&Matrix::identity(4, ElemType::F32), &b).unwrap(), b);
    }

    #[test]
    fn small_integer_product() {
        let a = ints(2, 3, ElemType::I8, &[1, -2, 3, 4, 5, -6]);
        let b = ints(3, 2, ElemType::I8, &[7, 8, 9, 10, 11, 12]);
        let c = reference_matmul(&a, &b).unwrap();
        assert_eq!(c.etype, ElemType::I32);
        let got: Vec<i32> = c.data.iter().map(|&v| v as i32).collect();
        assert_eq!(got, vec![22, 24, 7, 10]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::zeros(2, 3, ElemType::I32);
        assert!(matches!(reference_matmul(&a, &a), Err(MatrixError::Mismatch { .. })));
    }

    #[test]
    fn bytes_round_trip_sign_extends() {
        let m = ints(1, 4, ElemType::I16, &[-1, 2, -32768, 32767]);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 8);
        assert_eq!(Matrix::from_bytes(1, 4, ElemType::I16, &bytes).unwrap(), m);
        assert!(Matrix::from_bytes(1, 3, ElemType::I16, &bytes).is_err());
    }
}
