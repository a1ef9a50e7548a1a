//! Matrices that are affine in a vector of scalar decision variables.
//!
//! An [`AffineMatrix`] is `C + Σ_k x_k F_k`. Products are only allowed when at
//! least one factor is constant, so every expression stays affine. The same
//! type doubles as a plain numeric matrix (no terms), which lets the LMI
//! builders share one formula between numeric evaluation and SDP assembly.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    /// `coeff · x_var`
    pub fn variable(var: usize, coeff: DMatrix<f64>) -> Self {
        let mut terms = BTreeMap::new();
        let (r, c) = coeff.shape();
        terms.insert(var, coeff);
        Self {
            constant: DMatrix::zeros(r, c),
            terms,
        }
    }

    /// Sum of `coeff_k · x_k` over the given pairs. All coefficients share a shape.
    pub fn linear(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, DMatrix<f64>)>) -> Self {
        let mut out = Self::zeros(rows, cols);
        for (var, coeff) in pairs {
            assert_eq!(coeff.shape(), (rows, cols), "coefficient shape mismatch");
            out.add_term(var, &coeff);
        }
        out
    }

    fn add_term(&mut self, var: usize, coeff: &DMatrix<f64>) {
        match self.terms.get_mut(&var) {
            Some(existing) => *existing += coeff,
            None => {
                self.terms.insert(var, coeff.clone());
            }
        }
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, v)| (*k, v))
    }

    pub fn term(&self, var: usize) -> Option<&DMatrix<f64>> {
        self.terms.get(&var)
    }

    /// Value as a numeric matrix; panics when the expression still has variables.
    pub fn into_value(self) -> DMatrix<f64> {
        assert!(self.is_constant(), "expression is not constant");
        self.constant
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coeff) in &self.terms {
            out += coeff * x[*var];
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, v)| (*k, v.transpose())).collect(),
        }
    }

    /// `self + selfᵀ`
    pub fn he(&self) -> Self {
        self + &self.transpose()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, v)| (*k, v * s)).collect(),
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, v)| (*k, f(v))).collect(),
        }
    }

    /// Matrix product. At least one side must be constant.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.ncols(), rhs.nrows(), "matmul shape mismatch");
        if rhs.is_constant() {
            self.map(|m| m * &rhs.constant)
        } else if self.is_constant() {
            rhs.map(|m| &self.constant * m)
        } else {
            panic!("product of two non-constant affine matrices is not affine");
        }
    }

    /// Product of a 1×1 expression with a matrix expression. One side must be constant.
    pub fn scaled_by(&self, s: &Self) -> Self {
        assert_eq!(s.shape(), (1, 1), "scalar factor must be 1x1");
        if s.is_constant() {
            self.scale(s.constant[(0, 0)])
        } else if self.is_constant() {
            let (r, c) = self.shape();
            let mut out = Self::zeros(r, c);
            out.constant = &self.constant * s.constant[(0, 0)];
            for (var, coeff) in &s.terms {
                out.add_term(*var, &(&self.constant * coeff[(0, 0)]));
            }
            out
        } else {
            panic!("product of two non-constant affine expressions is not affine");
        }
    }

    /// Assemble from a full grid of blocks; rows of the grid must agree on height
    /// and columns on width.
    pub fn from_blocks(grid: &[Vec<AffineMatrix>]) -> Self {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
        let widths: Vec<usize> = grid[0].iter().map(AffineMatrix::ncols).collect();
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), widths.len(), "ragged block grid");
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(
                    blk.shape(),
                    (heights[bi], widths[bj]),
                    "block ({bi},{bj}) has wrong shape"
                );
                out.place(r0, c0, blk);
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    /// Symmetric assembly: `upper[i][j]` for `j >= i` gives block (i, j); the
    /// lower triangle is the mirrored transpose. Diagonal blocks are symmetrized
    /// so the result is exactly symmetric.
    pub fn sym_from_upper(sizes: &[usize], upper: &[Vec<Option<AffineMatrix>>]) -> Self {
        let n: usize = sizes.iter().sum();
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut out = Self::zeros(n, n);
        for (i, row) in upper.iter().enumerate() {
            for (j, blk) in row.iter().enumerate() {
                let Some(blk) = blk else { continue };
                assert!(j >= i, "only upper-triangular blocks may be given");
                assert_eq!(blk.shape(), (sizes[i], sizes[j]), "block ({i},{j}) has wrong shape");
                if i == j {
                    let sym = (blk + &blk.transpose()).scale(0.5);
                    out.place(offsets[i], offsets[j], &sym);
                } else {
                    out.place(offsets[i], offsets[j], blk);
                    out.place(offsets[j], offsets[i], &blk.transpose());
                }
            }
        }
        out
    }

    fn place(&mut self, r0: usize, c0: usize, blk: &AffineMatrix) {
        let (h, w) = blk.shape();
        self.constant.view_mut((r0, c0), (h, w)).copy_from(&blk.constant);
        let (rows, cols) = self.shape();
        for (var, coeff) in &blk.terms {
            let entry = self.terms.entry(*var).or_insert_with(|| DMatrix::zeros(rows, cols));
            entry.view_mut((r0, c0), (h, w)).copy_from(coeff);
        }
    }

    /// Trace as a 1×1 expression.
    pub fn trace(&self) -> Self {
        self.map(|m| DMatrix::from_element(1, 1, m.trace()))
    }

    /// Sub-block view as a new expression.
    pub fn block(&self, r0: usize, c0: usize, h: usize, w: usize) -> Self {
        self.map(|m| m.view((r0, c0), (h, w)).into_owned())
    }
}

impl From<DMatrix<f64>> for AffineMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        Self::constant(m)
    }
}

impl Add for &AffineMatrix {
    type Output = AffineMatrix;

    fn add(self, rhs: &AffineMatrix) -> AffineMatrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        let mut out = self.clone();
        out.constant += &rhs.constant;
        for (var, coeff) in &rhs.terms {
            out.add_term(*var, coeff);
        }
        out
    }
}

impl Sub for &AffineMatrix {
    type Output = AffineMatrix;

    fn sub(self, rhs: &AffineMatrix) -> AffineMatrix {
        self + &(-rhs)
    }
}

impl Neg for &AffineMatrix {
    type Output = AffineMatrix;

    fn neg(self) -> AffineMatrix {
        self.map(|m| -m)
    }
}

impl Mul for &AffineMatrix {
    type Output = AffineMatrix;

    fn mul(self, rhs: &AffineMatrix) -> AffineMatrix {
        self.matmul(rhs)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $method:ident) => {
        impl $tr for AffineMatrix {
            type Output = AffineMatrix;
            fn $method(self, rhs: AffineMatrix) -> AffineMatrix {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&AffineMatrix> for AffineMatrix {
            type Output = AffineMatrix;
            fn $method(self, rhs: &AffineMatrix) -> AffineMatrix {
                (&self).$method(rhs)
            }
        }
        impl $tr<AffineMatrix> for &AffineMatrix {
            type Output = AffineMatrix;
            fn $method(self, rhs: AffineMatrix) -> AffineMatrix {
                self.$method(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for AffineMatrix {
    type Output = AffineMatrix;

    fn neg(self) -> AffineMatrix {
        -&self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var_scalar(v: usize) -> AffineMatrix {
        AffineMatrix::variable(v, DMatrix::from_element(1, 1, 1.0))
    }

    #[test]
    fn eval_matches_manual_sum() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = AffineMatrix::constant(a.clone()) + AffineMatrix::variable(3, b.clone());
        let x = [0.0, 0.0, 0.0, 2.5];
        assert_eq!(e.eval(&x), &a + &b * 2.5);
    }

    #[test]
    fn const_product_and_scalar_factor() {
        let k = AffineMatrix::constant(DMatrix::from_row_slice(1, 2, &[2.0, -1.0]));
        let v = AffineMatrix::variable(0, DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let prod = &k * &v;
        assert_eq!(prod.eval(&[3.0]), DMatrix::from_element(1, 1, 3.0));

        let s = &var_scalar(1) + &AffineMatrix::scalar(0.5);
        let m = AffineMatrix::identity(2).scaled_by(&s);
        assert_eq!(m.eval(&[0.0, 2.0]), DMatrix::identity(2, 2) * 2.5);
    }

    #[test]
    #[should_panic(expected = "not affine")]
    fn bilinear_product_panics() {
        let _ = &var_scalar(0) * &var_scalar(1);
    }

    #[test]
    fn symmetric_assembly_mirrors() {
        let off = AffineMatrix::variable(0, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        let m = AffineMatrix::sym_from_upper(
            &[1, 2],
            &[
                vec![Some(AffineMatrix::scalar(-1.0)), Some(off)],
                vec![None, Some(AffineMatrix::identity(2).scale(-3.0))],
            ],
        );
        let v = m.eval(&[1.5]);
        assert_eq!(v, v.transpose());
        assert_eq!(v[(2, 0)], 3.0);
    }
}
