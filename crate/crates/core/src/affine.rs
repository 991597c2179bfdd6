//! Operators and vectors that depend affinely on a nodal parameter vector.
//!
//! Every assembled quantity in the forward model (system matrices, loads,
//! QoI forms) is affine in the nodal porosity. Storing each element
//! contribution as `constant + Σ_k θ_k·local_k` gives, from one
//! representation, the assembled matrix at any `θ`, its directional
//! derivative, and the parameter sensitivity `∂/∂θ_k (yᵀ A(θ) x)` needed by
//! the adjoint and second-order adjoint recursions.

use nalgebra::DVector;

use crate::linalg::{CsrMatrix, Triplets};

/// Marker for a local dof that has been eliminated (e.g. clamped).
pub const ELIMINATED: usize = usize::MAX;

#[derive(Debug, Clone)]
struct MatrixBlock {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Row-major, `rows.len() × cols.len()`.
    constant: Option<Vec<f64>>,
    coeffs: Vec<(usize, Vec<f64>)>,
}

/// `A(θ) = A₀ + Σ_k θ_k A_k`, stored element by element.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    nrows: usize,
    ncols: usize,
    nparams: usize,
    blocks: Vec<MatrixBlock>,
}

impl AffineMatrix {
    pub fn new(nrows: usize, ncols: usize, nparams: usize) -> Self {
        Self {
            nrows,
            ncols,
            nparams,
            blocks: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nparams(&self) -> usize {
        self.nparams
    }

    /// Add one element block. `constant` and each coefficient matrix are
    /// row-major with shape `rows.len() × cols.len()`.
    pub fn push_block(&mut self, rows: Vec<usize>, cols: Vec<usize>, constant: Option<Vec<f64>>, coeffs: Vec<(usize, Vec<f64>)>) {
        let size = rows.len() * cols.len();
        debug_assert!(constant.as_ref().is_none_or(|c| c.len() == size));
        debug_assert!(coeffs.iter().all(|(k, m)| *k < self.nparams && m.len() == size));
        debug_assert!(rows.iter().all(|&r| r == ELIMINATED || r < self.nrows));
        debug_assert!(cols.iter().all(|&c| c == ELIMINATED || c < self.ncols));
        self.blocks.push(MatrixBlock {
            rows,
            cols,
            constant,
            coeffs,
        });
    }

    fn local_value(block: &MatrixBlock, theta: Option<&DVector<f64>>, constant: bool, idx: usize) -> f64 {
        let mut v = if constant {
            block.constant.as_ref().map_or(0.0, |c| c[idx])
        } else {
            0.0
        };
        if let Some(theta) = theta {
            for (k, m) in &block.coeffs {
                v += theta[*k] * m[idx];
            }
        }
        v
    }

    fn assemble_impl(&self, theta: Option<&DVector<f64>>, constant: bool) -> CsrMatrix {
        let cap: usize = self.blocks.iter().map(|b| b.rows.len() * b.cols.len()).sum();
        let mut t = Triplets::with_capacity(self.nrows, self.ncols, cap);
        for b in &self.blocks {
            let nc = b.cols.len();
            for (i, &r) in b.rows.iter().enumerate() {
                if r == ELIMINATED {
                    continue;
                }
                for (j, &c) in b.cols.iter().enumerate() {
                    if c == ELIMINATED {
                        continue;
                    }
                    let v = Self::local_value(b, theta, constant, i * nc + j);
                    if v != 0.0 {
                        t.push(r, c, v);
                    }
                }
            }
        }
        t.to_csr()
    }

    /// `A(θ)`.
    pub fn assemble(&self, theta: &DVector<f64>) -> CsrMatrix {
        assert_eq!(theta.len(), self.nparams);
        self.assemble_impl(Some(theta), true)
    }

    /// The θ-independent part `A₀`.
    pub fn assemble_constant(&self) -> CsrMatrix {
        self.assemble_impl(None, true)
    }

    /// `Σ_k dir_k A_k` (the derivative of `A` along `dir`).
    pub fn assemble_linear(&self, dir: &DVector<f64>) -> CsrMatrix {
        assert_eq!(dir.len(), self.nparams);
        self.assemble_impl(Some(dir), false)
    }

    fn apply_impl(&self, theta: Option<&DVector<f64>>, constant: bool, x: &DVector<f64>, transpose: bool) -> DVector<f64> {
        let (nin, nout) = if transpose {
            (self.nrows, self.ncols)
        } else {
            (self.ncols, self.nrows)
        };
        assert_eq!(x.len(), nin);
        let mut out = DVector::zeros(nout);
        for b in &self.blocks {
            let nc = b.cols.len();
            for (i, &r) in b.rows.iter().enumerate() {
                if r == ELIMINATED {
                    continue;
                }
                for (j, &c) in b.cols.iter().enumerate() {
                    if c == ELIMINATED {
                        continue;
                    }
                    let v = Self::local_value(b, theta, constant, i * nc + j);
                    if transpose {
                        out[c] += v * x[r];
                    } else {
                        out[r] += v * x[c];
                    }
                }
            }
        }
        out
    }

    /// `A(θ) x`.
    pub fn apply(&self, theta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.apply_impl(Some(theta), true, x, false)
    }

    /// `(Σ_k dir_k A_k) x`.
    pub fn apply_linear(&self, dir: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.apply_impl(Some(dir), false, x, false)
    }

    /// `(Σ_k dir_k A_k)ᵀ y`.
    pub fn apply_linear_transpose(&self, dir: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.apply_impl(Some(dir), false, y, true)
    }

    /// The vector `s_k = yᵀ A_k x` over all parameters.
    pub fn sensitivity(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.nrows);
        assert_eq!(x.len(), self.ncols);
        let mut s = DVector::zeros(self.nparams);
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for b in &self.blocks {
            if b.coeffs.is_empty() {
                continue;
            }
            ys.clear();
            xs.clear();
            ys.extend(b.rows.iter().map(|&r| if r == ELIMINATED { 0.0 } else { y[r] }));
            xs.extend(b.cols.iter().map(|&c| if c == ELIMINATED { 0.0 } else { x[c] }));
            let nc = xs.len();
            for (k, m) in &b.coeffs {
                let mut acc = 0.0;
                for (i, yi) in ys.iter().enumerate() {
                    if *yi == 0.0 {
                        continue;
                    }
                    let row = &m[i * nc..(i + 1) * nc];
                    acc += yi * row.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>();
                }
                s[*k] += acc;
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
struct VectorBlock {
    rows: Vec<usize>,
    constant: Option<Vec<f64>>,
    coeffs: Vec<(usize, Vec<f64>)>,
}

/// `b(θ) = b₀ + Σ_k θ_k b_k`, stored element by element.
#[derive(Debug, Clone)]
pub struct AffineVector {
    len: usize,
    nparams: usize,
    blocks: Vec<VectorBlock>,
}

impl AffineVector {
    pub fn new(len: usize, nparams: usize) -> Self {
        Self {
            len,
            nparams,
            blocks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_block(&mut self, rows: Vec<usize>, constant: Option<Vec<f64>>, coeffs: Vec<(usize, Vec<f64>)>) {
        debug_assert!(constant.as_ref().is_none_or(|c| c.len() == rows.len()));
        debug_assert!(coeffs.iter().all(|(k, v)| *k < self.nparams && v.len() == rows.len()));
        self.blocks.push(VectorBlock { rows, constant, coeffs });
    }

    fn eval_impl(&self, theta: Option<&DVector<f64>>, constant: bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.len);
        for b in &self.blocks {
            for (i, &r) in b.rows.iter().enumerate() {
                if r == ELIMINATED {
                    continue;
                }
                let mut v = if constant { b.constant.as_ref().map_or(0.0, |c| c[i]) } else { 0.0 };
                if let Some(theta) = theta {
                    for (k, c) in &b.coeffs {
                        v += theta[*k] * c[i];
                    }
                }
                out[r] += v;
            }
        }
        out
    }

    pub fn eval(&self, theta: &DVector<f64>) -> DVector<f64> {
        assert_eq!(theta.len(), self.nparams);
        self.eval_impl(Some(theta), true)
    }

    /// `Σ_k dir_k b_k`.
    pub fn linear(&self, dir: &DVector<f64>) -> DVector<f64> {
        assert_eq!(dir.len(), self.nparams);
        self.eval_impl(Some(dir), false)
    }

    /// `s_k = yᵀ b_k`.
    pub fn sensitivity(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(self.nparams);
        for b in &self.blocks {
            for (k, c) in &b.coeffs {
                let mut acc = 0.0;
                for (i, &r) in b.rows.iter().enumerate() {
                    if r != ELIMINATED {
                        acc += y[r] * c[i];
                    }
                }
                s[*k] += acc;
            }
        }
        s
    }
}
