//! Differentiable building blocks. Each op is a pure forward plus a
//! hand-derived backward; every backward is validated against central
//! finite differences (see [`crate::check`]).

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

/// Variance floor used only in gradient paths, so that standard deviations
/// of constant inputs stay exactly zero in the forward while gradients stay
/// finite.
pub const VAR_FLOOR: f64 = 1e-10;

/// A differentiable operation: `forward` maps input matrices to one output,
/// `backward` maps the upstream gradient to one gradient per input.
///
/// `backward` may read `output` to avoid recomputation and is only invoked
/// on inputs that already passed `forward`.
pub trait DiffOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>>;
    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>>;
}

fn expect_inputs<'a, T: Scalar>(
    inputs: &[&'a Matrix<T>],
    n: usize,
    op: &'static str,
) -> Result<&'a Matrix<T>> {
    if inputs.len() != n {
        return Err(Error::shape(
            op,
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(inputs[0])
}

/// Sum over rows, producing a 1xC matrix.
fn column_sums<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o = *o + v;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Affine
// ---------------------------------------------------------------------------

/// `Y = X*W + 1*b` with inputs `[X (TxDin), W (DinxDout), b (1xDout)]`.
pub struct Affine;

impl<T: Scalar> DiffOp<T> for Affine {
    fn name(&self) -> &str {
        "affine"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        expect_inputs(inputs, 3, "affine")?;
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        if x.cols() != w.rows() {
            return Err(Error::shape(
                "affine",
                format!(
                    "X is {}x{} but W is {}x{}",
                    x.rows(),
                    x.cols(),
                    w.rows(),
                    w.cols()
                ),
            ));
        }
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::shape(
                "affine",
                format!(
                    "b is {}x{} but W has {} output columns",
                    b.rows(),
                    b.cols(),
                    w.cols()
                ),
            ));
        }
        let mut y = x.matmul(w);
        for r in 0..y.rows() {
            for (o, &bv) in y.row_mut(r).iter_mut().zip(b.row(0)) {
                *o = *o + bv;
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let (x, w) = (inputs[0], inputs[1]);
        let dx = upstream.matmul_nt(w);
        let dw = x.matmul_tn(upstream);
        let db = column_sums(upstream);
        vec![dx, dw, db]
    }
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each column over the frame (row) dimension.
    Time,
    /// Normalize each row over the channel (column) dimension.
    Channel,
}

/// Numerically stable softmax along the chosen axis (max subtraction).
pub struct Softmax {
    pub axis: Axis,
}

impl Softmax {
    fn slices(&self, m: &Matrix<f64>) -> usize {
        match self.axis {
            Axis::Time => m.cols(),
            Axis::Channel => m.rows(),
        }
    }
}

fn softmax_slice<T: Scalar>(values: &mut [T]) {
    let mut max = values[0];
    for &v in values.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in values.iter_mut() {
        *v = *v / sum;
    }
}

impl<T: Scalar> DiffOp<T> for Softmax {
    fn name(&self) -> &str {
        match self.axis {
            Axis::Time => "softmax_time",
            Axis::Channel => "softmax_channel",
        }
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "softmax")?;
        let mut out = x.clone();
        match self.axis {
            Axis::Channel => {
                for r in 0..out.rows() {
                    softmax_slice(out.row_mut(r));
                }
            }
            Axis::Time => {
                let (rows, cols) = out.shape();
                let mut buf = vec![T::zero(); rows];
                for c in 0..cols {
                    for r in 0..rows {
                        buf[r] = out.get(r, c);
                    }
                    softmax_slice(&mut buf);
                    for r in 0..rows {
                        out.set(r, c, buf[r]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        _inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        // dX = S .* (dY - <dY, S>_axis)
        let (rows, cols) = output.shape();
        let mut dx = Matrix::zeros(rows, cols);
        match self.axis {
            Axis::Channel => {
                for r in 0..rows {
                    let mut dot = T::zero();
                    for (&u, &s) in upstream.row(r).iter().zip(output.row(r)) {
                        dot = dot + u * s;
                    }
                    for c in 0..cols {
                        let s = output.get(r, c);
                        dx.set(r, c, s * (upstream.get(r, c) - dot));
                    }
                }
            }
            Axis::Time => {
                for c in 0..cols {
                    let mut dot = T::zero();
                    for r in 0..rows {
                        dot = dot + upstream.get(r, c) * output.get(r, c);
                    }
                    for r in 0..rows {
                        let s = output.get(r, c);
                        dx.set(r, c, s * (upstream.get(r, c) - dot));
                    }
                }
            }
        }
        vec![dx]
    }
}

// ---------------------------------------------------------------------------
// Splice
// ---------------------------------------------------------------------------

/// Temporal context splicing: row `t` of the output concatenates the rows
/// `t + o` for each context offset `o`, clamped to the first/last frame.
pub struct Splice {
    offsets: Vec<i64>,
}

impl Splice {
    pub fn new(offsets: Vec<i64>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::EmptyInput("splice offsets".into()));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "splice offsets must be strictly sorted, got {offsets:?}"
            )));
        }
        Ok(Splice { offsets })
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    #[inline]
    fn source_row(&self, t: usize, offset: i64, rows: usize) -> usize {
        let idx = t as i64 + offset;
        idx.clamp(0, rows as i64 - 1) as usize
    }
}

impl<T: Scalar> DiffOp<T> for Splice {
    fn name(&self) -> &str {
        "splice"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "splice")?;
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols * self.offsets.len());
        for t in 0..rows {
            for (block, &o) in self.offsets.iter().enumerate() {
                let src = self.source_row(t, o, rows);
                let dst = &mut out.row_mut(t)[block * cols..(block + 1) * cols];
                dst.copy_from_slice(x.row(src));
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let (rows, cols) = inputs[0].shape();
        let mut dx = Matrix::zeros(rows, cols);
        for t in 0..rows {
            for (block, &o) in self.offsets.iter().enumerate() {
                let src = self.source_row(t, o, rows);
                let up = &upstream.row(t)[block * cols..(block + 1) * cols];
                for (g, &u) in dx.row_mut(src).iter_mut().zip(up) {
                    *g = *g + u;
                }
            }
        }
        vec![dx]
    }
}

// ---------------------------------------------------------------------------
// Statistics pooling
// ---------------------------------------------------------------------------

/// Per-column mean and population standard deviation (divisor T) over the
/// frame axis, concatenated into a 1x2D row. The standard deviation of a
/// constant column is exactly zero; the variance floor only enters the
/// gradient so backward stays finite there.
pub struct StatsPool;

pub(crate) fn stats_pool_values<T: Scalar>(x: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = x.shape();
    let means = x.column_means();
    let mut stds = vec![T::zero(); cols];
    let inv = T::one() / T::from_f64(rows as f64);
    for (c, std) in stds.iter_mut().enumerate() {
        let mut acc = T::zero();
        for r in 0..rows {
            let d = x.get(r, c) - means[c];
            acc = acc + d * d;
        }
        *std = (acc * inv).sqrt();
    }
    (means, stds)
}

impl<T: Scalar> DiffOp<T> for StatsPool {
    fn name(&self) -> &str {
        "stats_pool"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "stats_pool")?;
        let (means, stds) = stats_pool_values(x);
        let mut data = means;
        data.extend(stds);
        Ok(Matrix::row_vector(data))
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let x = inputs[0];
        let (rows, cols) = x.shape();
        let inv_t = T::one() / T::from_f64(rows as f64);
        let sigma_floor = T::from_f64(VAR_FLOOR.sqrt());
        let mut dx = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let mean = output.get(0, c);
            let sigma = output.get(0, cols + c).max(sigma_floor);
            let du_mean = upstream.get(0, c);
            let du_std = upstream.get(0, cols + c);
            for r in 0..rows {
                let centered = x.get(r, c) - mean;
                // d sigma / d x[r,c] = centered / (T * sigma)
                let g = du_mean * inv_t + du_std * centered * inv_t / sigma;
                dx.set(r, c, g);
            }
        }
        vec![dx]
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

pub struct Relu;

impl<T: Scalar> DiffOp<T> for Relu {
    fn name(&self) -> &str {
        "relu"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "relu")?;
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        vec![inputs[0].zip_map(upstream, |x, u| if x > T::zero() { u } else { T::zero() })]
    }
}

pub struct Sigmoid;

impl<T: Scalar> DiffOp<T> for Sigmoid {
    fn name(&self) -> &str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "sigmoid")?;
        Ok(x.map(|v| T::one() / (T::one() + (-v).exp())))
    }

    fn backward(
        &self,
        _inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        vec![output.zip_map(upstream, |s, u| u * s * (T::one() - s))]
    }
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast products
// ---------------------------------------------------------------------------

/// Elementwise product of two same-shape matrices.
pub struct MulElem;

impl<T: Scalar> DiffOp<T> for MulElem {
    fn name(&self) -> &str {
        "mul_elem"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        expect_inputs(inputs, 2, "mul_elem")?;
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "mul_elem",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        Ok(a.zip_map(b, |x, y| x * y))
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        vec![
            upstream.zip_map(b, |u, y| u * y),
            upstream.zip_map(a, |u, x| u * x),
        ]
    }
}

/// `out[t,c] = X[t,c] * g[c]` with inputs `[X (TxC), g (1xC)]`; the SE gate.
pub struct ChannelScale;

impl<T: Scalar> DiffOp<T> for ChannelScale {
    fn name(&self) -> &str {
        "channel_scale"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        expect_inputs(inputs, 2, "channel_scale")?;
        let (x, g) = (inputs[0], inputs[1]);
        if g.rows() != 1 || g.cols() != x.cols() {
            return Err(Error::shape(
                "channel_scale",
                format!("X is {:?} but gate is {:?}", x.shape(), g.shape()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &gv) in out.row_mut(r).iter_mut().zip(g.row(0)) {
                *o = *o * gv;
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let (x, g) = (inputs[0], inputs[1]);
        let mut dx = upstream.clone();
        for r in 0..dx.rows() {
            for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                *o = *o * gv;
            }
        }
        let mut dg = Matrix::zeros(1, g.cols());
        for r in 0..x.rows() {
            for ((d, &u), &xv) in dg.row_mut(0).iter_mut().zip(upstream.row(r)).zip(x.row(r)) {
                *d = *d + u * xv;
            }
        }
        vec![dx, dg]
    }
}

/// Multiplication by a fixed constant.
pub struct ConstScale {
    pub factor: f64,
}

impl<T: Scalar> DiffOp<T> for ConstScale {
    fn name(&self) -> &str {
        "const_scale"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "const_scale")?;
        Ok(x.scale(T::from_f64(self.factor)))
    }

    fn backward(
        &self,
        _inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        vec![upstream.scale(T::from_f64(self.factor))]
    }
}

// ---------------------------------------------------------------------------
// Frame-axis mean/variance normalization
// ---------------------------------------------------------------------------

/// Normalizes each column to zero mean and unit variance over the frames of
/// the current sequence (training-time behaviour).
pub struct MeanVarNorm {
    pub eps: f64,
}

impl<T: Scalar> DiffOp<T> for MeanVarNorm {
    fn name(&self) -> &str {
        "mean_var_norm"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "mean_var_norm")?;
        let (rows, cols) = x.shape();
        let (means, vars) = column_mean_var(x);
        let eps = T::from_f64(self.eps);
        let mut out = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let inv_s = T::one() / (vars[c] + eps).sqrt();
            for r in 0..rows {
                out.set(r, c, (x.get(r, c) - means[c]) * inv_s);
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Matrix<T>],
        output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        // dX[t,c] = (dY[t,c] - mean_t(dY[.,c]) - y[t,c] * mean_t(dY .* y)) / s_c
        let x = inputs[0];
        let (rows, cols) = x.shape();
        let (_, vars) = column_mean_var(x);
        let eps = T::from_f64(self.eps);
        let inv_t = T::one() / T::from_f64(rows as f64);
        let mut dx = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let inv_s = T::one() / (vars[c] + eps).sqrt();
            let mut du_mean = T::zero();
            let mut duy_mean = T::zero();
            for r in 0..rows {
                du_mean = du_mean + upstream.get(r, c);
                duy_mean = duy_mean + upstream.get(r, c) * output.get(r, c);
            }
            du_mean = du_mean * inv_t;
            duy_mean = duy_mean * inv_t;
            for r in 0..rows {
                let g = (upstream.get(r, c) - du_mean - output.get(r, c) * duy_mean) * inv_s;
                dx.set(r, c, g);
            }
        }
        vec![dx]
    }
}

/// Normalization with fixed statistics (evaluation-time behaviour).
pub struct NormalizeFixed<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: f64,
}

impl<T: Scalar> DiffOp<T> for NormalizeFixed<T> {
    fn name(&self) -> &str {
        "normalize_fixed"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        let x = expect_inputs(inputs, 1, "normalize_fixed")?;
        let (rows, cols) = x.shape();
        if cols != self.mean.len() {
            return Err(Error::shape(
                "normalize_fixed",
                format!("input has {cols} columns, stats have {}", self.mean.len()),
            ));
        }
        let eps = T::from_f64(self.eps);
        let mut out = Matrix::zeros(rows, cols);
        for c in 0..cols {
            let inv_s = T::one() / (self.var[c] + eps).sqrt();
            for r in 0..rows {
                out.set(r, c, (x.get(r, c) - self.mean[c]) * inv_s);
            }
        }
        Ok(out)
    }

    fn backward(
        &self,
        _inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let eps = T::from_f64(self.eps);
        let mut dx = upstream.clone();
        for c in 0..dx.cols() {
            let inv_s = T::one() / (self.var[c] + eps).sqrt();
            for r in 0..dx.rows() {
                dx.set(r, c, dx.get(r, c) * inv_s);
            }
        }
        vec![dx]
    }
}

pub(crate) fn column_mean_var<T: Scalar>(x: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = x.shape();
    let means = x.column_means();
    let inv = T::one() / T::from_f64(rows as f64);
    let mut vars = vec![T::zero(); cols];
    for (c, var) in vars.iter_mut().enumerate() {
        let mut acc = T::zero();
        for r in 0..rows {
            let d = x.get(r, c) - means[c];
            acc = acc + d * d;
        }
        *var = acc * inv;
    }
    (means, vars)
}

// ---------------------------------------------------------------------------
// Scalar combination
// ---------------------------------------------------------------------------

/// Weighted sum of 1x1 matrices: `sum_i coeff[i] * x_i`.
pub struct WeightedSum {
    pub coeffs: Vec<f64>,
}

impl<T: Scalar> DiffOp<T> for WeightedSum {
    fn name(&self) -> &str {
        "weighted_sum"
    }

    fn forward(&self, inputs: &[&Matrix<T>]) -> Result<Matrix<T>> {
        if inputs.len() != self.coeffs.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!(
                    "{} inputs vs {} coefficients",
                    inputs.len(),
                    self.coeffs.len()
                ),
            ));
        }
        let mut acc = T::zero();
        for (x, &c) in inputs.iter().zip(&self.coeffs) {
            if x.shape() != (1, 1) {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("inputs must be 1x1 scalars, got {:?}", x.shape()),
                ));
            }
            acc = acc + x.get(0, 0) * T::from_f64(c);
        }
        Ok(Matrix::filled(1, 1, acc))
    }

    fn backward(
        &self,
        _inputs: &[&Matrix<T>],
        _output: &Matrix<T>,
        upstream: &Matrix<T>,
    ) -> Vec<Matrix<T>> {
        let u = upstream.get(0, 0);
        self.coeffs
            .iter()
            .map(|&c| Matrix::filled(1, 1, u * T::from_f64(c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> Matrix<f64> {
        Matrix::new(rows, cols, vals.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_and_zero_weight() {
        let x = Matrix::<f64>::identity(3);
        let w = Matrix::<f64>::identity(3);
        let b = Matrix::zeros(1, 3);
        let y = Affine.forward(&[&x, &w, &b]).unwrap();
        assert_eq!(y, Matrix::<f64>::identity(3));

        let x = mat(2, 3, &[0.3, -0.7, 2.0, 1.1, 0.0, -4.0]);
        let w = Matrix::zeros(3, 2);
        let b = mat(1, 2, &[1.0, 2.0]);
        let y = Affine.forward(&[&x, &w, &b]).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), &[1.0, 2.0]);
        }
    }

    #[test]
    fn affine_matches_triple_loop_oracle() {
        let x = mat(
            4,
            3,
            &[0.5, -1.2, 0.3, 2.2, 0.1, -0.4, -0.9, 1.5, 0.0, 0.7, -0.3, 1.9],
        );
        let w = mat(3, 2, &[1.5, -0.2, 0.4, 0.9, -1.1, 0.3]);
        let b = mat(1, 2, &[0.25, -0.75]);
        let y = Affine.forward(&[&x, &w, &b]).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut want = b.get(0, j);
                for k in 0..3 {
                    want += x.get(i, k) * w.get(k, j);
                }
                assert!((y.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_shape_error_names_operands() {
        let x = Matrix::<f64>::zeros(2, 3);
        let w = Matrix::<f64>::zeros(4, 2);
        let b = Matrix::<f64>::zeros(1, 2);
        let err = Affine.forward(&[&x, &w, &b]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn softmax_closed_forms() {
        let x = mat(1, 4, &[3.0, 3.0, 3.0, 3.0]);
        let s = Softmax {
            axis: Axis::Channel,
        }
        .forward(&[&x])
        .unwrap();
        for c in 0..4 {
            assert!((s.get(0, c) - 0.25).abs() < 1e-15);
        }

        let x = mat(1, 2, &[0.0, (2.0f64).ln()]);
        let s = Softmax {
            axis: Axis::Channel,
        }
        .forward(&[&x])
        .unwrap();
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_time_matches_direct_oracle() {
        // Direct exp/sum oracle without max subtraction.
        let x = mat(
            5,
            4,
            &[
                0.3, -1.0, 2.0, 0.1, -0.4, 0.8, 1.2, -2.0, 0.0, 0.5, -0.6, 0.9, 1.7, -0.2, 0.4,
                0.6, -1.3, 1.1, 0.2, -0.8,
            ],
        );
        let s = Softmax { axis: Axis::Time }.forward(&[&x]).unwrap();
        for c in 0..4 {
            let denom: f64 = (0..5).map(|r| x.get(r, c).exp()).sum();
            for r in 0..5 {
                let want = x.get(r, c).exp() / denom;
                assert!((s.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_with_large_values() {
        let x = mat(2, 3, &[50.0, -50.0, 12.0, -50.0, 50.0, 0.0]);
        let s = Softmax {
            axis: Axis::Channel,
        }
        .forward(&[&x])
        .unwrap();
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn splice_identity_and_edge_clamp() {
        let x = mat(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sp = Splice::new(vec![0]).unwrap();
        assert_eq!(sp.forward(&[&x]).unwrap(), x);

        let one = mat(1, 2, &[7.0, 8.0]);
        let sp = Splice::new(vec![-2, 0, 2]).unwrap();
        let y = sp.forward(&[&one]).unwrap();
        assert_eq!(y.row(0), &[7.0, 8.0, 7.0, 8.0, 7.0, 8.0]);
    }

    #[test]
    fn splice_matches_gather_oracle() {
        let x = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64);
        let sp = Splice::new(vec![-1, 0, 1]).unwrap();
        let y = sp.forward(&[&x]).unwrap();
        for t in 0..5i64 {
            for (block, off) in [-1i64, 0, 1].iter().enumerate() {
                let src = (t + off).clamp(0, 4) as usize;
                for c in 0..2 {
                    assert_eq!(y.get(t as usize, block * 2 + c), x.get(src, c));
                }
            }
        }
    }

    #[test]
    fn splice_rejects_bad_offsets() {
        assert!(Splice::new(vec![]).is_err());
        assert!(Splice::new(vec![1, 0]).is_err());
        assert!(Splice::new(vec![0, 0]).is_err());
    }

    #[test]
    fn stats_pool_closed_forms() {
        let x = Matrix::filled(4, 3, 2.5);
        let y = StatsPool.forward(&[&x]).unwrap();
        for c in 0..3 {
            assert_eq!(y.get(0, c), 2.5);
            assert_eq!(y.get(0, 3 + c), 0.0);
        }

        let x = mat(2, 1, &[0.0, 2.0]);
        let y = StatsPool.forward(&[&x]).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((y.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stats_pool_matches_two_pass_oracle() {
        let x = Matrix::from_fn(7, 3, |r, c| ((r * 3 + c) as f64 * 0.713).sin());
        let y = StatsPool.forward(&[&x]).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..7).map(|r| x.get(r, c)).sum::<f64>() / 7.0;
            let var: f64 = (0..7).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / 7.0;
            assert!((y.get(0, c) - mean).abs() < 1e-12);
            assert!((y.get(0, 3 + c) - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_pool_time_permutation_invariant() {
        let x = Matrix::from_fn(6, 2, |r, c| (r as f64 - 2.0) * 0.3 + c as f64);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = Matrix::from_fn(6, 2, |r, c| x.get(perm[r], c));
        let a = StatsPool.forward(&[&x]).unwrap();
        let b = StatsPool.forward(&[&xp]).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn weighted_sum_combines_scalars() {
        let a = Matrix::filled(1, 1, 2.0);
        let b = Matrix::filled(1, 1, 3.0);
        let op = WeightedSum {
            coeffs: vec![1.0, 0.5],
        };
        let y = op.forward(&[&a, &b]).unwrap();
        assert!((y.get(0, 0) - 3.5).abs() < 1e-15);
    }
}
