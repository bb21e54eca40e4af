//! Dense numeric kernel for the text CNN.
//!
//! Holds the six forward operations the network is built from (valid
//! convolution, ReLU, max-pooling with argmax, affine map, sigmoid and
//! concatenation), their vector-Jacobian products, and a central
//! finite-difference checker used to validate gradients.
//!
//! Everything here is a pure function over `f64` data.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::mismatch(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::mismatch(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Rows `start..start + height` as one contiguous slice.
    pub fn window(&self, start: usize, height: usize) -> &[f64] {
        &self.data[start * self.cols..(start + height) * self.cols]
    }
}

/// Outcome of convolving one filter over a matrix, rectifying and pooling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PooledFeature {
    pub value: f64,
    /// Start row of the winning window.
    pub index: usize,
    /// Whether the ReLU passed gradient at the winning window.
    pub active: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_conv(s: &Matrix, height: usize, width: usize) -> Result<()> {
    if width != s.cols {
        return Err(Error::mismatch("conv_valid", format!("k = {}", s.cols), format!("k = {width}")));
    }
    if height == 0 {
        return Err(Error::InvalidArgument("conv_valid: filter height must be at least 1".into()));
    }
    if s.rows < height {
        return Err(Error::mismatch(
            "conv_valid",
            format!("at least {height} input rows"),
            format!("{} rows", s.rows),
        ));
    }
    Ok(())
}

/// Valid (unpadded) convolution of filter `m` (d×k) over `s` (n×k) plus a
/// scalar bias. Returns the n−d+1 pre-activation feature map.
pub fn conv_valid(s: &Matrix, m: &Matrix, b: f64) -> Result<Vec<f64>> {
    check_conv(s, m.rows, m.cols)?;
    Ok((0..=s.rows - m.rows)
        .map(|t| dot(&m.data, s.window(t, m.rows)) + b)
        .collect())
}

/// Fused `max_pool_argmax(relu(conv_valid(s, filter, bias)))` for a filter
/// stored flat as `height * s.cols()` values. Allocation free.
pub fn pooled_feature(s: &Matrix, filter: &[f64], height: usize, bias: f64) -> Result<PooledFeature> {
    if height == 0 || filter.len() != height * s.cols {
        return Err(Error::mismatch(
            "pooled_feature",
            format!("{} filter values", height * s.cols),
            filter.len(),
        ));
    }
    check_conv(s, height, s.cols)?;
    let mut best = PooledFeature {
        value: f64::NEG_INFINITY,
        index: 0,
        active: false,
    };
    for t in 0..=s.rows - height {
        let pre = dot(filter, s.window(t, height)) + bias;
        let act = pre.max(0.0);
        if act > best.value {
            best = PooledFeature {
                value: act,
                index: t,
                active: pre > 0.0,
            };
        }
    }
    Ok(best)
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Maximum entry and the position of its first occurrence.
pub fn max_pool_argmax(h: &[f64]) -> Result<(f64, usize)> {
    let (&first, rest) = h.split_first().ok_or(Error::EmptyInput("max_pool_argmax"))?;
    let mut best = (first, 0);
    for (i, &x) in rest.iter().enumerate() {
        if x > best.0 {
            best = (x, i + 1);
        }
    }
    Ok(best)
}

/// `w · x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::mismatch("affine", format!("input of length {}", w.cols), x.len()));
    }
    if w.rows != b.len() {
        return Err(Error::mismatch("affine", format!("bias of length {}", w.rows), b.len()));
    }
    Ok((0..w.rows).map(|i| dot(w.row(i), x) + b[i]).collect())
}

/// Largest `f64` below one; keeps saturated sigmoid outputs off the boundary.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, evaluated on the branch that cannot overflow and kept
/// inside the open unit interval.
pub fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn concat<P: AsRef<[f64]>>(parts: &[P]) -> Vec<f64> {
    let len = parts.iter().map(|p| p.as_ref().len()).sum();
    let mut out = Vec::with_capacity(len);
    for p in parts {
        out.extend_from_slice(p.as_ref());
    }
    out
}

/// Forward inputs of one differentiable op, identifying the op by variant.
#[derive(Clone, Copy, Debug)]
pub enum OpInput<'a> {
    ConvValid { s: &'a Matrix, m: &'a Matrix, b: f64 },
    Relu { v: &'a [f64] },
    MaxPoolArgmax { h: &'a [f64] },
    Affine { w: &'a Matrix, x: &'a [f64], b: &'a [f64] },
    Sigmoid { v: &'a [f64] },
    Concat { parts: &'a [Vec<f64>] },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gradient {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Matrix),
}

impl Gradient {
    pub fn values(&self) -> &[f64] {
        match self {
            Gradient::Scalar(x) => std::slice::from_ref(x),
            Gradient::Vector(v) => v,
            Gradient::Matrix(m) => m.data(),
        }
    }
}

/// One gradient per differentiable input, in the order the op takes them.
#[derive(Clone, Debug, PartialEq)]
pub struct VjpResult {
    pub gradients: Vec<Gradient>,
}

fn expect_len(op: &'static str, upstream: &[f64], len: usize) -> Result<()> {
    if upstream.len() != len {
        return Err(Error::mismatch(op, format!("upstream of length {len}"), upstream.len()));
    }
    Ok(())
}

/// Vector-Jacobian product of `op` at its forward inputs.
///
/// For `MaxPoolArgmax` the upstream is a single value routed to the first
/// maximum; for `Relu` the derivative at zero is zero.
pub fn vjp(op: OpInput<'_>, upstream: &[f64]) -> Result<VjpResult> {
    let gradients = match op {
        OpInput::ConvValid { s, m, b: _ } => {
            check_conv(s, m.rows, m.cols)?;
            let outputs = s.rows - m.rows + 1;
            expect_len("vjp(conv_valid)", upstream, outputs)?;
            let width = m.rows * m.cols;
            let mut ds = Matrix::zeros(s.rows, s.cols);
            let mut dm = Matrix::zeros(m.rows, m.cols);
            for (t, &g) in upstream.iter().enumerate() {
                let window = s.window(t, m.rows);
                let ds_window = &mut ds.data[t * s.cols..t * s.cols + width];
                for idx in 0..width {
                    ds_window[idx] += g * m.data[idx];
                    dm.data[idx] += g * window[idx];
                }
            }
            vec![
                Gradient::Matrix(ds),
                Gradient::Matrix(dm),
                Gradient::Scalar(upstream.iter().sum()),
            ]
        }
        OpInput::Relu { v } => {
            expect_len("vjp(relu)", upstream, v.len())?;
            let g = v
                .iter()
                .zip(upstream)
                .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
                .collect();
            vec![Gradient::Vector(g)]
        }
        OpInput::MaxPoolArgmax { h } => {
            expect_len("vjp(max_pool_argmax)", upstream, 1)?;
            let (_, index) = max_pool_argmax(h)?;
            let mut g = vec![0.0; h.len()];
            g[index] = upstream[0];
            vec![Gradient::Vector(g)]
        }
        OpInput::Affine { w, x, b } => {
            affine(w, x, b)?;
            expect_len("vjp(affine)", upstream, w.rows)?;
            let mut dw = Matrix::zeros(w.rows, w.cols);
            let mut dx = vec![0.0; w.cols];
            for (i, &g) in upstream.iter().enumerate() {
                for (j, dxj) in dx.iter_mut().enumerate() {
                    dw.data[i * w.cols + j] = g * x[j];
                    *dxj += g * w.get(i, j);
                }
            }
            vec![
                Gradient::Matrix(dw),
                Gradient::Vector(dx),
                Gradient::Vector(upstream.to_vec()),
            ]
        }
        OpInput::Sigmoid { v } => {
            expect_len("vjp(sigmoid)", upstream, v.len())?;
            let g = v
                .iter()
                .zip(upstream)
                .map(|(&x, &u)| {
                    let y = sigmoid_scalar(x);
                    u * y * (1.0 - y)
                })
                .collect();
            vec![Gradient::Vector(g)]
        }
        OpInput::Concat { parts } => {
            let total: usize = parts.iter().map(Vec::len).sum();
            expect_len("vjp(concat)", upstream, total)?;
            let mut offset = 0;
            parts
                .iter()
                .map(|p| {
                    let g = upstream[offset..offset + p.len()].to_vec();
                    offset += p.len();
                    Gradient::Vector(g)
                })
                .collect()
        }
    };
    Ok(VjpResult { gradients })
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every
/// coordinate of `params`.
pub fn central_differences<F>(mut f: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut x = params.to_vec();
    let mut eval = |x: &[f64], i: usize| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite(format!("function value {y} while perturbing parameter {i}")))
        }
    };
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = eval(&x, i)?;
        x[i] = orig - step;
        let minus = eval(&x, i)?;
        x[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error between two gradient estimates, floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `params`.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::mismatch("finite_diff_check", params.len(), analytic.len()));
    }
    let numeric = central_differences(f, params, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn conv_examples() {
        let s = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(conv_valid(&s, &m(&[&[2.0, 1.0]]), 0.0).unwrap(), vec![2.0, 1.0, 3.0]);
        assert_eq!(
            conv_valid(&s, &m(&[&[1.0, 0.0], &[0.0, 1.0]]), 0.0).unwrap(),
            vec![2.0, 1.0]
        );
        let zeros = Matrix::zeros(3, 2);
        assert_eq!(
            conv_valid(&zeros, &m(&[&[-3.0, 7.0]]), 0.5).unwrap(),
            vec![0.5, 0.5, 0.5]
        );
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let s = Matrix::zeros(1, 2);
        assert!(conv_valid(&s, &Matrix::zeros(1, 3), 0.0).is_err());
        assert!(conv_valid(&s, &Matrix::zeros(2, 2), 0.0).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[2.0, -1.0, 0.0]), vec![2.0, 0.0, 0.0]);
        assert!(relu(&[]).is_empty());
        assert_eq!(relu(&[-5.0, -0.1]), vec![0.0, 0.0]);
    }

    #[test]
    fn pool_examples() {
        assert_eq!(max_pool_argmax(&[2.0, 1.0, 3.0]).unwrap(), (3.0, 2));
        assert_eq!(max_pool_argmax(&[0.0, 0.0]).unwrap(), (0.0, 0));
        assert_eq!(max_pool_argmax(&[7.0]).unwrap(), (7.0, 0));
        assert!(matches!(max_pool_argmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn affine_examples() {
        assert_eq!(affine(&Matrix::identity(2), &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(affine(&m(&[&[1.0, 1.0]]), &[2.0, 5.0], &[1.0]).unwrap(), vec![8.0]);
        assert_eq!(
            affine(&Matrix::zeros(2, 3), &[9.0, -2.0, 4.0], &[1.5, -0.5]).unwrap(),
            vec![1.5, -0.5]
        );
        assert!(affine(&Matrix::zeros(2, 3), &[1.0], &[0.0, 0.0]).is_err());
        assert!(affine(&Matrix::zeros(2, 3), &[1.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&[0.0]), vec![0.5]);
        let y = sigmoid(&[1.7, -1.7]);
        assert!((y[0] + y[1] - 1.0).abs() < 1e-12);
        let tiny = sigmoid_scalar(-40.0);
        assert!(tiny > 0.0 && tiny < 1e-15);
        for x in [-1e3, -800.0, 40.0, 800.0, 1e3] {
            let y = sigmoid_scalar(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat(&[vec![1.0], vec![2.0, 3.0], vec![4.0]]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(concat(&[vec![5.0, 6.0]]), vec![5.0, 6.0]);
        assert!(concat::<Vec<f64>>(&[]).is_empty());
    }

    #[test]
    fn vjp_examples() {
        let r = vjp(OpInput::Relu { v: &[2.0, -1.0] }, &[1.0, 1.0]).unwrap();
        assert_eq!(r.gradients, vec![Gradient::Vector(vec![1.0, 0.0])]);
        let r = vjp(OpInput::MaxPoolArgmax { h: &[2.0, 1.0, 3.0] }, &[1.0]).unwrap();
        assert_eq!(r.gradients, vec![Gradient::Vector(vec![0.0, 0.0, 1.0])]);
        assert!(vjp(OpInput::Relu { v: &[1.0] }, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pooled_feature_matches_composition() {
        let s = m(&[&[1.0, -2.0], &[0.5, 1.0], &[-1.0, 3.0], &[2.0, 2.0]]);
        let filter = [0.3, -0.2, 0.1, 0.4];
        let fused = pooled_feature(&s, &filter, 2, -0.1).unwrap();
        let h = relu(&conv_valid(&s, &Matrix::new(2, 2, filter.to_vec()).unwrap(), -0.1).unwrap());
        assert_eq!(max_pool_argmax(&h).unwrap(), (fused.value, fused.index));
        assert!(fused.active);

        let dead = pooled_feature(&s, &[0.0; 4], 2, -1.0).unwrap();
        assert_eq!((dead.value, dead.index, dead.active), (0.0, 0, false));
    }

    #[test]
    fn finite_diff_examples() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
        let err = finite_diff_check(|_| 4.2, &[1.0, -2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
        assert!(matches!(
            finite_diff_check(|x| 1.0 / x[0], &[0.0], &[0.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            finite_diff_check(|x| x[0].ln(), &[0.0], &[0.0], 1e-5),
            Err(Error::NonFinite(_))
        ));
    }
}
