//! Dense 2-D tensor kernels and activations with analytic backward rules.
//!
//! Everything here is double precision and row-major. The network is a fixed
//! pipeline, so each operation exposes an explicit backward function instead
//! of going through a general tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "tensor data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::config("ragged row lengths".to_string()));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor2 { rows: r, cols: c, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor2) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    /// self += scale * other (shapes must match).
    pub fn add_scaled(&mut self, other: &Tensor2, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            a_rows: a.rows,
            a_cols: a.cols,
            b_rows: b.rows,
            b_cols: b.cols,
        });
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.at(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Backward of c = a*b given upstream dc. Returns (da, db).
pub fn matmul_backward(a: &Tensor2, b: &Tensor2, dc: &Tensor2) -> (Tensor2, Tensor2) {
    let da = matmul(dc, &b.transpose()).expect("shapes fixed by forward");
    let db = matmul(&a.transpose(), dc).expect("shapes fixed by forward");
    (da, db)
}

pub fn leaky_relu(x: &Tensor2, slope: f64) -> Tensor2 {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction; each output row sums to 1.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..x.cols {
            let e = (row[j] - m).exp();
            out.set(i, j, e);
            sum += e;
        }
        for j in 0..x.cols {
            out.set(i, j, out.at(i, j) / sum);
        }
    }
    out
}

/// Softmax over an arbitrary support of logit values. Returns probabilities
/// aligned with `logits`.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward through a softmax given alpha = softmax(logits) and upstream
/// dalpha: dlogit_j = alpha_j * (dalpha_j - sum_k dalpha_k * alpha_k).
pub fn softmax_backward_slice(alpha: &[f64], dalpha: &[f64]) -> Vec<f64> {
    let dot: f64 = alpha.iter().zip(dalpha).map(|(a, d)| a * d).sum();
    alpha
        .iter()
        .zip(dalpha)
        .map(|(a, d)| a * (d - dot))
        .collect()
}

fn check_kernel_shape(kernel: &Tensor2) -> Result<()> {
    let (kr, kc) = (kernel.rows(), kernel.cols());
    let odd = |n: usize| n % 2 == 1;
    let ok = (kr == 1 && odd(kc)) || (kc == 1 && odd(kr)) || (kr == kc && odd(kr));
    if !ok {
        return Err(Error::config(format!(
            "convolution kernel must be 1xk, kx1 or kxk with odd k, got {}x{}",
            kr, kc
        )));
    }
    Ok(())
}

/// Zero-padded "same" cross-correlation: output has the input's shape.
pub fn conv2d_zeropad(input: &Tensor2, kernel: &Tensor2) -> Result<Tensor2> {
    check_kernel_shape(kernel)?;
    let (n, m) = (input.rows(), input.cols());
    let (kr, kc) = (kernel.rows(), kernel.cols());
    let (cu, cv) = (kr / 2, kc / 2);
    let mut out = Tensor2::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for u in 0..kr {
                let ii = i as isize + u as isize - cu as isize;
                if ii < 0 || ii >= n as isize {
                    continue;
                }
                for v in 0..kc {
                    let jj = j as isize + v as isize - cv as isize;
                    if jj < 0 || jj >= m as isize {
                        continue;
                    }
                    acc += input.at(ii as usize, jj as usize) * kernel.at(u, v);
                }
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Backward of conv2d_zeropad. Returns (dinput, dkernel).
pub fn conv2d_zeropad_backward(
    input: &Tensor2,
    kernel: &Tensor2,
    dout: &Tensor2,
) -> (Tensor2, Tensor2) {
    let (n, m) = (input.rows(), input.cols());
    let (kr, kc) = (kernel.rows(), kernel.cols());
    let (cu, cv) = (kr / 2, kc / 2);
    let mut dinput = Tensor2::zeros(n, m);
    let mut dkernel = Tensor2::zeros(kr, kc);
    for i in 0..n {
        for j in 0..m {
            let d = dout.at(i, j);
            if d == 0.0 {
                continue;
            }
            for u in 0..kr {
                let ii = i as isize + u as isize - cu as isize;
                if ii < 0 || ii >= n as isize {
                    continue;
                }
                for v in 0..kc {
                    let jj = j as isize + v as isize - cv as isize;
                    if jj < 0 || jj >= m as isize {
                        continue;
                    }
                    let (iu, ju) = (ii as usize, jj as usize);
                    dkernel.add_at(u, v, d * input.at(iu, ju));
                    dinput.add_at(iu, ju, d * kernel.at(u, v));
                }
            }
        }
    }
    (dinput, dkernel)
}

/// Glorot/Xavier uniform init: i.i.d. on [-b, b] with b = sqrt(6/(rows+cols)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor2 {
    let b = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-b, b))
        .collect();
    Tensor2 { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let m = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]])
            .unwrap();
        let i3 = Tensor2::identity(3);
        assert_eq!(matmul(&i3, &m).unwrap(), m);
    }

    #[test]
    fn matmul_annihilation() {
        let z = Tensor2::zeros(2, 3);
        let m = Tensor2::from_vec(3, 4, (0..12).map(|x| x as f64).collect()).unwrap();
        assert_eq!(matmul(&z, &m).unwrap(), Tensor2::zeros(2, 4));
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let a = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(4, 2);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor2::from_rows(&[vec![2.0, -2.0]]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data(), &[2.0, -0.4]);
        let zero = Tensor2::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(leaky_relu(&zero, 0.2).data(), &[0.0]);
        // slope 1 is the identity map
        let y1 = leaky_relu(&x, 1.0);
        assert_eq!(y1, x);
    }

    #[test]
    fn sigmoid_relu_softmax_basics() {
        let z = Tensor2::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(sigmoid(&z).data(), &[0.5]);
        let x = Tensor2::from_rows(&[vec![-1.0, 3.0]]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 3.0]);
        let s = softmax_rows(&Tensor2::from_rows(&[vec![0.0, 0.0]]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = RngStream::new(7);
        let x = Tensor2::from_vec(4, 5, (0..20).map(|_| rng.normal() * 3.0).collect()).unwrap();
        let s = softmax_rows(&x);
        for i in 0..4 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let k = Tensor2::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let x = Tensor2::from_vec(3, 4, (0..12).map(|x| x as f64).collect()).unwrap();
        assert_eq!(conv2d_zeropad(&x, &k).unwrap(), x);
        // centered identity kernel is the identity map for a 3x3 kernel too
        let mut k33 = Tensor2::zeros(3, 3);
        k33.set(1, 1, 1.0);
        assert_eq!(conv2d_zeropad(&x, &k33).unwrap(), x);
    }

    #[test]
    fn conv_zero_kernel() {
        let k = Tensor2::zeros(3, 1);
        let x = Tensor2::from_vec(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(conv2d_zeropad(&x, &k).unwrap(), Tensor2::zeros(2, 2));
    }

    #[test]
    fn conv_ones_kernel_on_ones_input() {
        // 3x3 ones kernel on 2x2 ones input: every window covers all 4 cells
        let k = Tensor2::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let x = Tensor2::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let y = conv2d_zeropad(&x, &k).unwrap();
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_even_kernel_rejected() {
        let k = Tensor2::zeros(1, 4);
        let x = Tensor2::zeros(3, 3);
        assert!(matches!(conv2d_zeropad(&x, &k), Err(Error::Config(_))));
    }

    // Direct sliding-window oracle, written independently of conv2d_zeropad.
    fn conv_oracle(input: &Tensor2, kernel: &Tensor2) -> Tensor2 {
        let (n, m) = (input.rows(), input.cols());
        let mut out = Tensor2::zeros(n, m);
        for i in 0..n as isize {
            for j in 0..m as isize {
                let mut acc = 0.0;
                for u in 0..kernel.rows() as isize {
                    for v in 0..kernel.cols() as isize {
                        let ii = i + u - kernel.rows() as isize / 2;
                        let jj = j + v - kernel.cols() as isize / 2;
                        if ii >= 0 && ii < n as isize && jj >= 0 && jj < m as isize {
                            acc += input.at(ii as usize, jj as usize)
                                * kernel.at(u as usize, v as usize);
                        }
                    }
                }
                out.set(i as usize, j as usize, acc);
            }
        }
        out
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let mut rng = RngStream::new(42);
        let x = Tensor2::from_vec(5, 5, (0..25).map(|_| rng.normal()).collect()).unwrap();
        for (kr, kc) in [(1, 3), (3, 1), (3, 3), (5, 5), (1, 5)] {
            let k = Tensor2::from_vec(kr, kc, (0..kr * kc).map(|_| rng.normal()).collect()).unwrap();
            let got = conv2d_zeropad(&x, &k).unwrap();
            let want = conv_oracle(&x, &k);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn glorot_bound_and_determinism() {
        let mut rng = RngStream::new(5);
        let t = glorot_uniform(3, 3, &mut rng); // b = sqrt(6/6) = 1
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));

        let a = glorot_uniform(4, 7, &mut RngStream::new(99));
        let b = glorot_uniform(4, 7, &mut RngStream::new(99));
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_empirical_mean_near_zero() {
        // mean of U[-b,b] over n draws has sd b/sqrt(3n); check within 3 sigma
        let mut rng = RngStream::new(1234);
        let t = glorot_uniform(100, 100, &mut rng);
        let b = (6.0 / 200.0f64).sqrt();
        let mean: f64 = t.data().iter().sum::<f64>() / 10_000.0;
        let sigma = b / (3.0f64 * 10_000.0).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3sigma {}", 3.0 * sigma);
    }
}
