//! Dense multi-way arrays.
//!
//! A tensor of order `M` with dimensions `(p_1, ..., p_M)` is stored as a
//! flat `Vec<f64>` in vectorization order: the first index varies fastest,
//! so entry `(i_1, ..., i_M)` (all indices zero-based) sits at linear
//! position `i_1 + i_2 * p_1 + i_3 * p_1 * p_2 + ...`. For matrices this is
//! column-major order. Every operation in the crate (matricization, mode
//! products, the Kronecker identities used by the solver) is defined
//! relative to this layout.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor shape must have at least one mode")]
    EmptyShape,
    #[error("mode {mode} has zero extent")]
    ZeroExtent { mode: usize },
    #[error("shape {shape:?} implies {expected} elements, data has {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("tensor with {elements} elements exceeds addressable size")]
    Overflow { elements: u128 },
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },
    #[error("linear position {position} out of range for {elements} elements")]
    PositionOutOfRange { position: usize, elements: usize },
    #[error("operand shapes {left:?} and {right:?} do not match")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("matrix has {cols} columns, mode {mode} has extent {extent}")]
    FactorColumns { mode: usize, cols: usize, extent: usize },
    #[error("vector length {len} does not match extent {extent} of mode {mode}")]
    VectorLength { mode: usize, len: usize, extent: usize },
    #[error("expected {expected} factor matrices, got {got}")]
    FactorCount { expected: usize, got: usize },
}

fn checked_num_elements(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::EmptyShape);
    }
    let mut n: usize = 1;
    for (mode, &p) in shape.iter().enumerate() {
        if p == 0 {
            return Err(TensorError::ZeroExtent { mode });
        }
        n = n.checked_mul(p).ok_or(TensorError::Overflow {
            elements: shape.iter().map(|&q| q as u128).product(),
        })?;
    }
    Ok(n)
}

/// Dense order-`M` tensor in vectorization order (first index fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n = checked_num_elements(&shape)?;
        if data.len() != n {
            return Err(TensorError::DataLength {
                shape,
                expected: n,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = checked_num_elements(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn num_elements(&self) -> usize {
        self.data.len()
    }

    /// The underlying buffer in vectorization order; `vec(x)` is exactly
    /// this slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Stride of `mode`: the product of the extents of all earlier modes.
    fn stride(&self, mode: usize) -> usize {
        self.shape[..mode].iter().product()
    }

    pub fn get(&self, index: &[usize]) -> Result<f64, TensorError> {
        let pos = multi_to_linear(index, &self.shape)?;
        Ok(self.data[pos])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<(), TensorError> {
        let pos = multi_to_linear(index, &self.shape)?;
        self.data[pos] = value;
        Ok(())
    }

    /// Mode-`mode` matricization: a `p_mode x (N / p_mode)` matrix whose
    /// columns enumerate the remaining indices, earlier modes fastest.
    /// Entry `(i_1, ..., i_M)` lands in row `i_mode` and column
    /// `sum over m != mode of i_m * prod of extents of modes before m
    /// excluding mode`.
    pub fn mode_matricize(&self, mode: usize) -> Result<Array2<f64>, TensorError> {
        self.check_mode(mode)?;
        let p = self.shape[mode];
        let cols = self.data.len() / p;
        let stride = self.stride(mode);
        let block = stride * p;
        let mut out = Array2::zeros((p, cols));
        // Removing mode `mode` from the mixed-radix expansion of the linear
        // position: low digits keep their place value, high digits drop by a
        // factor of p. This reproduces the column formula above.
        for (lin, &v) in self.data.iter().enumerate() {
            let low = lin % stride;
            let row = (lin / stride) % p;
            let high = lin / block;
            out[(row, low + high * stride)] = v;
        }
        Ok(out)
    }

    /// Inverse of [`mode_matricize`](Self::mode_matricize) for a matrix with
    /// `new_extent` rows: rebuilds a tensor whose `mode` extent is the row
    /// count of `mat`.
    fn fold_matricization(
        mode: usize,
        mut shape: Vec<usize>,
        mat: &Array2<f64>,
    ) -> DenseTensor {
        shape[mode] = mat.nrows();
        let p = mat.nrows();
        let stride: usize = shape[..mode].iter().product();
        let block = stride * p;
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        for (lin, slot) in data.iter_mut().enumerate() {
            let low = lin % stride;
            let row = (lin / stride) % p;
            let high = lin / block;
            *slot = mat[(row, low + high * stride)];
        }
        DenseTensor { shape, data }
    }

    /// Mode product: replaces every mode-`mode` fiber `f` by `mat * f`.
    /// `mat` must have `p_mode` columns; the result has the same shape with
    /// the `mode` extent replaced by the row count of `mat`.
    pub fn mode_product(&self, mode: usize, mat: &Array2<f64>) -> Result<Self, TensorError> {
        self.check_mode(mode)?;
        if mat.ncols() != self.shape[mode] {
            return Err(TensorError::FactorColumns {
                mode,
                cols: mat.ncols(),
                extent: self.shape[mode],
            });
        }
        let unfolded = self.mode_matricize(mode)?;
        let product = mat.dot(&unfolded);
        Ok(Self::fold_matricization(mode, self.shape.clone(), &product))
    }

    /// Contraction of one mode against a vector: returns the order-`M-1`
    /// tensor with entries `sum_i v[i] * x[..., i, ...]`. Contracting the
    /// only mode of an order-1 tensor yields a single-element tensor of
    /// shape `[1]`.
    pub fn mode_vector_product(&self, mode: usize, v: &[f64]) -> Result<Self, TensorError> {
        self.check_mode(mode)?;
        let p = self.shape[mode];
        if v.len() != p {
            return Err(TensorError::VectorLength {
                mode,
                len: v.len(),
                extent: p,
            });
        }
        let stride = self.stride(mode);
        let block = stride * p;
        let mut out_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != mode)
            .map(|(_, &q)| q)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out_len: usize = self.data.len() / p;
        let mut data = vec![0.0; out_len];
        let highs = self.data.len() / block;
        for high in 0..highs {
            for (i, &vi) in v.iter().enumerate() {
                let src = high * block + i * stride;
                let dst = high * stride;
                for low in 0..stride {
                    data[dst + low] += vi * self.data[src + low];
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Tucker contraction `[[self; factors_1, ..., factors_M]]`: applies one
    /// mode product per mode. Vectorized, this equals
    /// `(factors_M kron ... kron factors_1) * vec(self)`.
    pub fn tucker(&self, factors: &[&Array2<f64>]) -> Result<Self, TensorError> {
        if factors.len() != self.order() {
            return Err(TensorError::FactorCount {
                expected: self.order(),
                got: factors.len(),
            });
        }
        let mut out = self.clone();
        for (mode, factor) in factors.iter().enumerate() {
            out = out.mode_product(mode, factor)?;
        }
        Ok(out)
    }

    /// Inner product: sum of elementwise products of two equal-shaped tensors.
    pub fn inner(&self, other: &Self) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    fn check_mode(&self, mode: usize) -> Result<(), TensorError> {
        if mode >= self.order() {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }
}

/// Linear position (zero-based) of a zero-based multi-index, first index
/// fastest.
pub fn multi_to_linear(index: &[usize], shape: &[usize]) -> Result<usize, TensorError> {
    if index.len() != shape.len() {
        return Err(TensorError::IndexOutOfRange {
            index: index.to_vec(),
            shape: shape.to_vec(),
        });
    }
    let mut pos = 0;
    let mut stride = 1;
    for (m, (&i, &p)) in index.iter().zip(shape).enumerate() {
        if i >= p {
            return Err(TensorError::IndexOutOfRange {
                index: index.to_vec(),
                shape: shape.to_vec(),
            });
        }
        pos += i * stride;
        stride *= p;
        let _ = m;
    }
    Ok(pos)
}

/// Inverse of [`multi_to_linear`]: the zero-based multi-index of a linear
/// position.
pub fn linear_to_multi_index(position: usize, shape: &[usize]) -> Result<Vec<usize>, TensorError> {
    let n = checked_num_elements(shape)?;
    if position >= n {
        return Err(TensorError::PositionOutOfRange {
            position,
            elements: n,
        });
    }
    let mut rem = position;
    let mut index = Vec::with_capacity(shape.len());
    for &p in shape {
        index.push(rem % p);
        rem /= p;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let (ar, ac) = a.dim();
        let (br, bc) = b.dim();
        let mut out = Array2::zeros((ar * br, ac * bc));
        for i in 0..ar {
            for j in 0..ac {
                for k in 0..br {
                    for l in 0..bc {
                        out[(i * br + k, j * bc + l)] = a[(i, j)] * b[(k, l)];
                    }
                }
            }
        }
        out
    }

    fn splitmix(state: &mut u64) -> f64 {
        // Small deterministic generator for test fixtures.
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    fn random_tensor(shape: &[usize], state: &mut u64) -> DenseTensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| splitmix(state)).collect();
        DenseTensor::new(shape.to_vec(), data).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, state: &mut u64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| splitmix(state))
    }

    #[test]
    fn vectorization_of_matrix_is_column_major() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(&[0, 0]).unwrap(), 1.0);
        assert_eq!(t.get(&[1, 0]).unwrap(), 2.0);
        assert_eq!(t.get(&[0, 1]).unwrap(), 3.0);
        assert_eq!(t.get(&[1, 1]).unwrap(), 4.0);
    }

    #[test]
    fn linear_position_matches_stride_formula() {
        // One-based statement: entry (2,3,1) of a (2,3,2) tensor sits at
        // vec position 1 + (2-1) + (3-1)*2 = 6.
        let shape = [2usize, 3, 2];
        let pos = multi_to_linear(&[1, 2, 0], &shape).unwrap();
        assert_eq!(pos + 1, 6);
    }

    #[test]
    fn vec_length_is_product_of_extents() {
        let t = DenseTensor::zeros(vec![3, 4, 5]).unwrap();
        assert_eq!(t.data().len(), 60);
    }

    #[test]
    fn index_roundtrip_is_exhaustive_on_small_shapes() {
        let shapes: [&[usize]; 5] = [&[1], &[4], &[2, 3], &[2, 3, 2], &[3, 1, 2, 2]];
        for shape in shapes {
            let n: usize = shape.iter().product();
            for pos in 0..n {
                let idx = linear_to_multi_index(pos, shape).unwrap();
                assert_eq!(multi_to_linear(&idx, shape).unwrap(), pos);
            }
        }
    }

    #[test]
    fn index_sequences_match_closed_form() {
        // One-based closed form for the multi-index of position j:
        // j_1 = wrap(j, p_1) and j_m = ceil(s_{m+1} / prod_{i<m} p_i) with
        // s_{M+1} = j, s_m = wrap(s_{m+1}, prod_{i<m} p_i), where
        // wrap(a, b) is the remainder written in 1..=b.
        fn wrap(a: usize, b: usize) -> usize {
            let r = a % b;
            if r == 0 {
                b
            } else {
                r
            }
        }
        let shape = [2usize, 3, 2];
        let n: usize = shape.iter().product();
        for j in 1..=n {
            let mut s = j;
            let mut one_based = vec![0usize; shape.len()];
            for m in (1..shape.len()).rev() {
                let base: usize = shape[..m].iter().product();
                one_based[m] = s.div_ceil(base);
                s = wrap(s, base);
            }
            one_based[0] = wrap(s, shape[0]);
            let got = linear_to_multi_index(j - 1, &shape).unwrap();
            let got_one_based: Vec<usize> = got.iter().map(|&i| i + 1).collect();
            assert_eq!(got_one_based, one_based, "position {j}");
        }
        // Spot value from the closed form: j = 7 in shape (2,3,2) is (1,1,2).
        let idx = linear_to_multi_index(6, &shape).unwrap();
        assert_eq!(idx, vec![0, 0, 1]);
    }

    #[test]
    fn matricization_of_matrix_modes() {
        let t = DenseTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let m0 = t.mode_matricize(0).unwrap();
        assert_eq!(m0.dim(), (2, 3));
        assert_eq!(m0[(0, 0)], 1.0);
        assert_eq!(m0[(1, 2)], 6.0);
        let m1 = t.mode_matricize(1).unwrap();
        assert_eq!(m1.dim(), (3, 2));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m1[(j, i)], m0[(i, j)]);
            }
        }
    }

    #[test]
    fn matricization_matches_column_formula_exhaustively() {
        let shapes: [&[usize]; 3] = [&[2, 3, 2], &[3, 2, 2, 2], &[4, 3]];
        let mut state = 7u64;
        for shape in shapes {
            let t = random_tensor(shape, &mut state);
            for mode in 0..shape.len() {
                let unfolded = t.mode_matricize(mode).unwrap();
                let n: usize = shape.iter().product();
                for pos in 0..n {
                    let idx = linear_to_multi_index(pos, shape).unwrap();
                    // Column index: mixed-radix over the remaining modes,
                    // earlier modes fastest.
                    let mut col = 0usize;
                    let mut base = 1usize;
                    for (m, &i) in idx.iter().enumerate() {
                        if m == mode {
                            continue;
                        }
                        col += i * base;
                        base *= shape[m];
                    }
                    assert_eq!(unfolded[(idx[mode], col)], t.data()[pos]);
                }
            }
        }
    }

    #[test]
    fn mode_product_by_identity_is_identity() {
        let mut state = 11u64;
        let t = random_tensor(&[3, 2, 4], &mut state);
        for mode in 0..3 {
            let eye = Array2::eye(t.shape()[mode]);
            let out = t.mode_product(mode, &eye).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_matches_matricized_multiply() {
        let mut state = 13u64;
        let t = random_tensor(&[2, 3, 2], &mut state);
        for mode in 0..3 {
            let m = random_matrix(4, t.shape()[mode], &mut state);
            let out = t.mode_product(mode, &m).unwrap();
            let expected = m.dot(&t.mode_matricize(mode).unwrap());
            let got = out.mode_matricize(mode).unwrap();
            assert_eq!(got.dim(), expected.dim());
            for (g, e) in got.iter().zip(expected.iter()) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mode_products_on_distinct_modes_commute() {
        let mut state = 17u64;
        let t = random_tensor(&[3, 4, 2], &mut state);
        let a = random_matrix(2, 3, &mut state);
        let b = random_matrix(5, 4, &mut state);
        let left = t.mode_product(0, &a).unwrap().mode_product(1, &b).unwrap();
        let right = t.mode_product(1, &b).unwrap().mode_product(0, &a).unwrap();
        assert_eq!(left.shape(), right.shape());
        for (l, r) in left.data().iter().zip(right.data()) {
            assert_abs_diff_eq!(l, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn mode_vector_product_with_unit_vector_takes_a_slice() {
        let mut state = 19u64;
        let t = random_tensor(&[2, 3, 2], &mut state);
        let mut e1 = vec![0.0; 3];
        e1[1] = 1.0;
        let sliced = t.mode_vector_product(1, &e1).unwrap();
        assert_eq!(sliced.shape(), &[2, 2]);
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(
                    sliced.get(&[i, k]).unwrap(),
                    t.get(&[i, 1, k]).unwrap()
                );
            }
        }
    }

    #[test]
    fn mode_vector_product_of_matrix_is_matvec() {
        let t = DenseTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = [1.0, -1.0, 2.0];
        let out = t.mode_vector_product(1, &v).unwrap();
        assert_eq!(out.shape(), &[2]);
        // Row i of the matrix dotted with v.
        assert_abs_diff_eq!(out.data()[0], 1.0 - 3.0 + 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[1], 2.0 - 4.0 + 12.0, epsilon = 1e-15);
    }

    #[test]
    fn mode_vector_product_with_zero_vector_is_zero() {
        let mut state = 23u64;
        let t = random_tensor(&[2, 2, 3], &mut state);
        let out = t.mode_vector_product(2, &[0.0; 3]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.shape(), &[2, 2]);
    }

    #[test]
    fn tucker_with_identity_factors_is_identity() {
        let mut state = 29u64;
        let t = random_tensor(&[2, 3, 2], &mut state);
        let eyes: Vec<Array2<f64>> = t.shape().iter().map(|&p| Array2::eye(p)).collect();
        let refs: Vec<&Array2<f64>> = eyes.iter().collect();
        assert_eq!(t.tucker(&refs).unwrap(), t);
    }

    #[test]
    fn tucker_matches_kronecker_times_vec() {
        let mut state = 31u64;
        for shape in [[2usize, 3, 2], [3, 2, 2]] {
            let t = random_tensor(&shape, &mut state);
            let factors: Vec<Array2<f64>> = shape
                .iter()
                .map(|&p| random_matrix(p, p, &mut state))
                .collect();
            let refs: Vec<&Array2<f64>> = factors.iter().collect();
            let out = t.tucker(&refs).unwrap();
            // vec(tucker) = (G_M kron ... kron G_1) vec(t)
            let mut big = factors.last().unwrap().clone();
            for g in factors.iter().rev().skip(1) {
                big = kron(&big, g);
            }
            let vec_t = ndarray::Array1::from(t.data().to_vec());
            let expected = big.dot(&vec_t);
            for (got, exp) in out.data().iter().zip(expected.iter()) {
                assert_abs_diff_eq!(got, exp, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn tucker_of_zero_core_is_zero() {
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        let mut state = 37u64;
        let a = random_matrix(2, 2, &mut state);
        let b = random_matrix(2, 2, &mut state);
        let out = t.tucker(&[&a, &b]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_product_cases() {
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(ones.inner(&ones).unwrap(), 4.0);
        let zero = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert_eq!(ones.inner(&zero).unwrap(), 0.0);
        let mut state = 41u64;
        let a = random_tensor(&[2, 3], &mut state);
        let b = random_tensor(&[2, 3], &mut state);
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        assert_abs_diff_eq!(a.inner(&b).unwrap(), dot, epsilon = 1e-14);
        let c = random_tensor(&[3, 2], &mut state);
        assert!(matches!(
            a.inner(&c),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn shape_validation_errors() {
        assert!(matches!(
            DenseTensor::zeros(vec![]),
            Err(TensorError::EmptyShape)
        ));
        assert!(matches!(
            DenseTensor::zeros(vec![2, 0]),
            Err(TensorError::ZeroExtent { mode: 1 })
        ));
        assert!(matches!(
            DenseTensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::DataLength { .. })
        ));
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(
            t.mode_matricize(2),
            Err(TensorError::ModeOutOfRange { .. })
        ));
        assert!(t.get(&[2, 0]).is_err());
        assert!(linear_to_multi_index(4, &[2, 2]).is_err());
    }
}
