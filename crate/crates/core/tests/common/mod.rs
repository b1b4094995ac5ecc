//! Shared helpers for integration tests: a small deterministic RNG, dense
//! Kronecker assembly, and a slow but independent proximal-gradient solver
//! for the group-lasso problem used to cross-check the coordinate-descent
//! implementation.
//!
//! Each integration-test target compiles this module separately and none
//! uses every helper, so per-target dead-code analysis is meaningless here.
#![allow(dead_code)]

use ndarray::Array2;

/// SplitMix64: tiny deterministic generator for test fixtures.
pub struct FixtureRng(pub u64);

impl FixtureRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform on [-0.5, 0.5).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Random symmetric positive definite matrix with comfortable conditioning.
pub fn random_spd(rng: &mut FixtureRng, p: usize) -> Array2<f64> {
    let b = Array2::from_shape_fn((p, p), |_| rng.uniform());
    let mut s = b.t().dot(&b);
    for i in 0..p {
        s[(i, i)] += 0.5 + p as f64 / 2.0;
    }
    s
}

/// Kronecker product `a kron b`.
pub fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let scale = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = scale * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Explicit covariance of the vectorized tensor: `Sigma_M kron ... kron
/// Sigma_1`, matching first-index-fastest vectorization.
pub fn kron_all(sigmas: &[Array2<f64>]) -> Array2<f64> {
    let mut out = sigmas[0].clone();
    for s in &sigmas[1..] {
        out = kron(s, &out);
    }
    out
}

fn group_threshold(v: &mut [f64], threshold: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = 1.0 - threshold / norm;
        for x in v.iter_mut() {
            *x *= scale;
        }
    } else {
        for x in v.iter_mut() {
            *x = 0.0;
        }
    }
}

/// Independent reference minimizer of
/// `sum_k [1/2 beta_k' S beta_k - delta_k' beta_k] + lambda sum_j ||beta_.j||`
/// by proximal gradient descent on the dense matrix `S`. Converges to the
/// same optimum as the coordinate-descent solver (the problem is strictly
/// convex for positive definite `S`), but shares no code with it.
pub fn dense_group_lasso(
    s: &Array2<f64>,
    delta: &Array2<f64>,
    lambda: f64,
    max_iters: usize,
) -> Array2<f64> {
    let p = s.nrows();
    let km1 = delta.nrows();
    // Gershgorin upper bound on the largest eigenvalue gives a safe step.
    let mut lip = 0.0f64;
    for i in 0..p {
        let row_sum: f64 = (0..p).map(|j| s[(i, j)].abs()).sum();
        lip = lip.max(row_sum);
    }
    let step = 1.0 / lip;
    let mut beta = Array2::<f64>::zeros((km1, p));
    let mut block = vec![0.0; km1];
    for _ in 0..max_iters {
        // Gradient of the smooth part: S beta_k - delta_k, per contrast.
        let grad = beta.dot(s) - delta;
        let mut max_change = 0.0f64;
        for j in 0..p {
            for k in 0..km1 {
                block[k] = beta[(k, j)] - step * grad[(k, j)];
            }
            group_threshold(&mut block, step * lambda);
            for k in 0..km1 {
                let change = (block[k] - beta[(k, j)]).abs();
                if change > max_change {
                    max_change = change;
                }
                beta[(k, j)] = block[k];
            }
        }
        if max_change < 1e-13 {
            break;
        }
    }
    beta
}

/// Penalized objective on the dense matrix, for descent checks.
pub fn dense_objective(
    s: &Array2<f64>,
    delta: &Array2<f64>,
    beta: &Array2<f64>,
    lambda: f64,
) -> f64 {
    let km1 = delta.nrows();
    let p = s.nrows();
    let sb = beta.dot(s);
    let mut value = 0.0;
    for k in 0..km1 {
        for j in 0..p {
            value += 0.5 * beta[(k, j)] * sb[(k, j)] - delta[(k, j)] * beta[(k, j)];
        }
    }
    for j in 0..p {
        value += lambda
            * (0..km1)
                .map(|k| beta[(k, j)] * beta[(k, j)])
                .sum::<f64>()
                .sqrt();
    }
    value
}
