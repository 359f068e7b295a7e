//! Gaussian source models: the random-placement sensor field and the CEO
//! setup, plus the Cholesky services (sampling, log-determinants) that every
//! KLD computation downstream relies on.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// First jitter added to the diagonal when a Cholesky factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before a matrix is declared singular.
pub const JITTER_MAX: f64 = 1e-6;

/// Zero-mean Gaussian model N(0, R) over `n` sources.
///
/// For the sensor field `R` is a correlation matrix (unit diagonal). The CEO
/// model stores the covariance of (U₀, U₁, …, U_N) with U₀ at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    n: usize,
    /// Row-major `n × n` entries.
    entries: Vec<f64>,
}

impl CovarianceModel {
    /// Wraps a row-major matrix after checking symmetry, a positive diagonal
    /// and correlation coefficients inside [−1, 1].
    pub fn from_rows(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model("model needs at least one source".into()));
        }
        if entries.len() != n * n {
            return Err(Error::Model(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        let model = CovarianceModel { n, entries };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite matrix entry".into()));
        }
        for i in 0..self.n {
            let d = self.get(i, i);
            if d <= 0.0 {
                return Err(Error::Model(format!("variance of source {i} is {d}, must be > 0")));
            }
            for j in 0..i {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a != b {
                    return Err(Error::Model(format!("matrix not symmetric at ({i},{j})")));
                }
                let rho = a / (d * self.get(j, j)).sqrt();
                if rho.abs() > 1.0 + 1e-12 {
                    return Err(Error::Model(format!(
                        "correlation {rho} between sources {i} and {j} outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.get(i, j) / (self.get(i, i) * self.get(j, j)).sqrt()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// Submatrix R_S for the ordered index set `scope`.
    pub fn submatrix(&self, scope: &[usize]) -> DMatrix<f64> {
        let k = scope.len();
        DMatrix::from_fn(k, k, |r, c| self.get(scope[r], scope[c]))
    }

    /// Model restricted to `scope`, which is again a Gaussian model.
    pub fn submodel(&self, scope: &[usize]) -> Result<CovarianceModel> {
        self.check_scope(scope)?;
        let entries = scope
            .iter()
            .flat_map(|&r| scope.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Ok(CovarianceModel { n: scope.len(), entries })
    }

    fn check_scope(&self, scope: &[usize]) -> Result<()> {
        if let Some(&bad) = scope.iter().find(|&&i| i >= self.n) {
            return Err(Error::Model(format!("source index {bad} out of range for N={}", self.n)));
        }
        let mut sorted = scope.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Model("index set contains duplicates".into()));
        }
        Ok(())
    }

    /// Natural log-determinant log|R_S| via Cholesky. The empty set yields 0.
    pub fn log_det_submatrix(&self, scope: &[usize]) -> Result<f64> {
        self.check_scope(scope)?;
        if scope.is_empty() {
            return Ok(0.0);
        }
        let chol = cholesky_with_jitter(self.submatrix(scope))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// log|R| over all sources.
    pub fn log_det(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.n).collect();
        self.log_det_submatrix(&all)
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        let chol = cholesky_with_jitter(self.matrix())?;
        Ok(GaussianSampler { dim: self.n, lower: chol.l() })
    }

    /// Draws `batch` vectors from N(0, R).
    pub fn sample(&self, rng: &mut StreamRng, batch: usize) -> Result<Vec<Vec<f64>>> {
        let sampler = self.sampler()?;
        let mut flat = vec![0.0; batch * self.n];
        sampler.fill(rng, &mut flat);
        Ok(flat.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// Matrix as CSV, one row per line, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Cholesky factorization, retrying with growing diagonal jitter.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut jittered = m.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Singular { max_jitter: JITTER_MAX })
}

/// Draws from N(0, R) as `L·z` with `L` the lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    dim: usize,
    lower: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills `out` (length a multiple of `dim`) with consecutive samples.
    pub fn fill(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let d = self.dim;
        let mut z = vec![0.0; d];
        for sample in out.chunks_exact_mut(d) {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for (r, x) in sample.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, zc) in z.iter().enumerate().take(r + 1) {
                    acc += self.lower[(r, c)] * zc;
                }
                *x = acc;
            }
        }
    }
}

/// Sensors in the unit square with exponentially decaying correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorField {
    pub positions: Vec<[f64; 2]>,
    pub beta: f64,
}

impl SensorField {
    /// Places `n` sensors uniformly at random in the unit square.
    pub fn random(n: usize, beta: f64, rng: &mut StreamRng) -> Self {
        let positions = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        SensorField { positions, beta }
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        build_field_model(&self.positions, self.beta)
    }
}

/// Correlation matrix ρ_{k,l} = exp(−β·d_{k,l}) for the given positions.
pub fn build_field_model(positions: &[[f64; 2]], beta: f64) -> Result<CovarianceModel> {
    if positions.is_empty() {
        return Err(Error::Model("field needs at least one sensor".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Model(format!("beta must be finite and >= 0, got {beta}")));
    }
    if positions.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Model("non-finite sensor coordinate".into()));
    }
    let n = positions.len();
    let mut entries = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let (p, q) = (positions[k], positions[l]);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            entries[k * n + l] = if k == l { 1.0 } else { (-beta * d).exp() };
        }
    }
    CovarianceModel::from_rows(n, entries)
}

/// Parameters of the quadratic Gaussian CEO setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeoModel {
    pub n_encoders: usize,
    pub source_variance: f64,
    pub noise_variance: f64,
}

impl CeoModel {
    pub fn model(&self) -> Result<CovarianceModel> {
        build_ceo_model(self.n_encoders, self.source_variance, self.noise_variance)
    }
}

/// Covariance of (U₀, U₁, …, U_N) with U_n = U₀ + noise_n.
pub fn build_ceo_model(n: usize, sigma0_sq: f64, lambda_sq: f64) -> Result<CovarianceModel> {
    if n == 0 {
        return Err(Error::Model("CEO model needs at least one encoder".into()));
    }
    if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) || !(lambda_sq > 0.0 && lambda_sq.is_finite()) {
        return Err(Error::Model(format!(
            "CEO variances must be positive, got sigma0^2={sigma0_sq}, lambda^2={lambda_sq}"
        )));
    }
    let dim = n + 1;
    let mut entries = vec![sigma0_sq; dim * dim];
    for i in 1..dim {
        entries[i * dim + i] = sigma0_sq + lambda_sq;
    }
    CovarianceModel::from_rows(dim, entries)
}
