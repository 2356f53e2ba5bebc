//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Hyperparameters (per-dimension lengthscales, signal variance, noise
//! variance) are fitted by maximizing the log marginal likelihood with
//! multi-start gradient ascent. Outputs are standardized to zero mean
//! and unit variance before fitting; predictions invert the transform.
//!
//! Generic over the scalar type; `crate::GpModel` pins f64.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("gp fit needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("kernel matrix not positive definite even with jitter escalation")]
    FitFailed,
    #[error("dimension mismatch: model is {expected}-dimensional, query is {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Log-space kernel hyperparameters: [log l_1 .. log l_d, log sf^2, log sn^2].
#[derive(Debug, Clone, PartialEq)]
pub struct GpParams<F> {
    pub log_lengthscales: Vec<F>,
    pub log_signal_variance: F,
    pub log_noise_variance: F,
}

impl<F: Float> GpParams<F> {
    fn to_vec(&self) -> Vec<F> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_variance);
        v.push(self.log_noise_variance);
        v
    }

    fn from_vec(v: &[F]) -> Self {
        let d = v.len() - 2;
        Self {
            log_lengthscales: v[..d].to_vec(),
            log_signal_variance: v[d],
            log_noise_variance: v[d + 1],
        }
    }
}

pub struct GpModel<F> {
    inputs: Vec<Vec<F>>,
    params: GpParams<F>,
    y_mean: F,
    y_sd: F,
    chol: Chol<F>,
    alpha: Vec<F>,
}

/// Lower-triangular Cholesky factor stored row-major.
struct Chol<F> {
    l: Vec<F>,
    n: usize,
}

impl<F: Float> Chol<F> {
    /// In-place Cholesky of a symmetric matrix; None if not PD.
    fn factor(a: &[F], n: usize) -> Option<Self> {
        let mut l = vec![F::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= F::zero() {
                        return None;
                    }
                    l[i * n + j] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { l, n })
    }

    /// Solves L z = b.
    fn forward(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut z = vec![F::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
        z
    }

    /// Solves L^T x = z.
    fn backward(&self, z: &[F]) -> Vec<F> {
        let n = self.n;
        let mut x = vec![F::zero(); n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    fn solve(&self, b: &[F]) -> Vec<F> {
        self.backward(&self.forward(b))
    }

    fn log_det_half(&self) -> F {
        let mut s = F::zero();
        for i in 0..self.n {
            s = s + self.l[i * self.n + i].ln();
        }
        s
    }

    /// Full inverse of the factored matrix.
    fn inverse(&self) -> Vec<F> {
        let n = self.n;
        let mut inv = vec![F::zero(); n * n];
        for c in 0..n {
            let mut e = vec![F::zero(); n];
            e[c] = F::one();
            let col = self.solve(&e);
            for r in 0..n {
                inv[r * n + c] = col[r];
            }
        }
        inv
    }
}

fn se_ard_kernel<F: Float>(a: &[F], b: &[F], params: &GpParams<F>) -> F {
    let mut q = F::zero();
    for ((&xa, &xb), &ll) in a.iter().zip(b).zip(&params.log_lengthscales) {
        let l = ll.exp();
        let d = (xa - xb) / l;
        q = q + d * d;
    }
    params.log_signal_variance.exp() * (-q / (F::one() + F::one())).exp()
}

fn kernel_matrix<F: Float>(inputs: &[Vec<F>], params: &GpParams<F>, jitter: F) -> Vec<F> {
    let n = inputs.len();
    let sn2 = params.log_noise_variance.exp();
    let mut k = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = se_ard_kernel(&inputs[i], &inputs[j], params);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] = k[i * n + i] + sn2 + jitter;
    }
    k
}

/// Log marginal likelihood and its gradient with respect to the
/// log-space parameter vector [log l_1..d, log sf^2, log sn^2].
///
/// Returns None when the kernel matrix fails to factor.
pub fn lml_and_grad<F: Float>(
    inputs: &[Vec<F>],
    outputs: &[F],
    params: &GpParams<F>,
) -> Option<(F, Vec<F>)> {
    let n = inputs.len();
    let dim = params.log_lengthscales.len();
    let two = F::one() + F::one();
    let k = kernel_matrix(inputs, params, F::zero());
    let chol = Chol::factor(&k, n)?;
    let alpha = chol.solve(outputs);

    let mut yt_alpha = F::zero();
    for i in 0..n {
        yt_alpha = yt_alpha + outputs[i] * alpha[i];
    }
    let half = F::one() / two;
    let pi = F::from(std::f64::consts::PI).unwrap();
    let lml = -half * yt_alpha
        - chol.log_det_half()
        - F::from(n).unwrap() * half * (two * pi).ln();

    // A = alpha alpha^T - K^{-1}; dLML/dtheta = 0.5 tr(A dK/dtheta)
    let kinv = chol.inverse();
    let mut a = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = alpha[i] * alpha[j] - kinv[i * n + j];
        }
    }

    let mut grad = vec![F::zero(); dim + 2];
    let sn2 = params.log_noise_variance.exp();
    for i in 0..n {
        for j in 0..n {
            let kse = se_ard_kernel(&inputs[i], &inputs[j], params);
            let aij = a[i * n + j];
            // signal variance: dK/dlog sf^2 = Kse
            grad[dim] = grad[dim] + half * aij * kse;
            for d in 0..dim {
                let l = params.log_lengthscales[d].exp();
                let diff = (inputs[i][d] - inputs[j][d]) / l;
                grad[d] = grad[d] + half * aij * kse * diff * diff;
            }
        }
        // noise variance: dK/dlog sn^2 = sn^2 I
        grad[dim + 1] = grad[dim + 1] + half * a[i * n + i] * sn2;
    }
    Some((lml, grad))
}

fn lml_only<F: Float>(inputs: &[Vec<F>], outputs: &[F], params: &GpParams<F>) -> Option<F> {
    let n = inputs.len();
    let two = F::one() + F::one();
    let k = kernel_matrix(inputs, params, F::zero());
    let chol = Chol::factor(&k, n)?;
    let alpha = chol.solve(outputs);
    let mut yt_alpha = F::zero();
    for i in 0..n {
        yt_alpha = yt_alpha + outputs[i] * alpha[i];
    }
    let half = F::one() / two;
    let pi = F::from(std::f64::consts::PI).unwrap();
    Some(-half * yt_alpha - chol.log_det_half() - F::from(n).unwrap() * half * (two * pi).ln())
}

const HYPER_STEPS: usize = 60;
const RESTARTS: usize = 3;

impl<F: Float> GpModel<F> {
    /// Fits the GP to (input, output) pairs. Duplicate inputs are
    /// averaged before fitting.
    pub fn fit(inputs: &[Vec<F>], outputs: &[F]) -> Result<Self, GpError> {
        let (inputs, outputs) = average_duplicates(inputs, outputs);
        let n = inputs.len();
        if n < 2 {
            return Err(GpError::TooFewObservations(n));
        }
        let dim = inputs[0].len();

        // standardize outputs
        let nf = F::from(n).unwrap();
        let mut y_mean = F::zero();
        for &y in &outputs {
            y_mean = y_mean + y;
        }
        y_mean = y_mean / nf;
        let mut var = F::zero();
        for &y in &outputs {
            var = var + (y - y_mean) * (y - y_mean);
        }
        var = var / nf;
        let y_sd = if var > F::zero() { var.sqrt() } else { F::one() };
        let y_std: Vec<F> = outputs.iter().map(|&y| (y - y_mean) / y_sd).collect();

        let f = |x: f64| F::from(x).unwrap();
        let starts: Vec<GpParams<F>> = vec![
            GpParams {
                log_lengthscales: vec![f(0.5f64.ln()); dim],
                log_signal_variance: F::zero(),
                log_noise_variance: f((1e-4f64).ln()),
            },
            GpParams {
                log_lengthscales: vec![f(1.5f64.ln()); dim],
                log_signal_variance: F::zero(),
                log_noise_variance: f((1e-2f64).ln()),
            },
            GpParams {
                log_lengthscales: vec![f(0.2f64.ln()); dim],
                log_signal_variance: F::zero(),
                log_noise_variance: f((1e-6f64).ln()),
            },
        ];

        let mut best: Option<(F, GpParams<F>)> = None;
        for start in starts.into_iter().take(RESTARTS) {
            if let Some((lml, params)) = ascend(&inputs, &y_std, start) {
                if best.as_ref().map(|(b, _)| lml > *b).unwrap_or(true) {
                    best = Some((lml, params));
                }
            }
        }
        let (_, params) = best.ok_or(GpError::FitFailed)?;

        // factor with jitter escalation for the stored predictor
        let mut jitter = f(1e-10);
        let max_jitter = f(1e-4);
        let chol = loop {
            let k = kernel_matrix(&inputs, &params, jitter);
            if let Some(c) = Chol::factor(&k, n) {
                break c;
            }
            jitter = jitter * f(10.0);
            if jitter > max_jitter {
                return Err(GpError::FitFailed);
            }
        };
        let alpha = chol.solve(&y_std);

        Ok(Self {
            inputs,
            params,
            y_mean,
            y_sd,
            chol,
            alpha,
        })
    }

    pub fn params(&self) -> &GpParams<F> {
        &self.params
    }

    /// Posterior mean and latent variance at `x`, in output units.
    pub fn predict(&self, x: &[F]) -> Result<(F, F), GpError> {
        let dim = self.inputs[0].len();
        if x.len() != dim {
            return Err(GpError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let kstar: Vec<F> = self
            .inputs
            .iter()
            .map(|xi| se_ard_kernel(x, xi, &self.params))
            .collect();
        let mut mean_std = F::zero();
        for i in 0..kstar.len() {
            mean_std = mean_std + kstar[i] * self.alpha[i];
        }
        let v = self.chol.forward(&kstar);
        let mut vtv = F::zero();
        for &vi in &v {
            vtv = vtv + vi * vi;
        }
        let var_std = (self.params.log_signal_variance.exp() - vtv).max(F::zero());
        Ok((mean_std * self.y_sd + self.y_mean, var_std * self.y_sd * self.y_sd))
    }
}

fn ascend<F: Float>(
    inputs: &[Vec<F>],
    y: &[F],
    start: GpParams<F>,
) -> Option<(F, GpParams<F>)> {
    let f = |x: f64| F::from(x).unwrap();
    let lo = f(-10.0);
    let hi = f(5.0);
    let mut theta = start.to_vec();
    let mut step = f(0.1);
    let (mut lml, mut grad) = lml_and_grad(inputs, y, &GpParams::from_vec(&theta))?;
    for _ in 0..HYPER_STEPS {
        let norm = grad
            .iter()
            .fold(F::zero(), |s, &g| s + g * g)
            .sqrt()
            .max(f(1e-12));
        let proposal: Vec<F> = theta
            .iter()
            .zip(&grad)
            .map(|(&t, &g)| (t + step * g / norm).max(lo).min(hi))
            .collect();
        match lml_and_grad(inputs, y, &GpParams::from_vec(&proposal)) {
            Some((new_lml, new_grad)) if new_lml > lml => {
                theta = proposal;
                lml = new_lml;
                grad = new_grad;
                step = step * f(1.2);
            }
            _ => {
                step = step * f(0.5);
                if step < f(1e-6) {
                    break;
                }
            }
        }
    }
    // re-score to guard against a final rejected proposal
    let params = GpParams::from_vec(&theta);
    lml_only(inputs, y, &params).map(|l| (l, params))
}

fn average_duplicates<F: Float>(inputs: &[Vec<F>], outputs: &[F]) -> (Vec<Vec<F>>, Vec<F>) {
    let mut xs: Vec<Vec<F>> = Vec::new();
    let mut sums: Vec<F> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (x, &y) in inputs.iter().zip(outputs) {
        if let Some(i) = xs.iter().position(|e| e == x) {
            sums[i] = sums[i] + y;
            counts[i] += 1;
        } else {
            xs.push(x.clone());
            sums.push(y);
            counts.push(1);
        }
    }
    let ys = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s / F::from(c).unwrap())
        .collect();
    (xs, ys)
}
