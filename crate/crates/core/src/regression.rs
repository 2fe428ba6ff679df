//! Closed-form gradient-flow training and prediction with a fixed NTK.
//!
//! Times are `f64` with `f64::INFINITY` standing for the end of training.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::activations::ActivationModel;
use crate::dataset::Dataset;
use crate::error::{NtkError, Result};
use crate::kernels::{dense_recursion, Architecture, InputPair};
use crate::spectral::KernelConfig;

/// Eigenvalues below `PINV_REL_TOL * max_eig` are treated as zero.
pub const PINV_REL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;
const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Kernel used for the Gram matrix: a dense architecture at a fixed depth.
#[derive(Debug, Clone)]
pub struct GramKernel {
    pub config: KernelConfig,
    pub depth: usize,
    model: ActivationModel,
}

impl GramKernel {
    pub fn new(config: KernelConfig, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(NtkError::InvalidArgument("depth must be positive".into()));
        }
        let model = ActivationModel::from_kind(config.activation);
        Ok(Self { config, depth, model })
    }

    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        let pair = InputPair::new(x.to_vec(), xp.to_vec())?;
        let arch = Architecture::dense(self.config.architecture)?;
        let trace = dense_recursion(arch, &self.model, self.config.params, pair.first_layer(self.config.params), self.depth)?;
        let v = self.config.value(&trace, self.depth);
        if !v.is_finite() {
            return Err(NtkError::Numeric(format!("kernel value {v} at depth {}", self.depth)));
        }
        Ok(v)
    }

    /// `K(x, x_i)` for every training input.
    pub fn row(&self, inputs: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
        inputs.par_iter().map(|xi| self.eval(xi, x)).collect()
    }
}

/// Gram matrix with its eigendecomposition and the initial training outputs.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub gram: DMatrix<f64>,
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Columns match `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// N x o.
    pub f0_train: DMatrix<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl TrainingState {
    /// Decomposes a symmetric `gram`; `f0` defaults to zero outputs.
    pub fn from_gram(gram: DMatrix<f64>, outputs: usize, f0: Option<DMatrix<f64>>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(NtkError::InvalidArgument("gram must be square and nonempty".into()));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(NtkError::Numeric("gram has non-finite entries".into()));
        }
        let scale = gram.amax().max(f64::MIN_POSITIVE);
        let asym = (&gram - gram.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(NtkError::Numeric(format!("gram asymmetric by {asym:e}")));
        }
        let f0_train = match f0 {
            Some(f) if f.nrows() != n || f.ncols() != outputs => {
                return Err(NtkError::InvalidArgument(format!(
                    "initial outputs must be {n} x {outputs}, got {} x {}",
                    f.nrows(),
                    f.ncols()
                )))
            }
            Some(f) => f,
            None => DMatrix::zeros(n, outputs),
        };
        let eig = SymmetricEigen::new(gram.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        let rebuilt = &eigenvectors * DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone())) * eigenvectors.transpose();
        let err = (&rebuilt - &gram).norm() / gram.norm().max(f64::MIN_POSITIVE);
        if err > RECONSTRUCTION_TOL {
            return Err(NtkError::Numeric(format!("eigendecomposition residual {err:e}")));
        }
        Ok(Self {
            min_eig: eigenvalues[n - 1],
            max_eig: eigenvalues[0],
            gram,
            eigenvalues,
            eigenvectors,
            f0_train,
        })
    }

    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn condition_ratio(&self) -> f64 {
        self.min_eig / self.max_eig
    }

    /// Whether some eigenvalue falls below the pseudo-inverse threshold.
    pub fn is_singular(&self) -> bool {
        self.min_eig <= PINV_REL_TOL * self.max_eig
    }

    fn check_targets(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.len() || z.ncols() != self.f0_train.ncols() {
            return Err(NtkError::InvalidArgument(format!(
                "targets must be {} x {}, got {} x {}",
                self.len(),
                self.f0_train.ncols(),
                z.nrows(),
                z.ncols()
            )));
        }
        Ok(())
    }

    /// `U diag(s_i) U^T m` for per-eigenvalue scalars `s_i`.
    fn apply_spectral(&self, m: &DMatrix<f64>, s: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut coords = self.eigenvectors.transpose() * m;
        for (i, &lam) in self.eigenvalues.iter().enumerate() {
            let f = s(lam);
            coords.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        &self.eigenvectors * coords
    }

    fn threshold(&self) -> f64 {
        PINV_REL_TOL * self.max_eig
    }
}

/// Gram matrix of `kernel` over the dataset inputs.
pub fn build_gram(dataset: &Dataset, kernel: &GramKernel) -> Result<TrainingState> {
    let xs = dataset.inputs();
    let n = xs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| kernel.eval(&xs[i], &xs[j])).collect::<Result<_>>()?;
    let mut gram = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        gram[(i, j)] = v;
        gram[(j, i)] = v;
    }
    TrainingState::from_gram(gram, dataset.outputs(), None)
}

pub fn targets_matrix(dataset: &Dataset) -> DMatrix<f64> {
    let z = dataset.targets();
    DMatrix::from_fn(z.len(), z[0].len(), |i, k| z[i][k])
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(NtkError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `e^{-t lam / N}`; an infinite time keeps only the non-positive directions.
fn decay(t: f64, n: f64, lam: f64, thr: f64) -> f64 {
    if t.is_infinite() {
        if lam > thr {
            0.0
        } else {
            1.0
        }
    } else {
        (-t * lam / n).exp()
    }
}

/// Training outputs `f_t(X) = e^{-tK/N} f_0 + (I - e^{-tK/N}) Z`.
pub fn evolve(state: &TrainingState, z: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    state.check_targets(z)?;
    let n = state.len() as f64;
    let thr = state.threshold();
    let diff = &state.f0_train - z;
    Ok(z + state.apply_spectral(&diff, |lam| decay(t, n, lam, thr)))
}

/// Coefficients `a` with `f_t(x) - f_0(x) = sum_i a_i K(x_i, x)`.
///
/// Returns the coefficients and whether the pseudo-inverse dropped directions.
pub fn rkhs_residual_coeffs(
    state: &TrainingState,
    z: &DMatrix<f64>,
    t: f64,
    pseudo_inverse: bool,
) -> Result<(DMatrix<f64>, bool)> {
    check_time(t)?;
    state.check_targets(z)?;
    let singular = state.is_singular();
    if singular && !pseudo_inverse {
        return Err(NtkError::Singular(format!(
            "min eigenvalue {:e} is below {PINV_REL_TOL:e} of max {:e}",
            state.min_eig, state.max_eig
        )));
    }
    let n = state.len() as f64;
    let thr = state.threshold();
    let resid = z - &state.f0_train;
    let a = state.apply_spectral(&resid, |lam| {
        if lam <= thr {
            0.0
        } else if t.is_infinite() {
            1.0 / lam
        } else {
            -(-t * lam / n).exp_m1() / lam
        }
    });
    Ok((a, singular))
}

/// `f_t(x) = f_0(x) + K(x, X) a_t` given the kernel row `K(x, X)`.
pub fn predict_row(
    state: &TrainingState,
    z: &DMatrix<f64>,
    k_row: &[f64],
    t: f64,
    f0_new: Option<&[f64]>,
    pseudo_inverse: bool,
) -> Result<Vec<f64>> {
    if k_row.len() != state.len() {
        return Err(NtkError::InvalidArgument("kernel row length differs from training size".into()));
    }
    let (a, _) = rkhs_residual_coeffs(state, z, t, pseudo_inverse)?;
    predict_with_coeffs(&a, k_row, f0_new)
}

pub fn predict_with_coeffs(a: &DMatrix<f64>, k_row: &[f64], f0_new: Option<&[f64]>) -> Result<Vec<f64>> {
    let o = a.ncols();
    if let Some(f0) = f0_new {
        if f0.len() != o {
            return Err(NtkError::InvalidArgument(format!("f0 needs {o} outputs")));
        }
    }
    Ok((0..o)
        .map(|k| {
            let base = f0_new.map_or(0.0, |f| f[k]);
            base + k_row.iter().zip(a.column(k).iter()).map(|(u, v)| u * v).sum::<f64>()
        })
        .collect())
}

/// Prediction at a new input.
pub fn predict(
    state: &TrainingState,
    dataset: &Dataset,
    kernel: &GramKernel,
    x_new: &[f64],
    t: f64,
    f0_new: Option<&[f64]>,
    pseudo_inverse: bool,
) -> Result<Vec<f64>> {
    let row = kernel.row(dataset.inputs(), x_new)?;
    predict_row(state, &targets_matrix(dataset), &row, t, f0_new, pseudo_inverse)
}

/// Index of the largest output (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(outputs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &c)| argmax(&outputs.row(i).iter().copied().collect::<Vec<_>>()) == c)
        .count();
    hits as f64 / labels.len() as f64
}
