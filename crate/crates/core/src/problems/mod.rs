//! Synthetic matrix-parameter objectives with closed-form gradients.
//!
//! Two per-sample losses over `W in R^{m x n}` and samples `(x in R^n, y in R^m)`:
//!
//! - `MatrixRegression`: `0.5 ||W x - y||^2`, convex;
//! - `TanhRegression`: `0.5 ||tanh(W x) - y||^2`, smooth and nonconvex.
//!
//! Datasets are drawn from a ground truth `W*` with standard normal inputs and
//! Gaussian label noise, using the reproducible generator in [`rng`].

pub mod rng;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use rng::{derive_seed, SplitMix64, Xoshiro256pp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    MatrixRegression,
    TanhRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub ground_truth: Matrix,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, noise_sigma: f64, ground_truth: Matrix) -> Result<Self> {
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        let (m, n) = ground_truth.shape();
        Ok(Self {
            kind,
            m,
            n,
            noise_sigma,
            ground_truth,
        })
    }

    /// Ground truth with i.i.d. `N(0, gt_scale^2 / n)` entries, so that
    /// `W* x` has per-coordinate variance `gt_scale^2` for standard normal `x`.
    pub fn with_random_ground_truth(
        kind: ProblemKind,
        m: usize,
        n: usize,
        noise_sigma: f64,
        gt_seed: u64,
        gt_scale: f64,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!("dimensions must be positive, got {m}x{n}")));
        }
        if !gt_scale.is_finite() {
            return Err(Error::InvalidInput("gt_scale must be finite".into()));
        }
        let mut rng = Xoshiro256pp::seed_from_u64(gt_seed);
        let s = gt_scale / (n as f64).sqrt();
        let data = (0..m * n).map(|_| s * rng.normal()).collect();
        Self::new(kind, noise_sigma, Matrix::new(m, n, data)?)
    }

    fn check(&self, w: &Matrix, s: &Sample) -> Result<()> {
        if w.shape() != (self.m, self.n) {
            return Err(Error::shape((self.m, self.n), w.shape()));
        }
        if s.x.len() != self.n {
            return Err(Error::shape((self.n, 1), (s.x.len(), 1)));
        }
        if s.y.len() != self.m {
            return Err(Error::shape((self.m, 1), (s.y.len(), 1)));
        }
        Ok(())
    }

    /// Noise-free target `W* x` or `tanh(W* x)`.
    fn clean_target(&self, x: &[f64]) -> Vec<f64> {
        let z = self.ground_truth.mul_vec(x).expect("x has length n");
        match self.kind {
            ProblemKind::MatrixRegression => z,
            ProblemKind::TanhRegression => z.into_iter().map(f64::tanh).collect(),
        }
    }

    /// Draws one sample: `n` input normals, then `m` noise normals.
    pub fn draw_sample(&self, rng: &mut Xoshiro256pp, id: usize) -> Sample {
        let x = rng.normals(self.n);
        let mut y = self.clean_target(&x);
        for yi in &mut y {
            *yi += self.noise_sigma * rng.normal();
        }
        Sample { x, y, id }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Flat CSV: `id,x0,..,x{n-1},y0,..,y{m-1}`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let (n, m) = self
            .samples
            .first()
            .map_or((0, 0), |s| (s.x.len(), s.y.len()));
        out.push_str("id");
        for j in 0..n {
            let _ = write!(out, ",x{j}");
        }
        for i in 0..m {
            let _ = write!(out, ",y{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.id);
            for v in s.x.iter().chain(&s.y) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// `S^(i)`: `base` with sample `replace_index` swapped for `replacement`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSpec {
    pub base: Dataset,
    pub replace_index: usize,
    pub replacement: Sample,
}

impl NeighborSpec {
    pub fn new(base: Dataset, replace_index: usize, replacement: Sample) -> Result<Self> {
        if replace_index >= base.len() {
            return Err(Error::InvalidInput(format!(
                "replace index {replace_index} out of range for {} samples",
                base.len()
            )));
        }
        Ok(Self {
            base,
            replace_index,
            replacement,
        })
    }

    /// Neighbor whose replacement is a fresh draw from `replacement_seed`.
    pub fn fresh(
        spec: &ProblemSpec,
        base: Dataset,
        replace_index: usize,
        replacement_seed: u64,
    ) -> Result<Self> {
        let mut rng = Xoshiro256pp::seed_from_u64(replacement_seed);
        let replacement = spec.draw_sample(&mut rng, replace_index);
        Self::new(base, replace_index, replacement)
    }

    pub fn dataset(&self) -> Dataset {
        let mut d = self.base.clone();
        d.samples[self.replace_index] = Sample {
            id: self.replace_index,
            ..self.replacement.clone()
        };
        d
    }
}

/// Per-sample loss.
pub fn loss(spec: &ProblemSpec, w: &Matrix, s: &Sample) -> Result<f64> {
    spec.check(w, s)?;
    let z = w.mul_vec(&s.x)?;
    let r = residual(spec.kind, &z, &s.y);
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

fn residual(kind: ProblemKind, z: &[f64], y: &[f64]) -> Vec<f64> {
    match kind {
        ProblemKind::MatrixRegression => z.iter().zip(y).map(|(a, b)| a - b).collect(),
        ProblemKind::TanhRegression => z.iter().zip(y).map(|(a, b)| a.tanh() - b).collect(),
    }
}

/// Per-sample gradient with respect to `W`.
pub fn grad(spec: &ProblemSpec, w: &Matrix, s: &Sample) -> Result<Matrix> {
    spec.check(w, s)?;
    let z = w.mul_vec(&s.x)?;
    let coeff: Vec<f64> = match spec.kind {
        ProblemKind::MatrixRegression => residual(spec.kind, &z, &s.y),
        ProblemKind::TanhRegression => z
            .iter()
            .zip(&s.y)
            .map(|(a, b)| {
                let t = a.tanh();
                (t - b) * (1.0 - t * t)
            })
            .collect(),
    };
    Ok(Matrix::outer(&coeff, &s.x))
}

/// Mean loss and gradient over the samples at `indices`.
pub fn batch_loss_and_grad(
    spec: &ProblemSpec,
    w: &Matrix,
    d: &Dataset,
    indices: &[usize],
) -> Result<(f64, Matrix)> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = 0.0;
    let mut g = vec![0.0; spec.m * spec.n];
    for &i in indices {
        let s = d.samples.get(i).ok_or_else(|| {
            Error::InvalidInput(format!("sample index {i} out of range for {} samples", d.len()))
        })?;
        total += loss(spec, w, s)?;
        for (acc, v) in g.iter_mut().zip(grad(spec, w, s)?.as_slice()) {
            *acc += v;
        }
    }
    let k = indices.len() as f64;
    let g = Matrix::new(spec.m, spec.n, g.into_iter().map(|v| v / k).collect())?;
    Ok((total / k, g))
}

/// `F_S(W)` and `grad F_S(W)`.
pub fn empirical_loss_and_grad(spec: &ProblemSpec, w: &Matrix, d: &Dataset) -> Result<(f64, Matrix)> {
    if d.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let all: Vec<usize> = (0..d.len()).collect();
    batch_loss_and_grad(spec, w, d, &all)
}

/// `n_samples` i.i.d. samples. Samples are drawn in order from one stream, so
/// a dataset is a prefix of any larger one with the same seed.
pub fn generate_dataset(spec: &ProblemSpec, n_samples: usize, seed: u64) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n_samples}")));
    }
    let mut rng = Xoshiro256pp::seed_from_u64(seed);
    let samples = (0..n_samples).map(|id| spec.draw_sample(&mut rng, id)).collect();
    Ok(Dataset { samples, seed })
}

/// Uniform sample indices `j_1, ..., j_steps` in `[0, n_samples)`.
pub fn sample_index_sequence(seed: u64, n_samples: usize, steps: usize) -> Vec<usize> {
    let mut rng = Xoshiro256pp::seed_from_u64(seed);
    (0..steps).map(|_| rng.index(n_samples)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec2(kind: ProblemKind) -> ProblemSpec {
        ProblemSpec::new(kind, 0.0, Matrix::zeros(2, 2)).unwrap()
    }

    fn sample(x: &[f64], y: &[f64]) -> Sample {
        Sample {
            x: x.to_vec(),
            y: y.to_vec(),
            id: 0,
        }
    }

    #[test]
    fn loss_examples() {
        let mr = spec2(ProblemKind::MatrixRegression);
        let s = sample(&[1.0, 0.0], &[0.0, 0.0]);
        assert_eq!(loss(&mr, &Matrix::zeros(2, 2), &s).unwrap(), 0.0);
        assert_eq!(loss(&mr, &Matrix::identity(2), &s).unwrap(), 0.5);
        let tr = spec2(ProblemKind::TanhRegression);
        let s = sample(&[3.0, -1.5], &[0.0, 0.0]);
        assert_eq!(loss(&tr, &Matrix::zeros(2, 2), &s).unwrap(), 0.0);
        assert!(matches!(
            loss(&mr, &Matrix::zeros(2, 3), &s),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn grad_examples() {
        let mr = spec2(ProblemKind::MatrixRegression);
        let g = grad(&mr, &Matrix::zeros(2, 2), &sample(&[1.0, 0.0], &[1.0, 0.0])).unwrap();
        assert_eq!(g, Matrix::from_rows(&[[-1.0, 0.0], [0.0, 0.0]]).unwrap());

        let w = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let x = [0.3, -0.7];
        for kind in [ProblemKind::MatrixRegression, ProblemKind::TanhRegression] {
            let spec = ProblemSpec::new(kind, 0.0, w.clone()).unwrap();
            let y = spec.clean_target(&x);
            assert!(grad(&spec, &w, &sample(&x, &y)).unwrap().is_zero());
        }
    }

    #[test]
    fn empirical_mean_examples() {
        let mr = spec2(ProblemKind::MatrixRegression);
        let w = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let s = sample(&[0.5, 1.0], &[1.0, 1.0]);
        let d = Dataset {
            samples: vec![s.clone(); 4],
            seed: 0,
        };
        let (l, g) = empirical_loss_and_grad(&mr, &w, &d).unwrap();
        assert_eq!(l, loss(&mr, &w, &s).unwrap());
        assert_eq!(g, grad(&mr, &w, &s).unwrap());

        // Residuals +r and -r at the same x cancel.
        let d = Dataset {
            samples: vec![sample(&[1.0, 1.0], &[1.0, 0.0]), sample(&[1.0, 1.0], &[-1.0, 0.0])],
            seed: 0,
        };
        let (_, g) = empirical_loss_and_grad(&mr, &Matrix::zeros(2, 2), &d).unwrap();
        assert!(g.is_zero());

        let empty = Dataset {
            samples: vec![],
            seed: 0,
        };
        assert!(matches!(
            empirical_loss_and_grad(&mr, &w, &empty),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn empirical_grad_matches_summation() {
        let spec = ProblemSpec::with_random_ground_truth(ProblemKind::TanhRegression, 3, 4, 0.2, 1, 1.0)
            .unwrap();
        let d = generate_dataset(&spec, 25, 9).unwrap();
        let w = Matrix::from_fn(3, 4, |i, j| 0.1 * (i as f64 - j as f64));
        let (_, g) = empirical_loss_and_grad(&spec, &w, &d).unwrap();
        let mut sum = Matrix::zeros(3, 4);
        for s in &d.samples {
            sum = sum.add(&grad(&spec, &w, s).unwrap()).unwrap();
        }
        let oracle = sum.scale(1.0 / 25.0);
        assert!(g.sub(&oracle).unwrap().frobenius_norm() <= 1e-12);
    }

    #[test]
    fn dataset_generation() {
        let zero = ProblemSpec::new(ProblemKind::MatrixRegression, 0.0, Matrix::zeros(3, 2)).unwrap();
        let d = generate_dataset(&zero, 10, 4).unwrap();
        assert!(d.samples.iter().all(|s| s.y.iter().all(|&v| v == 0.0)));
        assert_eq!(d.samples[7].id, 7);

        let spec = ProblemSpec::with_random_ground_truth(ProblemKind::MatrixRegression, 3, 2, 0.1, 5, 1.0)
            .unwrap();
        assert_eq!(generate_dataset(&spec, 8, 11).unwrap(), generate_dataset(&spec, 8, 11).unwrap());
        assert_ne!(generate_dataset(&spec, 8, 11).unwrap(), generate_dataset(&spec, 8, 12).unwrap());
        let long = generate_dataset(&spec, 20, 11).unwrap();
        assert_eq!(long.samples[..8], generate_dataset(&spec, 8, 11).unwrap().samples[..]);
        assert!(matches!(generate_dataset(&spec, 1, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn neighbor_differs_in_one_position() {
        let spec = ProblemSpec::with_random_ground_truth(ProblemKind::MatrixRegression, 2, 3, 0.1, 5, 1.0)
            .unwrap();
        let base = generate_dataset(&spec, 6, 1).unwrap();
        let nb = NeighborSpec::fresh(&spec, base.clone(), 4, 77).unwrap();
        let d = nb.dataset();
        let diff: Vec<usize> = (0..6).filter(|&k| d.samples[k] != base.samples[k]).collect();
        assert_eq!(diff, vec![4]);
        assert_eq!(d.samples[4].id, 4);
        assert!(NeighborSpec::fresh(&spec, base, 6, 77).is_err());
    }

    #[test]
    fn index_sequences() {
        assert!(sample_index_sequence(3, 1, 50).iter().all(|&i| i == 0));
        assert_eq!(sample_index_sequence(3, 17, 100), sample_index_sequence(3, 17, 100));
        assert_ne!(sample_index_sequence(3, 17, 100), sample_index_sequence(4, 17, 100));

        let draws = 1_000_000;
        let mut counts = [0usize; 10];
        for i in sample_index_sequence(2024, 10, draws) {
            counts[i] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() <= 0.01 * 0.1, "{freq}");
        }
    }

    #[test]
    fn csv_round_trips_values() {
        let spec = ProblemSpec::with_random_ground_truth(ProblemKind::TanhRegression, 2, 3, 0.1, 5, 1.0)
            .unwrap();
        let d = generate_dataset(&spec, 4, 1).unwrap();
        let csv = d.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "id,x0,x1,x2,y0,y1");
        for (line, s) in lines.zip(&d.samples) {
            let vals: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            let expect: Vec<f64> = s.x.iter().chain(&s.y).copied().collect();
            assert_eq!(vals, expect);
        }
    }

    fn fd_check(kind: ProblemKind, seed: u64) {
        let mut rng = Xoshiro256pp::seed_from_u64(seed);
        let h = 1e-6;
        for trial in 0..100 {
            let m = 1 + rng.index(4);
            let n = 1 + rng.index(4);
            let spec = ProblemSpec::with_random_ground_truth(kind, m, n, 0.3, trial, 1.0).unwrap();
            let w = Matrix::new(m, n, rng.normals(m * n)).unwrap();
            let s = spec.draw_sample(&mut rng, 0);
            let g = grad(&spec, &w, &s).unwrap();
            for i in 0..m {
                for j in 0..n {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[(i, j)] += h;
                    wm[(i, j)] -= h;
                    let fd = (loss(&spec, &wp, &s).unwrap() - loss(&spec, &wm, &s).unwrap()) / (2.0 * h);
                    assert!((fd - g[(i, j)]).abs() <= 1e-5, "{kind:?} trial {trial}: {fd} vs {}", g[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn matrix_regression_gradient_matches_finite_differences() {
        fd_check(ProblemKind::MatrixRegression, 100);
    }

    #[test]
    fn tanh_regression_gradient_matches_finite_differences() {
        fd_check(ProblemKind::TanhRegression, 200);
    }

    proptest! {
        #[test]
        fn matrix_regression_is_convex(
            seed in 0u64..1000,
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
            lam in 0.0f64..=1.0,
        ) {
            let spec = ProblemSpec::with_random_ground_truth(ProblemKind::MatrixRegression, 2, 3, 0.5, seed, 1.0)
                .unwrap();
            let d = generate_dataset(&spec, 5, seed).unwrap();
            let w1 = Matrix::new(2, 3, a).unwrap();
            let w2 = Matrix::new(2, 3, b).unwrap();
            let mid = w1.lin_comb(lam, &w2, 1.0 - lam).unwrap();
            let f = |w: &Matrix| empirical_loss_and_grad(&spec, w, &d).unwrap().0;
            prop_assert!(f(&mid) <= lam * f(&w1) + (1.0 - lam) * f(&w2) + 1e-10);
        }

        #[test]
        fn losses_are_non_negative(seed in 0u64..1000, tanh in any::<bool>()) {
            let kind = if tanh { ProblemKind::TanhRegression } else { ProblemKind::MatrixRegression };
            let spec = ProblemSpec::with_random_ground_truth(kind, 3, 2, 1.0, seed, 2.0).unwrap();
            let mut rng = Xoshiro256pp::seed_from_u64(seed);
            let w = Matrix::new(3, 2, rng.normals(6)).unwrap();
            let s = spec.draw_sample(&mut rng, 0);
            prop_assert!(loss(&spec, &w, &s).unwrap() >= 0.0);
        }
    }
}
