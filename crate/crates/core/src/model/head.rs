use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Two affine layers with tanh between them, followed by L2 normalization.
///
/// Shared by passages and prototypes: both are frozen base embeddings pushed
/// through the same parameters, so prototype representations move with the
/// passage representations during training.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    /// hidden x input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// output x hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadCache {
    x: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    /// Unit-norm output rows.
    pub out: Array2<f64>,
}

const MIN_NORM: f64 = 1e-12;

impl ProjectionHead {
    /// Identity-like start: `w1 = I`, `w2 = 0.99 I`, plus Gaussian jitter of
    /// standard deviation `jitter / sqrt(dim)` on the weights. Biases start at 0.
    pub fn near_identity<R: Rng>(dim: usize, jitter: f64, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, jitter / (dim.max(1) as f64).sqrt()).unwrap();
        let mut w1 = Array2::<f64>::eye(dim);
        let mut w2 = Array2::<f64>::eye(dim) * 0.99;
        if jitter > 0.0 {
            w1.mapv_inplace(|v| v + noise.sample(rng));
            w2.mapv_inplace(|v| v + noise.sample(rng));
        }
        ProjectionHead {
            w1,
            b1: Array1::zeros(dim),
            w2,
            b2: Array1::zeros(dim),
        }
    }

    /// Dense Gaussian weights, used by gradient checks.
    pub fn random<R: Rng>(d_in: usize, d_hidden: usize, d_out: usize, scale: f64, rng: &mut R) -> Self {
        let n = Normal::new(0.0, scale).unwrap();
        ProjectionHead {
            w1: Array2::from_shape_fn((d_hidden, d_in), |_| n.sample(rng)),
            b1: Array1::from_shape_fn(d_hidden, |_| n.sample(rng)),
            w2: Array2::from_shape_fn((d_out, d_hidden), |_| n.sample(rng)),
            b2: Array1::from_shape_fn(d_out, |_| n.sample(rng)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.nrows()
    }

    pub fn zeros_like(&self) -> ProjectionHead {
        ProjectionHead {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> HeadCache {
        let mut hidden = x.dot(&self.w1.t());
        hidden += &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let mut z = hidden.dot(&self.w2.t());
        z += &self.b2;
        let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(MIN_NORM));
        let out = &z / &norms.view().insert_axis(Axis(1));
        HeadCache {
            x: x.to_owned(),
            hidden,
            norms,
            out,
        }
    }

    /// Unit-norm representations of the rows of `x`.
    pub fn project(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).out
    }

    /// Accumulates parameter gradients given the gradient w.r.t. the unit outputs.
    pub fn backward(&self, cache: &HeadCache, grad_out: ArrayView2<f64>, grads: &mut ProjectionHead) {
        let u = &cache.out;
        // d(z/|z|) = (I - u u^T) / |z|
        let radial = (u * &grad_out).sum_axis(Axis(1));
        let mut gz = grad_out.to_owned();
        Zip::from(gz.rows_mut())
            .and(u.rows())
            .and(&radial)
            .and(&cache.norms)
            .for_each(|mut g, u, &r, &n| {
                g.scaled_add(-r, &u);
                g /= n;
            });
        grads.w2 += &gz.t().dot(&cache.hidden);
        grads.b2 += &gz.sum_axis(Axis(0));
        let mut ga = gz.dot(&self.w2);
        Zip::from(&mut ga)
            .and(&cache.hidden)
            .for_each(|g, &h| *g *= 1.0 - h * h);
        grads.w1 += &ga.t().dot(&cache.x);
        grads.b1 += &ga.sum_axis(Axis(0));
    }

    pub fn params(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        let mut x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0f64..1.0));
        for mut r in x.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        x
    }

    #[test]
    fn outputs_are_unit_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ProjectionHead::near_identity(8, 0.01, &mut rng);
        let x = random_rows(&mut rng, 26, 8);
        let a = head.project(x.view());
        let b = head.project(x.view());
        assert_eq!(a, b);
        for r in a.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_identity_is_injective_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = ProjectionHead::near_identity(6, 0.0, &mut rng);
        let x = random_rows(&mut rng, 40, 6);
        let y = head.project(x.view());
        for i in 0..40 {
            for j in 0..i {
                let d: f64 = (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum();
                assert!(d > 1e-12, "rows {i} and {j} collapsed");
            }
        }
        // at init the head stays close to the input geometry
        for (xi, yi) in x.rows().into_iter().zip(y.rows()) {
            assert!(xi.dot(&yi) > 0.95);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = ProjectionHead::random(4, 5, 3, 0.7, &mut rng);
        let x = random_rows(&mut rng, 3, 4);
        let g_out = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0f64..1.0));
        let objective = |h: &ProjectionHead| (h.project(x.view()) * &g_out).sum();

        let mut grads = head.zeros_like();
        head.backward(&head.forward(x.view()), g_out.view(), &mut grads);

        let step = 1e-6;
        for which in 0..4 {
            for i in 0..head.params()[which].len() {
                let mut plus = head.clone();
                plus.params_mut()[which][i] += step;
                let mut minus = head.clone();
                minus.params_mut()[which][i] -= step;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let analytic = grads.params()[which][i];
                assert!(
                    (numeric - analytic).abs() < 1e-7,
                    "param {which}[{i}]: {analytic} vs {numeric}"
                );
            }
        }
    }
}
