/// Unnormalized log-density on `R^dim`. Must be pure: chains call it
/// concurrently.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// May return `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Gradient of [`LogDensity::log_density`]. The default is a central
    /// difference with `h = 1e-5`.
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        numerical_grad(|v| self.log_density(v), x, 1e-5)
    }
}

pub fn numerical_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A closure as a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
