//! Continuous normalizing flow trained by conditional flow matching.
//!
//! The vector field `v(θ_t, t, y)` is an MLP on `[θ_t, t, y]`. Training
//! regresses it onto the conditional optimal-transport field; sampling and
//! density evaluation integrate the ODE with a fixed-step solver.

use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::distributions::LN_2PI;
use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_ndnet::{Activation, Graph, MlpSpec, NetParams, ParamVars, Var};
use serde::{Deserialize, Serialize};

use crate::{broadcast_rows, check_cols, TrainLoss};

const PREFIX: &str = "cnf";

/// Floor on the target-field denominator `1 − (1 − σ_min)t`.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    #[default]
    Heun,
}

fn default_sigma_min() -> f64 {
    1e-3
}

fn default_ode_steps() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnfSpec {
    pub theta_dim: usize,
    pub context_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_ode_steps")]
    pub ode_steps: usize,
    #[serde(default)]
    pub solver: Solver,
}

impl CnfSpec {
    pub fn new(theta_dim: usize, context_dim: usize, hidden_sizes: &[usize]) -> Self {
        CnfSpec {
            theta_dim,
            context_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            activation: Activation::Tanh,
            sigma_min: default_sigma_min(),
            ode_steps: default_ode_steps(),
            solver: Solver::Heun,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_dim == 0 {
            return Err(Error::Config("CNF theta_dim must be >= 1".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::Config(format!("sigma_min {} not in (0, 1)", self.sigma_min)));
        }
        if self.ode_steps < 2 {
            return Err(Error::Config("ode_steps must be >= 2".into()));
        }
        Ok(())
    }
}

/// A time-dependent vector field on `theta_dim` coordinates.
pub trait VectorField {
    fn eval(&self, theta: &Tensor, t: f64, ctx: &Tensor) -> Result<Tensor>;

    /// Field and its exact divergence `tr ∂v/∂θ` per row.
    fn eval_div(&self, theta: &Tensor, t: f64, ctx: &Tensor) -> Result<(Tensor, Vec<f64>)>;
}

#[derive(Clone, Debug)]
pub struct Cnf {
    pub spec: CnfSpec,
    net: MlpSpec,
}

/// `θ_t = t·θ₁ + (1 − (1 − σ_min)t)·ε`, one `t` per row.
pub fn ot_path_sample(theta1: &Tensor, t: &[f64], eps: &Tensor, sigma_min: f64) -> Tensor {
    let mut out = theta1.clone();
    for (i, &ti) in t.iter().enumerate() {
        let scale = 1.0 - (1.0 - sigma_min) * ti;
        for (o, e) in out.row_mut(i).iter_mut().zip(eps.row(i)) {
            *o = ti * *o + scale * e;
        }
    }
    out
}

/// Conditional OT field `u = (θ₁ − (1 − σ_min)θ_t) / (1 − (1 − σ_min)t)`.
pub fn target_field(theta_t: &Tensor, theta1: &Tensor, t: &[f64], sigma_min: f64) -> Tensor {
    let mut out = theta1.clone();
    for (i, &ti) in t.iter().enumerate() {
        let denom = (1.0 - (1.0 - sigma_min) * ti).max(DENOMINATOR_FLOOR);
        for (o, x) in out.row_mut(i).iter_mut().zip(theta_t.row(i)) {
            *o = (*o - (1.0 - sigma_min) * x) / denom;
        }
    }
    out
}

/// One `t ∼ U(0,1)` and one `ε ∼ N(0, I)` per row.
pub fn draw_path_noise(key: RngKey, n: usize, d: usize) -> (Vec<f64>, Tensor) {
    let mut rng = key.rng();
    let t = (0..n).map(|_| rng.random::<f64>()).collect();
    let eps = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    (t, Tensor::matrix(n, d, eps))
}

/// Mean over rows of `‖v(θ_t, t) − u_t(θ_t | θ₁)‖²` for an arbitrary field.
pub fn cfm_loss_with(
    field: impl Fn(&Tensor, &[f64], &Tensor) -> Tensor,
    theta1: &Tensor,
    ctx: &Tensor,
    key: RngKey,
    sigma_min: f64,
) -> f64 {
    let (n, d) = (theta1.rows(), theta1.cols());
    let (t, eps) = draw_path_noise(key, n, d);
    let theta_t = ot_path_sample(theta1, &t, &eps, sigma_min);
    let u = target_field(&theta_t, theta1, &t, sigma_min);
    let v = field(&theta_t, &t, ctx);
    v.data().iter().zip(u.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
}

fn standard_normal_lp(x: &[f64]) -> f64 {
    -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * x.len() as f64 * LN_2PI
}

fn axpy(y: &Tensor, a: f64, x: &Tensor) -> Tensor {
    let data = y.data().iter().zip(x.data()).map(|(p, q)| p + a * q).collect();
    Tensor::matrix(y.rows(), y.cols(), data)
}

fn check_finite(x: &Tensor, step: usize) -> Result<()> {
    if !x.all_finite() {
        return Err(Error::Numeric(format!("non-finite ODE state at step {step}")));
    }
    Ok(())
}

/// Integrate `dθ/dt = v` from `t = 0` to `1` starting at `theta0`.
pub fn integrate_forward(
    field: &dyn VectorField,
    steps: usize,
    solver: Solver,
    theta0: Tensor,
    ctx: &Tensor,
) -> Result<Tensor> {
    let h = 1.0 / steps as f64;
    let mut x = theta0;
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = field.eval(&x, t, ctx)?;
        x = match solver {
            Solver::Euler => axpy(&x, h, &k1),
            Solver::Heun => {
                let k2 = field.eval(&axpy(&x, h, &k1), t + h, ctx)?;
                axpy(&axpy(&x, 0.5 * h, &k1), 0.5 * h, &k2)
            }
        };
        check_finite(&x, k)?;
    }
    Ok(x)
}

/// Draw `θ₀ ∼ N(0, I)` and push it through the flow.
pub fn cnf_sample(
    field: &dyn VectorField,
    spec: &CnfSpec,
    key: RngKey,
    ctx: &Tensor,
    n: usize,
) -> Result<Tensor> {
    let d = spec.theta_dim;
    let mut rng = key.rng();
    let theta0 = Tensor::matrix(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect());
    let ctx = if ctx.cols() > 0 {
        broadcast_rows(ctx, n)
    } else {
        Tensor::zeros(&[n, 0])
    };
    integrate_forward(field, spec.ode_steps, spec.solver, theta0, &ctx)
}

/// `log q₁(θ) = log N(θ₀) − ∫₀¹ div v dt`, integrating state and
/// divergence backwards from `t = 1`.
pub fn cnf_log_prob(
    field: &dyn VectorField,
    spec: &CnfSpec,
    theta: &Tensor,
    ctx: &Tensor,
) -> Result<Vec<f64>> {
    if !theta.all_finite() {
        return Err(Error::Contract("cnf_log_prob needs finite theta".into()));
    }
    let n = theta.rows();
    let steps = spec.ode_steps;
    let h = 1.0 / steps as f64;
    let mut x = theta.clone();
    let mut div_integral = vec![0.0; n];
    for k in 0..steps {
        let t = 1.0 - k as f64 * h;
        let (k1, d1) = field.eval_div(&x, t, ctx)?;
        match spec.solver {
            Solver::Euler => {
                x = axpy(&x, -h, &k1);
                for (acc, d) in div_integral.iter_mut().zip(&d1) {
                    *acc += h * d;
                }
            }
            Solver::Heun => {
                let (k2, d2) = field.eval_div(&axpy(&x, -h, &k1), t - h, ctx)?;
                x = axpy(&axpy(&x, -0.5 * h, &k1), -0.5 * h, &k2);
                for ((acc, a), b) in div_integral.iter_mut().zip(&d1).zip(&d2) {
                    *acc += 0.5 * h * (a + b);
                }
            }
        }
        check_finite(&x, k)?;
    }
    Ok((0..n)
        .map(|i| standard_normal_lp(x.row(i)) - div_integral[i])
        .collect())
}

impl Cnf {
    pub fn new(spec: CnfSpec) -> Result<Self> {
        spec.validate()?;
        let mut net = MlpSpec::new(spec.theta_dim + 1 + spec.context_dim, spec.theta_dim, &spec.hidden_sizes);
        net.activation = spec.activation;
        Ok(Cnf { spec, net })
    }

    pub fn init(&self, key: RngKey) -> Result<NetParams> {
        let mut p = NetParams::new();
        self.net.init(PREFIX, key, &mut p)?;
        Ok(p)
    }

    /// Network input `[θ_t, t, context]`.
    fn input(&self, theta: &Tensor, t: &[f64], ctx: &Tensor) -> Result<Tensor> {
        check_cols("CNF theta", theta, self.spec.theta_dim)?;
        check_cols("CNF context", ctx, self.spec.context_dim)?;
        let tcol = Tensor::column(t);
        if ctx.cols() > 0 {
            Tensor::concat_cols(&[theta, &tcol, ctx])
        } else {
            Tensor::concat_cols(&[theta, &tcol])
        }
    }

    pub fn vector_field(&self, params: &NetParams, theta: &Tensor, t: &[f64], ctx: &Tensor) -> Result<Tensor> {
        let input = self.input(theta, t, ctx)?;
        self.net.forward_plain(params, PREFIX, &input, None)
    }

    pub fn field<'a>(&'a self, params: &'a NetParams) -> NetField<'a> {
        NetField { cnf: self, params }
    }

    pub fn sample(&self, params: &NetParams, key: RngKey, ctx: &Tensor, n: usize) -> Result<Tensor> {
        cnf_sample(&self.field(params), &self.spec, key, ctx, n)
    }

    pub fn log_prob(&self, params: &NetParams, theta: &Tensor, ctx: &Tensor) -> Result<Vec<f64>> {
        let ctx = if ctx.cols() > 0 {
            broadcast_rows(ctx, theta.rows())
        } else {
            Tensor::zeros(&[theta.rows(), 0])
        };
        cnf_log_prob(&self.field(params), &self.spec, theta, &ctx)
    }
}

/// A trained network viewed as a [`VectorField`].
pub struct NetField<'a> {
    cnf: &'a Cnf,
    params: &'a NetParams,
}

impl VectorField for NetField<'_> {
    fn eval(&self, theta: &Tensor, t: f64, ctx: &Tensor) -> Result<Tensor> {
        self.cnf
            .vector_field(self.params, theta, &vec![t; theta.rows()], ctx)
    }

    fn eval_div(&self, theta: &Tensor, t: f64, ctx: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let n = theta.rows();
        let d = self.cnf.spec.theta_dim;
        let input = self.cnf.input(theta, &vec![t; n], ctx)?;
        let mut div = vec![0.0; n];
        let mut value = None;
        for j in 0..d {
            let mut dx = Tensor::zeros(input.shape());
            for i in 0..n {
                dx.set(i, j, 1.0);
            }
            let (v, dv) = self.cnf.net.jvp(self.params, PREFIX, &input, &dx, None)?;
            for (i, acc) in div.iter_mut().enumerate() {
                *acc += dv.get(i, j);
            }
            value = Some(v);
        }
        Ok((value.expect("theta_dim >= 1"), div))
    }
}

impl TrainLoss for Cnf {
    /// Flow-matching regression loss with one `(t, ε)` draw per row.
    fn batch_loss<'g>(
        &self,
        g: &'g Graph,
        pv: &ParamVars<'g>,
        event: &Tensor,
        context: &Tensor,
        key: RngKey,
    ) -> Result<Var<'g>> {
        let (n, d) = (event.rows(), event.cols());
        if n == 0 {
            return Err(Error::Contract("empty flow-matching batch".into()));
        }
        let sigma = self.spec.sigma_min;
        let (t, eps) = draw_path_noise(key, n, d);
        let theta_t = ot_path_sample(event, &t, &eps, sigma);
        let u = target_field(&theta_t, event, &t, sigma);
        let input = self.input(&theta_t, &t, context)?;
        let v = self.net.forward(pv, PREFIX, g.constant(input), None)?;
        Ok((v - g.constant(u)).square().sum_rows().mean())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `v = a·θ` for a fixed scalar `a`.
    struct Linear(f64);

    impl VectorField for Linear {
        fn eval(&self, theta: &Tensor, _: f64, _: &Tensor) -> Result<Tensor> {
            Ok(theta.map(|v| self.0 * v))
        }
        fn eval_div(&self, theta: &Tensor, t: f64, c: &Tensor) -> Result<(Tensor, Vec<f64>)> {
            let d = theta.cols() as f64;
            Ok((self.eval(theta, t, c)?, vec![self.0 * d; theta.rows()]))
        }
    }

    fn rand_tensor(seed: u64, r: usize, c: usize) -> Tensor {
        let mut rng = RngKey::new(seed).rng();
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn path_endpoints() {
        let theta1 = rand_tensor(1, 3, 2);
        let eps = rand_tensor(2, 3, 2);
        let s = 1e-3;
        assert_eq!(ot_path_sample(&theta1, &[0.0; 3], &eps, s), eps);
        let end = ot_path_sample(&theta1, &[1.0; 3], &eps, s);
        for k in 0..6 {
            assert!((end.data()[k] - (theta1.data()[k] + s * eps.data()[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn path_std_at_half() {
        let n = 100_000;
        let s = 1e-3;
        let (_, eps) = draw_path_noise(RngKey::new(3), n, 1);
        let x = ot_path_sample(&Tensor::zeros(&[n, 1]), &vec![0.5; n], &eps, s);
        let sd = x.column_stds()[0];
        let want = 1.0 - 0.5 * (1.0 - s);
        assert!((sd / want - 1.0).abs() < 0.01);
    }

    #[test]
    fn target_field_identities() {
        let theta1 = rand_tensor(4, 50, 3);
        let (t, eps) = draw_path_noise(RngKey::new(5), 50, 3);
        let s = 1e-3;
        let theta_t = ot_path_sample(&theta1, &t, &eps, s);
        let u = target_field(&theta_t, &theta1, &t, s);
        for i in 0..50 {
            for j in 0..3 {
                let want = theta1.get(i, j) - (1.0 - s) * eps.get(i, j);
                assert!((u.get(i, j) - want).abs() < 1e-10);
                // scalar re-derivation
                let denom = 1.0 - (1.0 - s) * t[i];
                let scalar = (theta1.get(i, j) - (1.0 - s) * theta_t.get(i, j)) / denom;
                assert!((u.get(i, j) - scalar).abs() < 1e-12);
            }
        }
        let u1 = target_field(&theta_t, &theta1, &t, 1.0);
        assert_eq!(u1, theta1);
    }

    #[test]
    fn oracle_field_has_zero_loss() {
        let theta1 = rand_tensor(6, 40, 2);
        let s = 1e-3;
        let loss = cfm_loss_with(
            |x, t, _| target_field(x, &theta1, t, s),
            &theta1,
            &Tensor::zeros(&[40, 0]),
            RngKey::new(7),
            s,
        );
        assert!(loss < 1e-12);
    }

    #[test]
    fn linear_field_solutions() {
        let spec = CnfSpec::new(2, 0, &[4]);
        let x0 = rand_tensor(8, 5, 2);
        let none = Tensor::zeros(&[5, 0]);
        let x1 = integrate_forward(&Linear(-1.0), 64, Solver::Heun, x0.clone(), &none).unwrap();
        for (a, b) in x1.data().iter().zip(x0.data()) {
            assert!((a - b * (-1.0f64).exp()).abs() < 1e-3);
        }
        // Density error grows with |θ|·δθ, so probe within the unit box.
        let x0 = x0.map(|v| 0.5 * v);
        let lp = cnf_log_prob(&Linear(-1.0), &spec, &x0, &none).unwrap();
        for (i, v) in lp.iter().enumerate() {
            let scaled: Vec<f64> = x0.row(i).iter().map(|x| x * 1f64.exp()).collect();
            let want = standard_normal_lp(&scaled) + 2.0;
            assert!((v - want).abs() < 1e-3, "{v} vs {want}");
        }
    }

    #[test]
    fn zero_field_is_base_distribution() {
        let cnf = Cnf::new(CnfSpec::new(2, 1, &[8])).unwrap();
        let p = cnf.init(RngKey::new(0)).unwrap().zeros_like();
        let ctx = Tensor::matrix(1, 1, vec![0.5]);
        let s = cnf.sample(&p, RngKey::new(1), &ctx, 10).unwrap();
        let mut rng = RngKey::new(1).rng();
        let base: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        assert_eq!(s.data(), &base[..]);
        let theta = rand_tensor(9, 3, 2);
        let lp = cnf.log_prob(&p, &theta, &ctx).unwrap();
        for (i, v) in lp.iter().enumerate() {
            assert!((v - standard_normal_lp(theta.row(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn field_matches_loop_oracle_and_sees_context() {
        let cnf = Cnf::new(CnfSpec::new(2, 1, &[5])).unwrap();
        let p0 = cnf.init(RngKey::new(2)).unwrap();
        let mut rng = RngKey::new(3).rng();
        let flat: Vec<f64> = p0.flat().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = p0.with_flat(&flat);
        let theta = Tensor::matrix(1, 2, vec![0.3, -0.2]);
        let v = cnf.vector_field(&p, &theta, &[0.4], &Tensor::matrix(1, 1, vec![1.5])).unwrap();
        let input = [0.3, -0.2, 0.4, 1.5];
        let w0 = p.get("cnf/l0/w").unwrap();
        let b0 = p.get("cnf/l0/b").unwrap();
        let w1 = p.get("cnf/l1/w").unwrap();
        let b1 = p.get("cnf/l1/b").unwrap();
        let hidden: Vec<f64> = (0..5)
            .map(|j| (b0.data()[j] + (0..4).map(|i| input[i] * w0.get(i, j)).sum::<f64>()).tanh())
            .collect();
        for k in 0..2 {
            let want = b1.data()[k] + (0..5).map(|j| hidden[j] * w1.get(j, k)).sum::<f64>();
            assert!((v.get(0, k) - want).abs() < 1e-12);
        }
        let v2 = cnf.vector_field(&p, &theta, &[0.4], &Tensor::matrix(1, 1, vec![-1.5])).unwrap();
        assert!((v.get(0, 0) - v2.get(0, 0)).abs() > 1e-6);
    }

    #[test]
    fn net_divergence_matches_finite_differences() {
        let cnf = Cnf::new(CnfSpec::new(3, 1, &[8])).unwrap();
        let p0 = cnf.init(RngKey::new(4)).unwrap();
        let mut rng = RngKey::new(5).rng();
        let flat: Vec<f64> = p0.flat().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = p0.with_flat(&flat);
        let theta = rand_tensor(10, 2, 3);
        let ctx = rand_tensor(11, 2, 1);
        let (_, div) = cnf.field(&p).eval_div(&theta, 0.3, &ctx).unwrap();
        let h = 1e-6;
        for (i, want) in div.iter().enumerate() {
            let mut fd = 0.0;
            for j in 0..3 {
                let mut a = theta.clone();
                a.set(i, j, a.get(i, j) + h);
                let mut b = theta.clone();
                b.set(i, j, b.get(i, j) - h);
                let va = cnf.field(&p).eval(&a, 0.3, &ctx).unwrap();
                let vb = cnf.field(&p).eval(&b, 0.3, &ctx).unwrap();
                fd += (va.get(i, j) - vb.get(i, j)) / (2.0 * h);
            }
            assert!((fd - want).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = CnfSpec::new(1, 0, &[4]);
        s.sigma_min = 1.0;
        assert!(Cnf::new(s.clone()).is_err());
        s.sigma_min = 0.1;
        s.ode_steps = 1;
        assert!(Cnf::new(s).is_err());
    }
}
