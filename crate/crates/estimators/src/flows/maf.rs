//! Affine masked autoregressive flow.
//!
//! In the density direction each layer maps `u ↦ (u − μ(u)) · exp(−s(u))`
//! with `(μ, s)` from a MADE conditioner, then permutes the coordinates.
//! Sampling runs the layers backwards and solves each one coordinate by
//! coordinate.

use rand_distr::{Distribution as _, StandardNormal};
use sbi_core::distributions::LN_2PI;
use sbi_core::{Error, Result, RngKey, Tensor};
use sbi_ndnet::{Activation, Graph, Made, NetParams, ParamVars, Var};
use serde::{Deserialize, Serialize};

use crate::{broadcast_rows, check_cols, context_var, with_context, TrainLoss, LOG_SCALE_BOUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MafSpec {
    pub event_dim: usize,
    pub context_dim: usize,
    pub n_layers: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Permutation applied after each layer; defaults to order reversal.
    #[serde(default)]
    pub permutations: Option<Vec<Vec<usize>>>,
}

impl MafSpec {
    pub fn new(event_dim: usize, context_dim: usize, n_layers: usize, hidden_sizes: &[usize]) -> Self {
        MafSpec {
            event_dim,
            context_dim,
            n_layers,
            hidden_sizes: hidden_sizes.to_vec(),
            activation: Activation::Tanh,
            permutations: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Maf {
    pub spec: MafSpec,
    layers: Vec<Made>,
    perms: Vec<Vec<usize>>,
}

fn prefix(l: usize) -> String {
    format!("maf/layer{l}")
}

/// Columns of `v` reordered so that output column `j` is `v[:, perm[j]]`.
fn permute_var<'g>(v: Var<'g>, perm: &[usize]) -> Var<'g> {
    let cols: Vec<Var> = perm.iter().map(|&j| v.slice_cols(j, j + 1)).collect();
    Var::concat_cols(&cols)
}

impl Maf {
    pub fn new(spec: MafSpec) -> Result<Self> {
        let d = spec.event_dim;
        if d == 0 || spec.n_layers == 0 {
            return Err(Error::Config("MAF needs event_dim >= 1 and n_layers >= 1".into()));
        }
        let perms = match &spec.permutations {
            Some(p) => {
                if p.len() != spec.n_layers {
                    return Err(Error::Config("one permutation per MAF layer required".into()));
                }
                for perm in p {
                    sbi_ndnet::made::validate_order(perm, d)?;
                }
                p.clone()
            }
            None => vec![(0..d).rev().collect(); spec.n_layers],
        };
        let identity: Vec<usize> = (0..d).collect();
        let layers = (0..spec.n_layers)
            .map(|_| Made::new(d, spec.context_dim, &spec.hidden_sizes, 2, &identity, spec.activation))
            .collect::<Result<Vec<_>>>()?;
        Ok(Maf { spec, layers, perms })
    }

    pub fn init(&self, key: RngKey) -> Result<NetParams> {
        let mut p = NetParams::new();
        for (l, made) in self.layers.iter().enumerate() {
            made.spec.init(&prefix(l), key.fold_in(l as u64), &mut p)?;
        }
        Ok(p)
    }

    fn conditioner<'g>(
        &self,
        pv: &ParamVars<'g>,
        l: usize,
        u: Var<'g>,
        ctx: Option<Var<'g>>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let d = self.spec.event_dim;
        let made = &self.layers[l];
        let out = made
            .spec
            .forward(pv, &prefix(l), with_context(u, ctx), Some(&made.masks))?;
        let mu = out.slice_cols(0, d);
        let s = out.slice_cols(d, 2 * d).clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND);
        Ok((mu, s))
    }

    /// Density direction: `x ↦ (z, log|det ∂z/∂x|)`, the latter `n × 1`.
    pub fn inverse_var<'g>(
        &self,
        pv: &ParamVars<'g>,
        x: Var<'g>,
        ctx: Option<Var<'g>>,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let mut u = x;
        let mut log_det: Option<Var> = None;
        for l in 0..self.layers.len() {
            let (mu, s) = self.conditioner(pv, l, u, ctx)?;
            let v = (u - mu) * (-s).exp();
            let ld = -s.sum_rows();
            log_det = Some(match log_det {
                Some(acc) => acc + ld,
                None => ld,
            });
            u = permute_var(v, &self.perms[l]);
        }
        Ok((u, log_det.expect("at least one layer")))
    }

    /// Per-row log-density, `n × 1`.
    pub fn log_prob_var<'g>(
        &self,
        pv: &ParamVars<'g>,
        x: Var<'g>,
        ctx: Option<Var<'g>>,
    ) -> Result<Var<'g>> {
        let d = self.spec.event_dim as f64;
        let (z, log_det) = self.inverse_var(pv, x, ctx)?;
        Ok(z.square().sum_rows().scale(-0.5).add_scalar(-0.5 * d * LN_2PI) + log_det)
    }

    fn check(&self, x: &Tensor, ctx: &Tensor) -> Result<()> {
        check_cols("MAF input", x, self.spec.event_dim)?;
        check_cols("MAF context", ctx, self.spec.context_dim)?;
        if ctx.cols() > 0 && ctx.rows() != x.rows() {
            return Err(Error::Contract("context and input row counts differ".into()));
        }
        Ok(())
    }

    /// `(z, log_det)` for a batch.
    pub fn inverse(&self, params: &NetParams, x: &Tensor, ctx: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check(x, ctx)?;
        let g = Graph::new();
        let pv = ParamVars::fixed(&g, params);
        let (z, ld) = self.inverse_var(&pv, g.constant(x.clone()), context_var(&g, ctx))?;
        let (z, ld) = ((*z.value()).clone(), ld.value().data().to_vec());
        if !ld.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite MAF log-determinant".into()));
        }
        Ok((z, ld))
    }

    pub fn log_prob(&self, params: &NetParams, x: &Tensor, ctx: &Tensor) -> Result<Vec<f64>> {
        self.check(x, ctx)?;
        let g = Graph::new();
        let pv = ParamVars::fixed(&g, params);
        let lp = self.log_prob_var(&pv, g.constant(x.clone()), context_var(&g, ctx))?;
        Ok(lp.value().data().to_vec())
    }

    /// Sampling direction: `z ↦ x`.
    pub fn forward(&self, params: &NetParams, z: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        self.check(z, ctx)?;
        let d = self.spec.event_dim;
        let n = z.rows();
        let mut cur = z.clone();
        for l in (0..self.layers.len()).rev() {
            let perm = &self.perms[l];
            let mut v = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for (j, &p) in perm.iter().enumerate() {
                    v.set(i, p, cur.get(i, j));
                }
            }
            let made = &self.layers[l];
            let mut u = Tensor::zeros(&[n, d]);
            // Pass k fixes the coordinate at position k of the order.
            for _ in 0..d {
                let input = if ctx.cols() > 0 {
                    Tensor::concat_cols(&[&u, ctx])?
                } else {
                    u.clone()
                };
                let out = made
                    .spec
                    .forward_plain(params, &prefix(l), &input, Some(&made.masks))?;
                for i in 0..n {
                    for j in 0..d {
                        let s = out.get(i, d + j).clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND);
                        u.set(i, j, v.get(i, j) * s.exp() + out.get(i, j));
                    }
                }
            }
            cur = u;
        }
        if !cur.all_finite() {
            return Err(Error::Numeric("non-finite MAF sample".into()));
        }
        Ok(cur)
    }

    /// `n` draws given a context with one row (or `n` rows).
    pub fn sample(&self, params: &NetParams, key: RngKey, ctx: &Tensor, n: usize) -> Result<Tensor> {
        let d = self.spec.event_dim;
        let mut rng = key.rng();
        let z = Tensor::matrix(n, d, (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect());
        let ctx = if ctx.cols() > 0 {
            broadcast_rows(ctx, n)
        } else {
            Tensor::zeros(&[n, 0])
        };
        self.forward(params, &z, &ctx)
    }
}

impl TrainLoss for Maf {
    /// Mean negative log-likelihood.
    fn batch_loss<'g>(
        &self,
        g: &'g Graph,
        pv: &ParamVars<'g>,
        event: &Tensor,
        context: &Tensor,
        _key: RngKey,
    ) -> Result<Var<'g>> {
        self.check(event, context)?;
        let lp = self.log_prob_var(pv, g.constant(event.clone()), context_var(g, context))?;
        Ok(-lp.mean())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(maf: &Maf, seed: u64, scale: f64) -> NetParams {
        let p = maf.init(RngKey::new(seed)).unwrap();
        let mut rng = RngKey::new(seed + 100).rng();
        let flat: Vec<f64> = p.flat().iter().map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        p.with_flat(&flat)
    }

    fn rand_tensor(seed: u64, r: usize, c: usize) -> Tensor {
        let mut rng = RngKey::new(seed).rng();
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_params_are_a_permutation() {
        let maf = Maf::new(MafSpec::new(3, 0, 1, &[8])).unwrap();
        let p = maf.init(RngKey::new(0)).unwrap().zeros_like();
        let x = rand_tensor(1, 4, 3);
        let none = Tensor::zeros(&[4, 0]);
        let (z, ld) = maf.inverse(&p, &x, &none).unwrap();
        for i in 0..4 {
            assert_eq!(z.row(i), &[x.get(i, 2), x.get(i, 1), x.get(i, 0)]);
        }
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_is_exact() {
        let maf = Maf::new(MafSpec::new(3, 2, 4, &[16, 16])).unwrap();
        let p = random_params(&maf, 2, 0.5);
        let x = rand_tensor(3, 10, 3);
        let ctx = rand_tensor(4, 10, 2);
        let (z, _) = maf.inverse(&p, &x, &ctx).unwrap();
        let back = maf.forward(&p, &z, &ctx).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let x2 = maf.forward(&p, &x, &ctx).unwrap();
        let (z2, _) = maf.inverse(&p, &x2, &ctx).unwrap();
        for (a, b) in z2.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        for d in 1..=4 {
            let maf = Maf::new(MafSpec::new(d, 1, 3, &[12])).unwrap();
            let p = random_params(&maf, 10 + d as u64, 0.4);
            let x = rand_tensor(20 + d as u64, 1, d);
            let ctx = Tensor::matrix(1, 1, vec![0.3]);
            let (_, ld) = maf.inverse(&p, &x, &ctx).unwrap();
            let h = 1e-6;
            let mut jac = vec![vec![0.0; d]; d];
            for j in 0..d {
                let mut xp = x.clone();
                xp.data_mut()[j] += h;
                let mut xm = x.clone();
                xm.data_mut()[j] -= h;
                let zp = maf.inverse(&p, &xp, &ctx).unwrap().0;
                let zm = maf.inverse(&p, &xm, &ctx).unwrap().0;
                for (i, row) in jac.iter_mut().enumerate() {
                    row[j] = (zp.data()[i] - zm.data()[i]) / (2.0 * h);
                }
            }
            let det = determinant(jac);
            assert!((det.abs() - ld[0].exp()).abs() < 1e-4 * ld[0].exp().max(1.0), "d={d}");
        }
    }

    /// Gaussian elimination with partial pivoting.
    fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if p != c {
                a.swap(p, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        det
    }

    #[test]
    fn identity_flow_is_standard_normal() {
        let maf = Maf::new(MafSpec::new(2, 0, 2, &[8])).unwrap();
        let p = maf.init(RngKey::new(0)).unwrap().zeros_like();
        let none = Tensor::zeros(&[1, 0]);
        let x = Tensor::matrix(1, 2, vec![0.5, -1.0]);
        let lp = maf.log_prob(&p, &x, &none).unwrap()[0];
        assert!((lp - (-LN_2PI - 0.5 * 1.25)).abs() < 1e-12);
        let s = maf.sample(&p, RngKey::new(5), &none, 10_000).unwrap();
        for m in s.column_means() {
            assert!(m.abs() < 0.05);
        }
        assert_eq!(s, maf.sample(&p, RngKey::new(5), &none, 10_000).unwrap());
    }

    #[test]
    fn one_dimensional_density_normalizes() {
        let maf = Maf::new(MafSpec::new(1, 1, 3, &[10])).unwrap();
        let p = random_params(&maf, 30, 0.6);
        let n = 4001;
        let xs: Vec<f64> = (0..n).map(|i| -10.0 + 20.0 * i as f64 / (n - 1) as f64).collect();
        let x = Tensor::matrix(n, 1, xs.clone());
        let ctx = Tensor::full(&[n, 1], 0.7);
        let lp = maf.log_prob(&p, &x, &ctx).unwrap();
        let dx = xs[1] - xs[0];
        let integral: f64 = lp.windows(2).map(|w| 0.5 * (w[0].exp() + w[1].exp()) * dx).sum();
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn context_changes_density() {
        let maf = Maf::new(MafSpec::new(2, 1, 2, &[8])).unwrap();
        let p = random_params(&maf, 40, 0.5);
        let x = Tensor::matrix(1, 2, vec![0.1, 0.2]);
        let a = maf.log_prob(&p, &x, &Tensor::matrix(1, 1, vec![-1.0])).unwrap()[0];
        let b = maf.log_prob(&p, &x, &Tensor::matrix(1, 1, vec![1.0])).unwrap()[0];
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn wrong_shapes_are_contract_errors() {
        let maf = Maf::new(MafSpec::new(2, 1, 1, &[4])).unwrap();
        let p = maf.init(RngKey::new(0)).unwrap();
        let err = maf.log_prob(&p, &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 1]));
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
