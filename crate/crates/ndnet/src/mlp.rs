//! Fully connected networks: an affine–activation stack.

use std::sync::Arc;

use sbi_core::{Error, Result, RngKey, Tensor};
use serde::{Deserialize, Serialize};

use crate::graph::{self, matmul, Var};
use crate::params::{truncated_normal, NetParams, ParamVars};

/// Std of the final layer's weights; near-zero outputs make fresh flows
/// start close to the identity.
pub const FINAL_LAYER_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply_var<'g>(self, v: Var<'g>) -> Var<'g> {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
            Activation::Gelu => v.gelu(),
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Gelu => graph::gelu(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => graph::gelu_grad(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub final_activation: Option<Activation>,
}

impl MlpSpec {
    pub fn new(in_dim: usize, out_dim: usize, hidden_sizes: &[usize]) -> Self {
        MlpSpec {
            in_dim,
            out_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            activation: Activation::Tanh,
            final_activation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(format!("MLP dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.in_dim];
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.out_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}/l{layer}/w")
    }

    pub fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}/l{layer}/b")
    }

    /// Add freshly initialized weights under `prefix`. Hidden layers draw
    /// from a truncated normal with std `1/√fan_in`, the last layer with
    /// std [`FINAL_LAYER_STD`]; biases start at zero.
    pub fn init(&self, prefix: &str, key: RngKey, params: &mut NetParams) -> Result<()> {
        self.init_with_final_std(prefix, key, params, Some(FINAL_LAYER_STD))
    }

    /// As [`MlpSpec::init`]; `None` gives the last layer the fan-in scale too.
    pub fn init_with_final_std(
        &self,
        prefix: &str,
        key: RngKey,
        params: &mut NetParams,
        final_std: Option<f64>,
    ) -> Result<()> {
        self.validate()?;
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        for (l, &(fi, fo)) in dims.iter().enumerate() {
            let mut rng = key.fold_in(l as u64).rng();
            let std = match final_std {
                Some(s) if l == last => s,
                _ => 1.0 / (fi as f64).sqrt(),
            };
            params.insert(Self::weight_name(prefix, l), truncated_normal(&mut rng, &[fi, fo], std));
            params.insert(Self::bias_name(prefix, l), Tensor::zeros(&[1, fo]));
        }
        Ok(())
    }

    fn check_input(&self, cols: usize, masks: Option<&[Arc<Tensor>]>) -> Result<()> {
        if cols != self.in_dim {
            return Err(Error::Contract(format!(
                "MLP expects {} input columns, got {cols}",
                self.in_dim
            )));
        }
        if let Some(m) = masks {
            if m.len() != self.hidden_sizes.len() + 1 {
                return Err(Error::Contract("one mask per layer required".into()));
            }
        }
        Ok(())
    }

    fn layer_act(&self, l: usize) -> Option<Activation> {
        if l < self.hidden_sizes.len() {
            Some(self.activation)
        } else {
            self.final_activation
        }
    }

    /// Differentiable forward pass; `masks` (one per layer, shaped like the
    /// weights) are multiplied into the weights when given.
    pub fn forward<'g>(
        &self,
        pv: &ParamVars<'g>,
        prefix: &str,
        x: Var<'g>,
        masks: Option<&[Arc<Tensor>]>,
    ) -> Result<Var<'g>> {
        self.check_input(x.cols(), masks)?;
        let mut h = x;
        for l in 0..self.layer_dims().len() {
            let mut w = pv.get(&Self::weight_name(prefix, l))?;
            if let Some(m) = masks {
                w = w.mul_const(m[l].clone());
            }
            let b = pv.get(&Self::bias_name(prefix, l))?;
            h = h.matmul(w).add_row(b);
            if let Some(act) = self.layer_act(l) {
                h = act.apply_var(h);
            }
        }
        Ok(h)
    }

    fn weights(
        &self,
        params: &NetParams,
        prefix: &str,
        l: usize,
        masks: Option<&[Arc<Tensor>]>,
    ) -> Result<(Tensor, Tensor)> {
        let mut w = params.get(&Self::weight_name(prefix, l))?.clone();
        if let Some(m) = masks {
            for (a, b) in w.data_mut().iter_mut().zip(m[l].data()) {
                *a *= b;
            }
        }
        Ok((w, params.get(&Self::bias_name(prefix, l))?.clone()))
    }

    /// Forward pass without a tape.
    pub fn forward_plain(
        &self,
        params: &NetParams,
        prefix: &str,
        x: &Tensor,
        masks: Option<&[Arc<Tensor>]>,
    ) -> Result<Tensor> {
        Ok(self.jvp_inner(params, prefix, x, None, masks)?.0)
    }

    /// Forward-mode derivative: returns `(f(x), J_f(x) · dx)` row by row.
    pub fn jvp(
        &self,
        params: &NetParams,
        prefix: &str,
        x: &Tensor,
        dx: &Tensor,
        masks: Option<&[Arc<Tensor>]>,
    ) -> Result<(Tensor, Tensor)> {
        let (y, dy) = self.jvp_inner(params, prefix, x, Some(dx), masks)?;
        Ok((y, dy.expect("tangent requested")))
    }

    fn jvp_inner(
        &self,
        params: &NetParams,
        prefix: &str,
        x: &Tensor,
        dx: Option<&Tensor>,
        masks: Option<&[Arc<Tensor>]>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_input(x.cols(), masks)?;
        let mut h = x.clone();
        let mut dh = dx.cloned();
        for l in 0..self.layer_dims().len() {
            let (w, b) = self.weights(params, prefix, l, masks)?;
            let mut pre = matmul(&h, &w);
            for i in 0..pre.rows() {
                for (v, bb) in pre.row_mut(i).iter_mut().zip(b.data()) {
                    *v += bb;
                }
            }
            let mut dpre = dh.as_ref().map(|d| matmul(d, &w));
            match self.layer_act(l) {
                Some(act) => {
                    if let Some(d) = dpre.as_mut() {
                        for (dv, p) in d.data_mut().iter_mut().zip(pre.data()) {
                            *dv *= act.derivative(*p);
                        }
                    }
                    h = pre.map(|v| act.apply(v));
                }
                None => h = pre,
            }
            dh = dpre;
        }
        Ok((h, dh))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::value_and_grad;
    use rand::Rng;

    fn random_params(spec: &MlpSpec, seed: u64) -> NetParams {
        let mut rng = RngKey::new(seed).rng();
        let mut p = NetParams::new();
        for (l, (fi, fo)) in spec.layer_dims().into_iter().enumerate() {
            let w = (0..fi * fo).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = (0..fo).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.insert(MlpSpec::weight_name("net", l), Tensor::matrix(fi, fo, w));
            p.insert(MlpSpec::bias_name("net", l), Tensor::matrix(1, fo, b));
        }
        p
    }

    /// Straight-line reimplementation with explicit loops.
    fn naive_forward(spec: &MlpSpec, p: &NetParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n_layers = spec.layer_dims().len();
        for (l, (fi, fo)) in spec.layer_dims().into_iter().enumerate() {
            let w = p.get(&MlpSpec::weight_name("net", l)).unwrap();
            let b = p.get(&MlpSpec::bias_name("net", l)).unwrap();
            let mut out = vec![0.0; fo];
            for j in 0..fo {
                let mut s = b.data()[j];
                for i in 0..fi {
                    s += h[i] * w.get(i, j);
                }
                out[j] = if l + 1 < n_layers {
                    spec.activation.apply(s)
                } else {
                    s
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn matches_naive_oracle() {
        for act in [Activation::Tanh, Activation::Relu, Activation::Gelu] {
            let mut spec = MlpSpec::new(3, 2, &[5, 4]);
            spec.activation = act;
            let p = random_params(&spec, 11);
            let mut rng = RngKey::new(12).rng();
            let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect());
            let g = Graph::new();
            let pv = ParamVars::fixed(&g, &p);
            let y = spec.forward(&pv, "net", g.constant(x.clone()), None).unwrap().value();
            let plain = spec.forward_plain(&p, "net", &x, None).unwrap();
            for i in 0..6 {
                let want = naive_forward(&spec, &p, x.row(i));
                for j in 0..2 {
                    assert!((y.get(i, j) - want[j]).abs() < 1e-12);
                    assert!((plain.get(i, j) - want[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(2, 3, &[4]);
        let p = random_params(&spec, 1).zeros_like();
        let x = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]);
        let y = spec.forward_plain(&p, "net", &x, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::new(3, 3, &[]);
        let mut p = NetParams::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        (0..3).for_each(|i| eye.set(i, i, 1.0));
        p.insert(MlpSpec::weight_name("net", 0), eye);
        p.insert(MlpSpec::bias_name("net", 0), Tensor::zeros(&[1, 3]));
        let x = Tensor::matrix(1, 3, vec![0.3, -1.0, 7.0]);
        assert_eq!(spec.forward_plain(&p, "net", &x, None).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let spec = MlpSpec::new(3, 1, &[2]);
        let p = random_params(&spec, 2);
        let x = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            spec.forward_plain(&p, "net", &x, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let spec = MlpSpec::new(3, 2, &[6, 6]);
        let p = random_params(&spec, 5);
        let x = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.0, -0.3]);
        let dx = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.5, 0.0, -1.0, 2.0]);
        let (_, dy) = spec.jvp(&p, "net", &x, &dx, None).unwrap();
        let h = 1e-6;
        let shifted = |s: f64| {
            let xs = Tensor::matrix(
                2,
                3,
                x.data().iter().zip(dx.data()).map(|(a, b)| a + s * b).collect(),
            );
            spec.forward_plain(&p, "net", &xs, None).unwrap()
        };
        let (yp, ym) = (shifted(h), shifted(-h));
        for k in 0..dy.len() {
            let fd = (yp.data()[k] - ym.data()[k]) / (2.0 * h);
            assert!((fd - dy.data()[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let spec = MlpSpec::new(3, 2, &[5]);
        let p = random_params(&spec, 7);
        let mut rng = RngKey::new(8).rng();
        let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let t = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let loss = |p: &NetParams| {
            value_and_grad(p, |g, pv| {
                let y = spec.forward(pv, "net", g.constant(x.clone()), None)?;
                Ok((y - g.constant(t.clone())).square().mean())
            })
            .unwrap()
        };
        let (_, grad) = loss(&p);
        let flat = p.flat();
        let analytic = grad.flat();
        for k in 0..flat.len() {
            let h = 1e-5;
            let mut a = flat.clone();
            a[k] += h;
            let mut b = flat.clone();
            b[k] -= h;
            let fd = (loss(&p.with_flat(&a)).0 - loss(&p.with_flat(&b)).0) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / (1e-8 + fd.abs().max(analytic[k].abs()));
            assert!(rel < 1e-5 || (fd - analytic[k]).abs() < 1e-10, "entry {k}");
        }
    }
}
