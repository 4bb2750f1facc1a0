//! Autoregressive weight masks (MADE).
//!
//! `order[i]` is the position of coordinate `i` in the autoregressive
//! ordering. Input coordinate `i` gets degree `order[i] + 1`, context
//! inputs degree 0, hidden unit `k` degree `k mod dim`. A hidden weight is
//! kept when the receiving degree is at least the sending one; an output
//! weight when the hidden degree is strictly below the output's. Output
//! block for coordinate `i` therefore only sees coordinates earlier in the
//! order, plus the context.

use std::sync::Arc;

use sbi_core::{Error, Result, Tensor};

use crate::mlp::{Activation, MlpSpec};

/// Check that `order` is a permutation of `0..dim`.
pub fn validate_order(order: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if order.len() != dim {
        return Err(Error::Config(format!("order has {} entries, dim is {dim}", order.len())));
    }
    for &o in order {
        if o >= dim || seen[o] {
            return Err(Error::Config(format!("{order:?} is not a permutation")));
        }
        seen[o] = true;
    }
    Ok(())
}

/// One mask per layer, each shaped like the layer's `fan_in × fan_out`
/// weight. The network input is `[θ (dim), context (context_dim)]`, the
/// output has `n_params · dim` columns laid out as `p · dim + i`.
pub fn made_masks(
    dim: usize,
    context_dim: usize,
    hidden_sizes: &[usize],
    n_params: usize,
    order: &[usize],
) -> Result<Vec<Tensor>> {
    if dim == 0 || n_params == 0 {
        return Err(Error::Config("MADE needs dim >= 1 and n_params >= 1".into()));
    }
    validate_order(order, dim)?;
    let mut in_deg: Vec<usize> = order.iter().map(|o| o + 1).collect();
    in_deg.extend(std::iter::repeat_n(0, context_dim));
    let mut masks = Vec::with_capacity(hidden_sizes.len() + 1);
    for &h in hidden_sizes {
        let out_deg: Vec<usize> = (0..h).map(|k| k % dim).collect();
        let mut m = Tensor::zeros(&[in_deg.len(), h]);
        for (i, di) in in_deg.iter().enumerate() {
            for (j, dj) in out_deg.iter().enumerate() {
                if dj >= di {
                    m.set(i, j, 1.0);
                }
            }
        }
        masks.push(m);
        in_deg = out_deg;
    }
    let out_deg: Vec<usize> = (0..n_params * dim).map(|c| order[c % dim] + 1).collect();
    let mut m = Tensor::zeros(&[in_deg.len(), out_deg.len()]);
    for (i, di) in in_deg.iter().enumerate() {
        for (j, dj) in out_deg.iter().enumerate() {
            // Without hidden layers the raw inputs feed the output directly
            // and the same strict rule applies.
            if di < dj {
                m.set(i, j, 1.0);
            }
        }
    }
    masks.push(m);
    Ok(masks)
}

/// A masked MLP conditioner.
#[derive(Clone, Debug)]
pub struct Made {
    pub spec: MlpSpec,
    pub masks: Vec<Arc<Tensor>>,
    pub dim: usize,
    pub n_params: usize,
}

impl Made {
    pub fn new(
        dim: usize,
        context_dim: usize,
        hidden_sizes: &[usize],
        n_params: usize,
        order: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let masks = made_masks(dim, context_dim, hidden_sizes, n_params, order)?
            .into_iter()
            .map(Arc::new)
            .collect();
        let mut spec = MlpSpec::new(dim + context_dim, n_params * dim, hidden_sizes);
        spec.activation = activation;
        Ok(Made {
            spec,
            masks,
            dim,
            n_params,
        })
    }
}
