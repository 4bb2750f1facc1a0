//! Neural estimators for simulation-based inference.
//!
//! Each estimator exposes a differentiable training loss through
//! [`TrainLoss`] and plain (tape-free or fixed-parameter) evaluation for
//! density, sampling and ratio queries.

pub mod cnf;
pub mod flows;
pub mod ratio;

use sbi_core::{Dataset, Result, RngKey, Tensor};
use sbi_ndnet::{value, value_and_grad, Graph, NetParams, Objective, ParamVars, Var};

pub use cnf::{Cnf, CnfSpec};
pub use flows::maf::{Maf, MafSpec};
pub use flows::mdn::{Mdn, MdnSpec};
pub use ratio::{Nre, NreSpec};

/// Bound applied to every predicted log-scale before exponentiation.
pub const LOG_SCALE_BOUND: f64 = 7.0;

/// A scalar training loss over `(event, context)` rows.
pub trait TrainLoss {
    fn batch_loss<'g>(
        &self,
        g: &'g Graph,
        pv: &ParamVars<'g>,
        event: &Tensor,
        context: &Tensor,
        key: RngKey,
    ) -> Result<Var<'g>>;

    fn min_batch(&self) -> usize {
        1
    }
}

/// Which half of a [`Dataset`] row is the modelled event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventSide {
    /// Model `y | θ` (likelihood and ratio estimators).
    Y,
    /// Model `θ | y` (posterior estimators).
    Theta,
}

impl EventSide {
    /// `(event, context)` matrices of a dataset.
    pub fn split(self, d: &Dataset) -> (Tensor, Tensor) {
        let theta = d.theta.flatten();
        match self {
            EventSide::Y => (d.y.clone(), theta),
            EventSide::Theta => (theta, d.y.clone()),
        }
    }
}

/// Adapts a [`TrainLoss`] to the ndnet fit loop.
pub struct Training<'a, L: TrainLoss + ?Sized> {
    pub loss: &'a L,
    pub side: EventSide,
}

impl<L: TrainLoss + ?Sized> Objective for Training<'_, L> {
    fn loss_and_grad(&self, params: &NetParams, batch: &Dataset, key: RngKey) -> Result<(f64, NetParams)> {
        let (event, context) = self.side.split(batch);
        value_and_grad(params, |g, pv| self.loss.batch_loss(g, pv, &event, &context, key))
    }

    fn loss(&self, params: &NetParams, batch: &Dataset, key: RngKey) -> Result<f64> {
        let (event, context) = self.side.split(batch);
        value(params, |g, pv| self.loss.batch_loss(g, pv, &event, &context, key))
    }

    fn min_batch(&self) -> usize {
        self.loss.min_batch()
    }
}

/// Repeat a single-row matrix `n` times; other shapes pass through.
pub fn broadcast_rows(t: &Tensor, n: usize) -> Tensor {
    if t.rows() == n {
        return t.clone();
    }
    assert_eq!(t.rows(), 1, "context must have 1 or {n} rows");
    t.select_rows(&vec![0; n])
}

/// `[x, context]`, or `x` alone when the context has no columns.
pub(crate) fn with_context<'g>(x: Var<'g>, ctx: Option<Var<'g>>) -> Var<'g> {
    match ctx {
        Some(c) => Var::concat_cols(&[x, c]),
        None => x,
    }
}

pub(crate) fn context_var<'g>(g: &'g Graph, ctx: &Tensor) -> Option<Var<'g>> {
    (ctx.cols() > 0).then(|| g.constant(ctx.clone()))
}

pub(crate) fn check_cols(what: &str, t: &Tensor, want: usize) -> Result<()> {
    if t.cols() != want {
        return Err(sbi_core::Error::Contract(format!(
            "{what} has {} columns, expected {want}",
            t.cols()
        )));
    }
    Ok(())
}
