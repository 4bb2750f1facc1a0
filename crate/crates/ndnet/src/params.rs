//! Named parameter trees and their JSON document form.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng;
use rand_distr::StandardNormal;
use sbi_core::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};

/// Flat map of path-like names (`"maf/layer0/l1/w"`) to tensors.
///
/// `params` are trainable; `buffers` hold fixed state such as
/// standardization statistics and are never touched by the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetParams {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    buffer: bool,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    spec: serde_json::Value,
    layers: Vec<LayerDoc>,
}

fn encode(t: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(8 * t.len());
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode(name: &str, shape: Vec<usize>, data: &str) -> Result<Tensor> {
    let bytes = B64
        .decode(data)
        .map_err(|e| Error::Parse(format!("layer {name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse(format!("layer {name}: truncated data")));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, values).map_err(|e| Error::Parse(format!("layer {name}: {e}")))
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing buffer {name}")))
    }

    pub fn has_buffer(&self, name: &str) -> bool {
        self.buffers.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all zeros; buffers are dropped.
    pub fn zeros_like(&self) -> NetParams {
        NetParams {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            buffers: BTreeMap::new(),
        }
    }

    /// Trainable values concatenated in name order.
    pub fn flat(&self) -> Vec<f64> {
        self.params.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Copy with trainable values replaced from a [`flat`](Self::flat) vector.
    pub fn with_flat(&self, flat: &[f64]) -> NetParams {
        let mut out = self.clone();
        let mut start = 0;
        for t in out.params.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[start..start + n]);
            start += n;
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.all_finite())
    }

    /// Serialize as `{spec, layers: [{name, shape, data}]}` with data the
    /// base64 of little-endian `f64` bytes.
    pub fn to_json(&self, spec: serde_json::Value) -> Result<String> {
        let layers = self
            .params
            .iter()
            .map(|(k, v)| (k, v, false))
            .chain(self.buffers.iter().map(|(k, v)| (k, v, true)))
            .map(|(name, t, buffer)| LayerDoc {
                name: name.clone(),
                shape: t.shape().to_vec(),
                buffer,
                data: encode(t),
            })
            .collect();
        serde_json::to_string_pretty(&ParamsDoc { spec, layers })
            .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<(serde_json::Value, NetParams)> {
        let doc: ParamsDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = NetParams::new();
        for layer in doc.layers {
            let t = decode(&layer.name, layer.shape, &layer.data)?;
            if layer.buffer {
                out.buffers.insert(layer.name, t);
            } else {
                out.params.insert(layer.name, t);
            }
        }
        Ok((doc.spec, out))
    }
}

/// Truncated normal (±2σ) draws.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break std * z;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Parameters lifted onto a graph, looked up by name.
pub struct ParamVars<'g> {
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> ParamVars<'g> {
    /// Trainable leaves (gradients tracked).
    pub fn track(g: &'g Graph, params: &NetParams) -> Self {
        Self::lift(g, params, true)
    }

    /// Constant leaves for gradient-free evaluation.
    pub fn fixed(g: &'g Graph, params: &NetParams) -> Self {
        Self::lift(g, params, false)
    }

    fn lift(g: &'g Graph, params: &NetParams, trainable: bool) -> Self {
        let vars = params
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }
}

/// Evaluate a scalar loss and its gradient with respect to every
/// trainable parameter.
pub fn value_and_grad<F>(params: &NetParams, f: F) -> Result<(f64, NetParams)>
where
    F: for<'g> FnOnce(&'g Graph, &ParamVars<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let pv = ParamVars::track(&g, params);
    let loss = f(&g, &pv)?;
    if loss.rows() != 1 || loss.cols() != 1 {
        return Err(Error::Contract("loss must be a scalar".into()));
    }
    let value = loss.item();
    let mut grads = g.backward(loss);
    let mut out = params.zeros_like();
    for (name, t) in out.params.iter_mut() {
        *t = grads.take(pv.get(name)?);
    }
    Ok((value, out))
}

/// Evaluate a scalar loss without recording gradients.
pub fn value<F>(params: &NetParams, f: F) -> Result<f64>
where
    F: for<'g> FnOnce(&'g Graph, &ParamVars<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let pv = ParamVars::fixed(&g, params);
    Ok(f(&g, &pv)?.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbi_core::RngKey;

    fn sample_params() -> NetParams {
        let mut rng = RngKey::new(4).rng();
        let mut p = NetParams::new();
        p.insert("a/w", truncated_normal(&mut rng, &[3, 2], 1.0));
        p.insert("a/b", Tensor::zeros(&[1, 2]));
        p.insert_buffer("norm/mean", Tensor::matrix(1, 2, vec![0.1, f64::MIN_POSITIVE]));
        p
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let p = sample_params();
        let text = p.to_json(serde_json::json!({"kind": "test"})).unwrap();
        let (spec, back) = NetParams::from_json(&text).unwrap();
        assert_eq!(spec["kind"], "test");
        assert_eq!(back, p);
    }

    #[test]
    fn corrupt_document_rejected() {
        let bad = r#"{"spec": null, "layers": [{"name": "w", "shape": [2], "data": "AAAA"}]}"#;
        assert!(NetParams::from_json(bad).is_err());
    }

    #[test]
    fn truncated_normal_bounds() {
        let mut rng = RngKey::new(1).rng();
        let t = truncated_normal(&mut rng, &[1000, 1], 0.5);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn flat_round_trip() {
        let p = sample_params();
        let f: Vec<f64> = p.flat().iter().map(|v| v + 1.0).collect();
        assert_eq!(p.with_flat(&f).flat(), f);
    }
}
