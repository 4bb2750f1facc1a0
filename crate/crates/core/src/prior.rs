use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{Distribution, Error, Result, RngKey, Support, Tensor};

/// Named map parameter-name → `n × dim` matrix, in prior order.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ThetaBatch {
    entries: IndexMap<String, Tensor>,
}

impl ThetaBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut b = ThetaBatch::new();
        for (name, t) in entries {
            b.insert(name, t)?;
        }
        Ok(b)
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Tensor) -> Result<()> {
        let name = name.into();
        if values.shape().len() != 2 {
            return Err(Error::Contract(format!("theta entry {name} must be a matrix")));
        }
        if let Some(n) = self.len_rows() {
            if values.rows() != n {
                return Err(Error::Contract(format!(
                    "theta entry {name} has {} rows, expected {n}",
                    values.rows()
                )));
            }
        }
        if self.entries.insert(name.clone(), values).is_some() {
            return Err(Error::Contract(format!("duplicate theta entry {name}")));
        }
        Ok(())
    }

    fn len_rows(&self) -> Option<usize> {
        self.entries.values().next().map(|t| t.rows())
    }

    /// Number of rows (0 for an empty batch).
    pub fn n(&self) -> usize {
        self.len_rows().unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `(name, dim)` pairs in order.
    pub fn layout(&self) -> Vec<(String, usize)> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.cols())).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.entries.values().map(|t| t.cols()).sum()
    }

    /// Concatenate the entries column-wise in insertion order.
    pub fn flatten(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.entries.values().collect();
        if parts.is_empty() {
            return Tensor::zeros(&[0, 0]);
        }
        Tensor::concat_cols(&parts).expect("entries share row count")
    }

    /// Inverse of [`flatten`](Self::flatten) for a given layout.
    pub fn unflatten(flat: &Tensor, layout: &[(String, usize)]) -> Result<Self> {
        let total: usize = layout.iter().map(|(_, d)| d).sum();
        if flat.cols() != total {
            return Err(Error::Contract(format!(
                "flat theta has {} columns, layout needs {total}",
                flat.cols()
            )));
        }
        let mut out = ThetaBatch::new();
        let mut start = 0;
        for (name, d) in layout {
            out.insert(name.clone(), flat.slice_cols(start, start + d))?;
            start += d;
        }
        Ok(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        ThetaBatch {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.select_rows(idx)))
                .collect(),
        }
    }

    pub fn concat_rows(a: &Self, b: &Self) -> Result<Self> {
        if a.layout() != b.layout() {
            return Err(Error::Contract(format!(
                "theta layouts differ: {:?} vs {:?}",
                a.layout(),
                b.layout()
            )));
        }
        let mut out = ThetaBatch::new();
        for (k, v) in &a.entries {
            out.insert(k.clone(), Tensor::concat_rows(&[v, &b.entries[k]])?)?;
        }
        Ok(out)
    }
}

/// Ordered product of named marginals, π(θ) = Π π_k(θ_k).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    marginals: IndexMap<String, Distribution>,
}

impl PriorSpec {
    pub fn new(marginals: Vec<(&str, Distribution)>) -> Result<Self> {
        let mut map = IndexMap::new();
        for (name, d) in marginals {
            d.validate()?;
            if map.insert(name.to_string(), d).is_some() {
                return Err(Error::Config(format!("duplicate prior name {name}")));
            }
        }
        if map.is_empty() {
            return Err(Error::Config("prior needs at least one marginal".into()));
        }
        Ok(PriorSpec { marginals: map })
    }

    pub fn marginals(&self) -> impl Iterator<Item = (&str, &Distribution)> {
        self.marginals.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_dim(&self) -> usize {
        self.marginals.values().map(|d| d.event_dim()).sum()
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        self.marginals
            .iter()
            .map(|(k, d)| (k.clone(), d.event_dim()))
            .collect()
    }

    /// Flattened-coordinate names, `<name>_<i>`.
    pub fn coordinate_names(&self) -> Vec<String> {
        self.layout()
            .iter()
            .flat_map(|(n, d)| (0..*d).map(move |i| format!("{n}_{i}")))
            .collect()
    }

    /// Support of every flattened coordinate.
    pub fn supports(&self) -> Vec<Support> {
        self.marginals.values().flat_map(|d| d.support()).collect()
    }

    /// `n` independent draws; marginal `k` uses `fold_in(key, k)`.
    pub fn sample(&self, key: RngKey, n: usize) -> Result<ThetaBatch> {
        if n == 0 {
            return Err(Error::Contract("prior_sample needs n >= 1".into()));
        }
        let mut out = ThetaBatch::new();
        for (k, (name, d)) in self.marginals.iter().enumerate() {
            d.validate()?;
            let mut rng = key.fold_in(k as u64).rng();
            out.insert(name.clone(), d.sample(&mut rng, n))?;
        }
        Ok(out)
    }

    /// Sum of marginal log-densities per row.
    pub fn log_prob(&self, theta: &ThetaBatch) -> Result<Vec<f64>> {
        if theta.layout() != self.layout() {
            return Err(Error::Contract(format!(
                "theta layout {:?} does not match prior {:?}",
                theta.layout(),
                self.layout()
            )));
        }
        let n = theta.n();
        let mut lp = vec![0.0; n];
        for (name, d) in &self.marginals {
            let t = &theta.entries[name];
            for (i, acc) in lp.iter_mut().enumerate() {
                *acc += d.log_prob(t.row(i));
            }
        }
        Ok(lp)
    }

    /// Log-density of a single flattened parameter vector.
    pub fn log_prob_flat(&self, theta: &[f64]) -> f64 {
        let mut start = 0;
        let mut lp = 0.0;
        for d in self.marginals.values() {
            let k = d.event_dim();
            lp += d.log_prob(&theta[start..start + k]);
            start += k;
        }
        lp
    }

    pub fn unflatten(&self, flat: &Tensor) -> Result<ThetaBatch> {
        ThetaBatch::unflatten(flat, &self.layout())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian_prior() -> PriorSpec {
        PriorSpec::new(vec![
            ("mean", Distribution::normal_iid(2, 0.0, 1.0)),
            ("scale", Distribution::half_normal(1.0)),
        ])
        .unwrap()
    }

    #[test]
    fn uniform_box_samples() {
        let p = PriorSpec::new(vec![("theta", Distribution::uniform_iid(5, -3.0, 3.0))]).unwrap();
        let th = p.sample(RngKey::new(1), 10_000).unwrap();
        let t = th.get("theta").unwrap();
        assert!(t.data().iter().all(|v| (-3.0..=3.0).contains(v)));
        for m in t.column_means() {
            assert!(m.abs() < 0.1);
        }
        let zero = ThetaBatch::from_entries(vec![("theta".into(), Tensor::zeros(&[1, 5]))]).unwrap();
        let lp = p.log_prob(&zero).unwrap()[0];
        assert!((lp - 5.0 * (1.0f64 / 6.0).ln()).abs() < 1e-12);
        let mut out = Tensor::zeros(&[1, 5]);
        out.set(0, 0, 4.0);
        let th = ThetaBatch::from_entries(vec![("theta".into(), out)]).unwrap();
        assert_eq!(p.log_prob(&th).unwrap()[0], f64::NEG_INFINITY);
    }

    #[test]
    fn shape_and_names() {
        let p = PriorSpec::new(vec![("mean", Distribution::normal_iid(2, 0.0, 1.0))]).unwrap();
        let th = p.sample(RngKey::new(0), 1).unwrap();
        assert_eq!(th.get("mean").unwrap().shape(), &[1, 2]);
        assert_eq!(gaussian_prior().total_dim(), 3);
        assert_eq!(gaussian_prior().coordinate_names(), vec!["mean_0", "mean_1", "scale_0"]);
    }

    #[test]
    fn joint_log_prob_closed_form() {
        let p = gaussian_prior();
        let th = ThetaBatch::from_entries(vec![
            ("mean".into(), Tensor::zeros(&[1, 2])),
            ("scale".into(), Tensor::full(&[1, 1], 1.0)),
        ])
        .unwrap();
        let expected = -(2.0 * PI).ln() + ((2.0 / PI).sqrt() * (-0.5f64).exp()).ln();
        assert!((p.log_prob(&th).unwrap()[0] - expected).abs() < 1e-12);
        assert!((p.log_prob_flat(&[0.0, 0.0, 1.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn mismatched_names_rejected() {
        let p = gaussian_prior();
        let th = ThetaBatch::from_entries(vec![("mu".into(), Tensor::zeros(&[1, 2]))]).unwrap();
        assert!(matches!(p.log_prob(&th), Err(Error::Contract(_))));
        assert!(PriorSpec::new(vec![
            ("a", Distribution::normal(0.0, 1.0)),
            ("a", Distribution::normal(0.0, 1.0))
        ])
        .is_err());
    }

    #[test]
    fn deterministic_and_consistent() {
        let p = gaussian_prior();
        let a = p.sample(RngKey::new(3), 50).unwrap();
        let b = p.sample(RngKey::new(3), 50).unwrap();
        assert_eq!(a, b);
        assert!(p.log_prob(&a).unwrap().iter().all(|v| v.is_finite()));
        let flat = a.flatten();
        assert_eq!(p.unflatten(&flat).unwrap(), a);
    }
}
