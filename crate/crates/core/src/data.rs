//! The paired `(y, θ)` training corpus and its CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, RngKey, Tensor, ThetaBatch};

/// Simulated pairs: row `i` of `y` was generated from row `i` of `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Tensor,
    pub theta: ThetaBatch,
}

/// Shortest representation that parses back to the identical `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

impl Dataset {
    pub fn new(y: Tensor, theta: ThetaBatch) -> Result<Self> {
        if y.shape().len() != 2 {
            return Err(Error::Contract("y must be a matrix".into()));
        }
        if y.rows() != theta.n() {
            return Err(Error::Contract(format!(
                "y has {} rows but theta has {}",
                y.rows(),
                theta.n()
            )));
        }
        Ok(Dataset { y, theta })
    }

    pub fn n(&self) -> usize {
        self.y.rows()
    }

    pub fn y_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select_rows(idx),
            theta: self.theta.select_rows(idx),
        }
    }

    /// Drop rows whose `y` contains NaN or ±inf; returns the number dropped.
    pub fn drop_non_finite(self) -> (Dataset, usize) {
        let keep: Vec<usize> = (0..self.n())
            .filter(|&i| self.y.row(i).iter().all(|v| v.is_finite()))
            .collect();
        let dropped = self.n() - keep.len();
        if dropped == 0 {
            return (self, 0);
        }
        log::warn!("dropping {dropped} simulated rows with non-finite entries");
        (self.select_rows(&keep), dropped)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.y_dim()).map(|i| format!("y_{i}")).collect();
        for (name, d) in self.theta.layout() {
            h.extend((0..d).map(|i| format!("{name}_{i}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let flat = self.theta.flatten();
        for i in 0..self.n() {
            let rec: Vec<String> = self
                .y
                .row(i)
                .iter()
                .chain(flat.row(i))
                .map(|&v| format_float(v))
                .collect();
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Parse a CSV written by [`write_csv`](Self::write_csv). The theta
    /// layout is recovered from the `<name>_<i>` header columns.
    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
        let mut layout: Vec<(String, usize)> = Vec::new();
        let mut y_dim = 0;
        for col in &header {
            let (name, idx) = col
                .rsplit_once('_')
                .ok_or_else(|| Error::Parse(format!("bad column name {col}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad column index in {col}")))?;
            if name == "y" && layout.is_empty() {
                if idx != y_dim {
                    return Err(Error::Parse(format!("y columns out of order at {col}")));
                }
                y_dim += 1;
                continue;
            }
            match layout.last_mut() {
                Some((last, d)) if last == name => {
                    if idx != *d {
                        return Err(Error::Parse(format!("columns out of order at {col}")));
                    }
                    *d += 1;
                }
                _ => {
                    if idx != 0 {
                        return Err(Error::Parse(format!("columns out of order at {col}")));
                    }
                    layout.push((name.to_string(), 1));
                }
            }
        }
        let theta_dim: usize = layout.iter().map(|(_, d)| d).sum();
        let (mut ys, mut ts) = (Vec::new(), Vec::new());
        let mut n = 0;
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse("ragged CSV row".into()));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad float {field:?}")))?;
                if j < y_dim {
                    ys.push(v);
                } else {
                    ts.push(v);
                }
            }
            n += 1;
        }
        let theta = ThetaBatch::unflatten(&Tensor::matrix(n, theta_dim, ts), &layout)?;
        Dataset::new(Tensor::matrix(n, y_dim, ys), theta)
    }
}

/// Row-wise concatenation; `a`'s rows come first. `None` returns `b`.
pub fn stack_data(a: Option<&Dataset>, b: Dataset) -> Result<Dataset> {
    let Some(a) = a else { return Ok(b) };
    if a.y_dim() != b.y_dim() {
        return Err(Error::Contract(format!(
            "y dims differ: {} vs {}",
            a.y_dim(),
            b.y_dim()
        )));
    }
    let theta = ThetaBatch::concat_rows(&a.theta, &b.theta)?;
    let y = Tensor::concat_rows(&[&a.y, &b.y])?;
    Dataset::new(y, theta)
}

/// Random disjoint split; the validation part has `round(fraction · n)`
/// rows (at least one, and the training part keeps at least one).
pub fn split_train_val(d: &Dataset, fraction: f64, key: RngKey) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "validation fraction {fraction} not in (0, 1)"
        )));
    }
    let n = d.n();
    if n < 2 {
        return Err(Error::Contract(format!("cannot split {n} rows")));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let perm = permutation(key, n);
    let (val_idx, train_idx) = perm.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((d.select_rows(&train_idx), d.select_rows(&val_idx)))
}

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn permutation(key: RngKey, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut key.rng());
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize, offset: f64) -> Dataset {
        let y = Tensor::matrix(n, 2, (0..2 * n).map(|i| i as f64 + offset).collect());
        let theta = ThetaBatch::from_entries(vec![
            ("mean".into(), Tensor::matrix(n, 1, (0..n).map(|i| -(i as f64)).collect())),
            ("scale".into(), Tensor::matrix(n, 1, (0..n).map(|i| 0.5 * i as f64).collect())),
        ])
        .unwrap();
        Dataset::new(y, theta).unwrap()
    }

    #[test]
    fn stack_contract() {
        let d = toy(5, 0.0);
        assert_eq!(stack_data(None, d.clone()).unwrap(), d);
        let a = toy(100, 0.0);
        let b = toy(50, 1000.0);
        let s = stack_data(Some(&a), b.clone()).unwrap();
        assert_eq!(s.n(), 150);
        let first: Vec<usize> = (0..100).collect();
        assert_eq!(s.select_rows(&first), a);
        let rest: Vec<usize> = (100..150).collect();
        assert_eq!(s.select_rows(&rest), b);
    }

    #[test]
    fn stack_schema_mismatch() {
        let a = toy(3, 0.0);
        let mut b = toy(3, 0.0);
        b.y = Tensor::zeros(&[3, 4]);
        assert!(stack_data(Some(&a), b).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = toy(10, 0.0);
        let (tr, va) = split_train_val(&d, 0.1, RngKey::new(1)).unwrap();
        assert_eq!((tr.n(), va.n()), (9, 1));
        let (tr2, va2) = split_train_val(&d, 0.1, RngKey::new(1)).unwrap();
        assert_eq!((tr.clone(), va.clone()), (tr2, va2));
        let mut all: Vec<f64> = tr.y.data().iter().chain(va.y.data()).cloned().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig = d.y.data().to_vec();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
        assert!(split_train_val(&toy(1, 0.0), 0.5, RngKey::new(0)).is_err());
        assert!(split_train_val(&d, 1.0, RngKey::new(0)).is_err());
    }

    #[test]
    fn non_finite_rows_dropped() {
        let mut d = toy(4, 0.0);
        d.y.set(2, 1, f64::NAN);
        d.y.set(3, 0, f64::INFINITY);
        let (clean, dropped) = d.drop_non_finite();
        assert_eq!((clean.n(), dropped), (2, 2));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(-1e300f64..1e300, 12)) {
            let y = Tensor::matrix(3, 2, vals[..6].to_vec());
            let theta = ThetaBatch::from_entries(vec![
                ("a".into(), Tensor::matrix(3, 1, vals[6..9].to_vec())),
                ("b_c".into(), Tensor::matrix(3, 1, vals[9..].to_vec())),
            ]).unwrap();
            let d = Dataset::new(y, theta).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = Dataset::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, d);
        }
    }

    #[test]
    fn csv_header_layout() {
        let mut buf = Vec::new();
        toy(1, 0.0).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("y_0,y_1,mean_0,scale_0\n"));
    }
}
