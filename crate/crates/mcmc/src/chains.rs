use std::io::{Read, Write};
use std::path::Path;

use sbi_core::data::format_float;
use sbi_core::{Error, Result, Tensor};

/// Posterior draws: one `n_draws × dim` tensor per chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSet {
    pub names: Vec<String>,
    pub draws: Vec<Tensor>,
}

impl ChainSet {
    pub fn new(names: Vec<String>, draws: Vec<Tensor>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Contract("a chain set needs at least one chain".into()));
        }
        let (n, d) = (draws[0].rows(), draws[0].cols());
        if names.len() != d {
            return Err(Error::Contract(format!("{} names for {d} columns", names.len())));
        }
        for c in &draws {
            if c.rows() != n || c.cols() != d {
                return Err(Error::Contract("chains differ in shape".into()));
            }
            if !c.all_finite() {
                return Err(Error::Numeric("chain contains non-finite draws".into()));
            }
        }
        Ok(ChainSet { names, draws })
    }

    /// Default names `theta_0..`.
    pub fn unnamed(draws: Vec<Tensor>) -> Result<Self> {
        let d = draws.first().map_or(0, |t| t.cols());
        Self::new((0..d).map(|i| format!("theta_{i}")).collect(), draws)
    }

    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_draws(&self) -> usize {
        self.draws[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Draws of coordinate `j`, one vector per chain.
    pub fn param(&self, j: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.column_values(j)).collect()
    }

    /// All draws stacked chain after chain.
    pub fn pooled(&self) -> Tensor {
        let parts: Vec<&Tensor> = self.draws.iter().collect();
        Tensor::concat_rows(&parts).expect("chains share a shape")
    }

    pub fn mean(&self, j: usize) -> f64 {
        sbi_core::stats::mean(&self.pooled().column_values(j))
    }

    pub fn std(&self, j: usize) -> f64 {
        sbi_core::stats::variance(&self.pooled().column_values(j)).sqrt()
    }

    /// Apply `f` to every draw row.
    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<ChainSet> {
        let draws = self
            .draws
            .iter()
            .map(|c| {
                let rows: Vec<Vec<f64>> = (0..c.rows()).map(|i| f(c.row(i))).collect();
                Tensor::from_rows(&rows)
            })
            .collect::<Result<_>>()?;
        ChainSet::new(self.names.clone(), draws)
    }

    /// CSV with header `chain,draw,<names>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header).map_err(csv_err)?;
        for (c, t) in self.draws.iter().enumerate() {
            for i in 0..t.rows() {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(t.row(i).iter().map(|v| format_float(*v)));
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" {
            return Err(Error::Parse("expected header chain,draw,<params>".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let c: usize = rec[0].parse().map_err(|e| Error::Parse(format!("chain index: {e}")))?;
            let row = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if c > chains.len() {
                return Err(Error::Parse("chains must appear in order".into()));
            }
            if c == chains.len() {
                chains.push(Vec::new());
            }
            chains[c].push(row);
        }
        let draws = chains.iter().map(|rows| Tensor::from_rows(rows)).collect::<Result<_>>()?;
        ChainSet::new(names, draws)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
