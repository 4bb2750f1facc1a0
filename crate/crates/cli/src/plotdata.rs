//! Tidy CSVs for posterior and convergence plots.

use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use sbi_core::data::format_float;
use sbi_core::{Error, Result, Tensor};
use sbi_mcmc::{ess_bulk, ess_tail, rank_histograms, ChainSet, Diagnostics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    MarginalHist,
    PairGrid,
    Rank,
    EssEvolution,
    RhatRess,
}

/// Equal-width bin edges over `[min, max]`; a constant column gets a unit
/// width bin around its value.
fn edges(values: &[f64], bins: usize) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        (lo - 0.5, 1.0 / bins as f64)
    }
}

fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
}

pub fn marginal_hist<W: Write>(cs: &ChainSet, bins: usize, w: W) -> Result<()> {
    let pooled = cs.pooled();
    let n = pooled.rows() as f64;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["param", "bin", "lo", "hi", "count", "density"])?;
    for (j, name) in cs.names.iter().enumerate() {
        let col = pooled.column_values(j);
        let (lo, width) = edges(&col, bins);
        let mut counts = vec![0usize; bins];
        for v in &col {
            counts[bin_of(*v, lo, width, bins)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            out.write_record([
                name.clone(),
                b.to_string(),
                format_float(lo + b as f64 * width),
                format_float(lo + (b + 1) as f64 * width),
                c.to_string(),
                format_float(*c as f64 / (n * width)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn pair_grid<W: Write>(cs: &ChainSet, bins: usize, w: W) -> Result<()> {
    let pooled = cs.pooled();
    let cols: Vec<Vec<f64>> = (0..cs.dim()).map(|j| pooled.column_values(j)).collect();
    let ranges: Vec<(f64, f64)> = cols.iter().map(|c| edges(c, bins)).collect();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "ix", "iy", "x_lo", "x_hi", "y_lo", "y_hi", "count"])?;
    for a in 0..cs.dim() {
        for b in a + 1..cs.dim() {
            let mut grid = vec![0usize; bins * bins];
            for i in 0..pooled.rows() {
                let ix = bin_of(cols[a][i], ranges[a].0, ranges[a].1, bins);
                let iy = bin_of(cols[b][i], ranges[b].0, ranges[b].1, bins);
                grid[ix * bins + iy] += 1;
            }
            let ((xl, xw), (yl, yw)) = (ranges[a], ranges[b]);
            for ix in 0..bins {
                for iy in 0..bins {
                    out.write_record([
                        cs.names[a].clone(),
                        cs.names[b].clone(),
                        ix.to_string(),
                        iy.to_string(),
                        format_float(xl + ix as f64 * xw),
                        format_float(xl + (ix + 1) as f64 * xw),
                        format_float(yl + iy as f64 * yw),
                        format_float(yl + (iy + 1) as f64 * yw),
                        grid[ix * bins + iy].to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn rank<W: Write>(cs: &ChainSet, bins: usize, w: W) -> Result<()> {
    let hist = rank_histograms(cs, bins);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["param", "chain", "bin", "count"])?;
    for (j, per_chain) in hist.iter().enumerate() {
        for (c, counts) in per_chain.iter().enumerate() {
            for (b, n) in counts.iter().enumerate() {
                out.write_record([cs.names[j].clone(), c.to_string(), b.to_string(), n.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Bulk and tail ESS on the first `n` draws of every chain, at `points`
/// evenly spaced values of `n`.
pub fn ess_evolution<W: Write>(cs: &ChainSet, points: usize, w: W) -> Result<()> {
    let n = cs.n_draws();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["param", "n_draws", "ess_bulk", "ess_tail"])?;
    let mut last = 0;
    for k in 1..=points {
        let m = (k * n).div_ceil(points);
        // Split chains need a few draws per half.
        if m < 8 || m == last {
            continue;
        }
        last = m;
        let prefix: Vec<Tensor> = (0..cs.n_chains()).map(|c| cs.draws[c].slice_rows(0, m)).collect();
        let sub = ChainSet::new(cs.names.clone(), prefix)?;
        let (bulk, tail) = (ess_bulk(&sub), ess_tail(&sub));
        for j in 0..cs.dim() {
            out.write_record([
                cs.names[j].clone(),
                (m * cs.n_chains()).to_string(),
                format_float(bulk[j]),
                format_float(tail[j]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn rhat_ress<W: Write>(d: &Diagnostics, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "param",
        "split_rhat",
        "ess_bulk",
        "ess_tail",
        "rel_ess",
        "rhat_ok",
        "rel_ess_ok",
    ])?;
    for (j, (name, rhat_ok, ress_ok)) in d.flags().into_iter().enumerate() {
        let rhat = d.split_rhat.as_ref().map(|r| format_float(r[j])).unwrap_or_default();
        out.write_record([
            name,
            rhat,
            format_float(d.ess_bulk[j]),
            format_float(d.ess_tail[j]),
            format_float(d.rel_ess[j]),
            rhat_ok.to_string(),
            ress_ok.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Whether a posterior file holds MCMC chains. The sidecar written next to
/// it decides; without one, more than one chain means MCMC.
fn is_mcmc(posterior: &Path, cs: &ChainSet) -> Result<bool> {
    let meta = posterior.with_extension("json");
    if meta.is_file() {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&meta)?).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(d) = v.get("diagnostics") {
            return Ok(d.get("split_rhat").is_some());
        }
    }
    Ok(cs.n_chains() > 1)
}

pub fn cmd_plotdata(posterior: &Path, kind: PlotKind, out: &Path, bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::Config("--bins must be >= 1".into()));
    }
    let cs = ChainSet::load(posterior)?;
    let w = fs::File::create(out)?;
    match kind {
        PlotKind::MarginalHist => marginal_hist(&cs, bins, w),
        PlotKind::PairGrid => pair_grid(&cs, bins, w),
        PlotKind::Rank => rank(&cs, bins, w),
        PlotKind::EssEvolution => ess_evolution(&cs, bins, w),
        PlotKind::RhatRess => {
            let d = if is_mcmc(posterior, &cs)? {
                Diagnostics::compute(&cs)
            } else {
                Diagnostics::ess_only(&cs)
            };
            rhat_ress(&d, w)
        }
    }
}
