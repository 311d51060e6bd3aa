//! Result JSON assembly and the benchmark record schema.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gorthant::{efficiency, Estimate};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The `prob` result document. `efficiency` is `null` (with the flag set)
/// when the variance is exactly zero.
pub fn estimate_json(est: &Estimate, config: serde_json::Value) -> serde_json::Value {
    let eff = efficiency(est.variance, est.wall_time);
    json!({
        "method": est.method,
        "p": est.p_hat,
        "pi_t": est.pi_t,
        "variance": est.variance,
        "std_error": est.variance.sqrt(),
        "q": est.q,
        "m_star": est.rq_part.m_inner,
        "acceptance_rate": est.rq_part.acceptance_rate,
        "time_s": est.wall_time,
        "efficiency": if eff.is_finite() { Some(eff) } else { None },
        "efficiency_infinite": !eff.is_finite(),
        "seed": est.seed,
        "config": config,
        "version": VERSION,
        "flags": {
            "degenerate_bounds": est.pq_part.degenerate,
            "budget_exhausted": est.rq_part.budget_exhausted,
            "q_exhausted": est.q_exhausted,
        },
    })
}

/// Writes a JSON document to `--out` or stdout.
pub fn emit_json(out: &Option<PathBuf>, doc: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

/// One benchmark row. `param` is the swept quantity (`m` for `bench-m`,
/// `d` for `bench-d`); `rep` is the replication number or a summary tag
/// (`p25`, `p50`, `p75`, `eff-ratio-vs-MC-p50`). Column order is fixed:
/// method, param, rep, estimate, variance, time_s, efficiency, q, m_star,
/// acceptance_rate, seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRecord {
    pub method: String,
    pub param: u64,
    pub rep: String,
    pub estimate: f64,
    pub variance: f64,
    pub time_s: f64,
    pub efficiency: Option<f64>,
    pub q: u64,
    pub m_star: u64,
    pub acceptance_rate: f64,
    pub seed: u64,
}

impl BenchRecord {
    pub fn from_estimate(method: &str, param: u64, rep: usize, est: &Estimate) -> Self {
        let eff = est.efficiency();
        Self {
            method: method.to_string(),
            param,
            rep: rep.to_string(),
            estimate: est.p_hat,
            variance: est.variance,
            time_s: est.wall_time,
            efficiency: eff.is_finite().then_some(eff),
            q: est.q as u64,
            m_star: est.rq_part.m_inner as u64,
            acceptance_rate: est.rq_part.acceptance_rate,
            seed: est.seed,
        }
    }
}

pub fn write_records(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Appends per-(method, param) quantile rows over the replication records.
pub fn append_summaries(records: &mut Vec<BenchRecord>) {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, u64), Vec<BenchRecord>> = BTreeMap::new();
    for r in records.iter() {
        if r.rep.parse::<usize>().is_ok() {
            groups.entry((r.method.clone(), r.param)).or_default().push(r.clone());
        }
    }
    for ((method, param), rows) in groups {
        for (tag, p) in [("p25", 0.25), ("p50", 0.5), ("p75", 0.75)] {
            let col = |f: &dyn Fn(&BenchRecord) -> f64| -> f64 {
                let mut v: Vec<f64> = rows.iter().map(f).filter(|x| x.is_finite()).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                quantile(&v, p)
            };
            records.push(BenchRecord {
                method: method.clone(),
                param,
                rep: tag.to_string(),
                estimate: col(&|r| r.estimate),
                variance: col(&|r| r.variance),
                time_s: col(&|r| r.time_s),
                efficiency: {
                    let v = col(&|r| r.efficiency.unwrap_or(f64::INFINITY));
                    v.is_finite().then_some(v)
                },
                q: col(&|r| r.q as f64).round() as u64,
                m_star: col(&|r| r.m_star as f64).round() as u64,
                acceptance_rate: col(&|r| r.acceptance_rate),
                seed: 0,
            });
        }
    }
}

/// Median efficiency of a (method, param) group from replication rows.
pub fn median_efficiency(records: &[BenchRecord], method: &str, param: u64) -> f64 {
    let mut v: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method && r.param == param && r.rep.parse::<usize>().is_ok())
        .map(|r| r.efficiency.unwrap_or(f64::INFINITY))
        .filter(|x| x.is_finite())
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&v, 0.5)
}
