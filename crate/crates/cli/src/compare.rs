//! Cross-seed aggregation of evaluation curves.

use std::io::Write;

use hypermix::training::MetricRecord;

use crate::CliError;

/// Linear-interpolation percentile (type 7) of unsorted data, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub mixer: String,
    pub episode: u64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Per-evaluation median and quartiles of success rate across seeds.
///
/// Every seed of a mixer must have been evaluated at the same episodes.
pub fn aggregate(mixer: &str, runs: &[Vec<MetricRecord>]) -> Result<Vec<CurvePoint>, CliError> {
    let first = runs
        .first()
        .ok_or_else(|| CliError::Alignment(format!("{mixer}: no runs to aggregate")))?;
    let grid: Vec<u64> = first.iter().map(|r| r.episode).collect();
    for (i, run) in runs.iter().enumerate() {
        let g: Vec<u64> = run.iter().map(|r| r.episode).collect();
        if g != grid {
            return Err(CliError::Alignment(format!(
                "{mixer}: run {i} evaluated at episodes {g:?}, run 0 at {grid:?}"
            )));
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &episode)| {
            let vals: Vec<f64> = runs.iter().map(|r| r[k].success_rate).collect();
            CurvePoint {
                mixer: mixer.to_string(),
                episode,
                median: percentile(&vals, 0.5),
                p25: percentile(&vals, 0.25),
                p75: percentile(&vals, 0.75),
            }
        })
        .collect())
}

pub fn write_csv<W: Write>(points: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "mixer,episode,median,p25,p75")?;
    for p in points {
        writeln!(out, "{},{},{},{},{}", p.mixer, p.episode, p.median, p.p25, p.p75)?;
    }
    Ok(())
}
