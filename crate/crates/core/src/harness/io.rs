//! File formats: networks and results as JSON, node estimates and fusion
//! traces as CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FusionContext, FusionNode, HarnessError};
use crate::consensus::FusionReport;
use crate::estimator::{InversionError, LocalEstimate};
use crate::field::GaussianParams;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// One line of the estimates file. Parameter and quality columns are empty
/// for nodes whose inversion failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
    pub failure: Option<InversionError>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub s_c1: Option<f64>,
    pub s_c2: Option<f64>,
    pub s_center: Option<f64>,
    pub sigma2: f64,
}

impl EstimateRow {
    pub fn params_global(&self) -> Option<GaussianParams> {
        match (self.valid, self.c1, self.c2, self.m1, self.m2) {
            (true, Some(c1), Some(c2), Some(m1), Some(m2)) => {
                GaussianParams::new(c1, c2, m1, m2).ok()
            }
            _ => None,
        }
    }
}

pub fn estimate_rows(
    ctx: &FusionContext,
    estimates: &[LocalEstimate],
    nodes: &[FusionNode],
    sigma2: f64,
) -> Vec<EstimateRow> {
    estimates
        .iter()
        .zip(nodes)
        .map(|(e, n)| {
            let [x, y] = ctx.net.node(e.node);
            let g = e.params_global.map(|p| p.to_array());
            let finite = |v: f64| v.is_finite().then_some(v);
            let valid = g.is_some();
            EstimateRow {
                node: e.node,
                x,
                y,
                valid,
                failure: e.failure,
                c1: g.map(|g| g[0]),
                c2: g.map(|g| g[1]),
                m1: g.map(|g| g[2]),
                m2: g.map(|g| g[3]),
                s_c1: finite(n.quality[0]).filter(|_| valid),
                s_c2: finite(n.quality[1]).filter(|_| valid),
                s_center: finite(n.quality[2]).filter(|_| valid),
                sigma2,
            }
        })
        .collect()
}

pub fn write_estimates_csv<W: Write>(w: W, rows: &[EstimateRow]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_estimates_csv<R: Read>(r: R) -> Result<Vec<EstimateRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub node: usize,
    pub channel: String,
    pub x: f64,
    pub s: Option<f64>,
}

/// Flattens recorded traces. `node_ids[k]` is the network id of fusion node
/// `k`. Reports without a trace contribute nothing.
pub fn trace_rows(node_ids: &[usize], reports: &[(&str, &FusionReport)]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for (channel, report) in reports {
        for snap in report.trace.iter().flatten() {
            for (k, &x) in snap.x.iter().enumerate() {
                rows.push(TraceRow {
                    t: snap.t,
                    node: node_ids[k],
                    channel: channel.to_string(),
                    x,
                    s: snap.s.get(k).copied(),
                });
            }
        }
    }
    rows
}

pub fn write_trace_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
