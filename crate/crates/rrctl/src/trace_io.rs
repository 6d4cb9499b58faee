//! CSV serialization of simulation traces.
//!
//! Columns: `t,th1,th2,th1d,th2d,tau1,tau2`, then the optional reference,
//! estimate and parameter-estimate groups. Floats are written in shortest
//! round-trip form so that reading a file back gives identical bits.

use std::io::{Read, Write};
use std::path::Path;

use rrbot_core::dynamics::{JointTorque, LumpedParams, State};
use rrbot_core::plant::SimTrace;

use crate::{Error, Result};

const BASE: [&str; 7] = ["t", "th1", "th2", "th1d", "th2d", "tau1", "tau2"];
const REF: [&str; 4] = ["ref_th1", "ref_th2", "ref_th1d", "ref_th2d"];
const XHAT: [&str; 4] = ["xhat1", "xhat2", "xhat3", "xhat4"];
const ALPHA: [&str; 5] = ["alpha1", "alpha2", "alpha3", "alpha4", "alpha5"];

pub fn header(trace: &SimTrace) -> Vec<&'static str> {
    let mut cols = BASE.to_vec();
    if trace.references.is_some() {
        cols.extend(REF);
    }
    if trace.estimates.is_some() {
        cols.extend(XHAT);
    }
    if trace.adaptive_params.is_some() {
        cols.extend(ALPHA);
    }
    cols
}

pub fn write_trace<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(trace))?;
    let mut buf = ryu::Buffer::new();
    let mut row: Vec<String> = Vec::new();
    for i in 0..trace.len() {
        row.clear();
        let u = trace.torques[i];
        let mut vals = vec![trace.times[i]];
        vals.extend(trace.states[i].to_array());
        vals.extend([u.tau1, u.tau2]);
        if let Some(r) = &trace.references {
            vals.extend(r[i].to_array());
        }
        if let Some(e) = &trace.estimates {
            vals.extend(e[i].to_array());
        }
        if let Some(a) = &trace.adaptive_params {
            vals.extend(a[i].0);
        }
        row.extend(vals.iter().map(|v| format_float(&mut buf, *v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn format_float(buf: &mut ryu::Buffer, v: f64) -> String {
    if v.is_finite() {
        buf.format_finite(v).to_string()
    } else {
        // ryu spells these NaN/inf; keep them parseable by `f64::from_str`.
        format!("{v}")
    }
}

pub fn save_trace(trace: &SimTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(trace, std::io::BufWriter::new(file))
}

/// Rebuild a trace from CSV. Counters not stored in the file (saturation,
/// projection, update and step counts) are left at zero.
pub fn read_trace<R: Read>(input: R) -> Result<SimTrace> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let cols: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let has = |group: &[&str]| -> Result<Option<usize>> {
        match cols.iter().position(|c| c == group[0]) {
            None => Ok(None),
            Some(p) if cols.len() >= p + group.len() && group.iter().enumerate().all(|(k, g)| cols[p + k] == *g) => {
                Ok(Some(p))
            }
            Some(_) => Err(Error::Trace(format!("incomplete column group starting at {}", group[0]))),
        }
    };
    if cols.len() < BASE.len() || cols[..BASE.len()] != BASE {
        return Err(Error::Trace(format!("unexpected header {cols:?}")));
    }
    let (ref_at, xhat_at, alpha_at) = (has(&REF)?, has(&XHAT)?, has(&ALPHA)?);
    let expected = BASE.len()
        + ref_at.map_or(0, |_| REF.len())
        + xhat_at.map_or(0, |_| XHAT.len())
        + alpha_at.map_or(0, |_| ALPHA.len());
    if cols.len() != expected {
        return Err(Error::Trace(format!("unexpected header {cols:?}")));
    }

    let mut trace = SimTrace {
        references: ref_at.map(|_| Vec::new()),
        estimates: xhat_at.map(|_| Vec::new()),
        adaptive_params: alpha_at.map(|_| Vec::new()),
        ..Default::default()
    };
    let state_at = |v: &[f64], p: usize| State::new(v[p], v[p + 1], v[p + 2], v[p + 3]);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Trace(format!("row {}: {e}", line + 2)))?;
        if v.len() != cols.len() {
            return Err(Error::Trace(format!("row {}: {} fields, expected {}", line + 2, v.len(), cols.len())));
        }
        trace.times.push(v[0]);
        trace.states.push(state_at(&v, 1));
        trace.torques.push(JointTorque::new(v[5], v[6]));
        if let (Some(p), Some(r)) = (ref_at, trace.references.as_mut()) {
            r.push(state_at(&v, p));
        }
        if let (Some(p), Some(e)) = (xhat_at, trace.estimates.as_mut()) {
            e.push(state_at(&v, p));
        }
        if let (Some(p), Some(a)) = (alpha_at, trace.adaptive_params.as_mut()) {
            a.push(LumpedParams([v[p], v[p + 1], v[p + 2], v[p + 3], v[p + 4]]));
        }
    }
    Ok(trace)
}

pub fn load_trace(path: &Path) -> Result<SimTrace> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(std::io::BufReader::new(file))
}
