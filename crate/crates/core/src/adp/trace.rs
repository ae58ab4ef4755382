use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    Densify,
    Prune,
    Stop,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceEvent::Densify => "densify",
            TraceEvent::Prune => "prune",
            TraceEvent::Stop => "stop",
        })
    }
}

/// One row of the controller trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(rename = "L_r")]
    pub l_r: f64,
    #[serde(rename = "L_KL")]
    pub l_kl: Option<f64>,
    #[serde(rename = "L_E")]
    pub l_e: Option<f64>,
    pub ema: Option<f64>,
    pub delta_t: Option<f64>,
    pub n_gs: usize,
    pub event: Option<TraceEvent>,
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![
            TraceRow {
                iteration: 1,
                l_r: 0.5,
                l_kl: Some(1.0),
                l_e: Some(-1.5),
                ema: Some(-1.5),
                delta_t: None,
                n_gs: 10,
                event: None,
            },
            TraceRow {
                iteration: 2,
                l_r: 0.4,
                l_kl: None,
                l_e: None,
                ema: None,
                delta_t: None,
                n_gs: 8,
                event: Some(TraceEvent::Prune),
            },
        ];
        write_trace(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,L_r,L_KL,L_E,ema,delta_t,n_gs,event"
        );
        assert_eq!(lines.next().unwrap(), "1,0.5,1.0,-1.5,-1.5,,10,");
        assert_eq!(lines.next().unwrap(), "2,0.4,,,,,8,prune");
    }
}
