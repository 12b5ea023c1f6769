use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "cycle,iter,stage,env,L_r,L_p,L_kl,L_mmd,L_t,L_pt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pred,
    Recon,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pred => "pred",
            Stage::Recon => "recon",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred" => Ok(Stage::Pred),
            "recon" => Ok(Stage::Recon),
            "eval" => Ok(Stage::Eval),
            _ => Err(Error::Invalid(format!("unknown stage {s:?}"))),
        }
    }
}

/// One metrics line. Losses that a stage does not define are `None` and
/// serialize as empty cells. For eval rows `l_t`/`l_pt` are from `env` to
/// the other environment.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub cycle: u64,
    pub iter: u64,
    pub stage: Stage,
    pub env: String,
    pub l_r: Option<f64>,
    pub l_p: Option<f64>,
    pub l_kl: Option<f64>,
    pub l_mmd: Option<f64>,
    pub l_t: Option<f64>,
    pub l_pt: Option<f64>,
}

impl MetricRow {
    pub fn new(cycle: u64, iter: u64, stage: Stage, env: &str) -> Self {
        Self {
            cycle,
            iter,
            stage,
            env: env.to_string(),
            l_r: None,
            l_p: None,
            l_kl: None,
            l_mmd: None,
            l_t: None,
            l_pt: None,
        }
    }

    fn values(&self) -> [Option<f64>; 6] {
        [
            self.l_r, self.l_p, self.l_kl, self.l_mmd, self.l_t, self.l_pt,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let mut s = format!(
            "{},{},{},{}",
            self.cycle,
            self.iter,
            self.stage.name(),
            self.env
        );
        for v in self.values() {
            s.push(',');
            if let Some(v) = v {
                write!(s, "{v}").expect("write to string");
            }
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Invalid(format!("metrics line {line:?}: {m}"));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 10 {
            return Err(bad(format!("expected 10 cells, got {}", cells.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(e.to_string()));
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| bad(e.to_string()))
            }
        };
        Ok(Self {
            cycle: int(cells[0])?,
            iter: int(cells[1])?,
            stage: cells[2].parse()?,
            env: cells[3].to_string(),
            l_r: opt(cells[4])?,
            l_p: opt(cells[5])?,
            l_kl: opt(cells[6])?,
            l_mmd: opt(cells[7])?,
            l_t: opt(cells[8])?,
            l_pt: opt(cells[9])?,
        })
    }
}

/// Header plus one line per row, newline-terminated.
pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => {
            return Err(Error::Invalid(format!(
                "metrics header mismatch: {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.is_empty())
        .map(MetricRow::parse)
        .collect()
}
