//! Report files: delimited tables with a `#` metadata preamble, either
//! wide (one column per field) or long-form `series,x,y`.

use std::path::Path;

use super::intrinsic::IntrinsicReport;
use super::measure::{RobustnessReport, RobustnessRow, TransferReport, TransferRow, ROBUSTNESS_METRIC};
use crate::error::{Error, Result};

/// Version of the report file layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Delimited,
    PlotTable,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delimited" => Ok(Self::Delimited),
            "plot-table" => Ok(Self::PlotTable),
            _ => Err(Error::Config(format!("unknown report format '{s}' (delimited|plot-table)"))),
        }
    }
}

/// A report as metadata plus a header and string rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub const TRANSFER_HEADER: [&str; 5] = ["mode", "center_hz", "half_width_hz", "retention", "probes_used"];
pub const ROBUSTNESS_HEADER: [&str; 5] = ["mode", "ratio", "score", "drop", "bands_used"];
pub const INTRINSIC_HEADER: [&str; 6] = ["mode", "checkpoint_id", "clips", "snr_db", "mel_distance", "token_mse"];
pub const PLOT_HEADER: [&str; 3] = ["series", "x", "y"];

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn meta_common(config_hash: &str, checkpoints: &[(String, String)], probe_set: &str) -> Vec<(String, String)> {
    let mut m = vec![
        ("config_hash".to_string(), config_hash.to_string()),
        ("probe_set".to_string(), probe_set.to_string()),
    ];
    for (mode, id) in checkpoints {
        m.push((format!("checkpoint.{mode}"), id.clone()));
    }
    m
}

impl TransferReport {
    pub fn to_table(&self, config_hash: &str) -> ReportTable {
        let mut meta = meta_common(config_hash, &self.checkpoints, &self.probe_set);
        meta.push(("metric".into(), "output/input band energy ratio".into()));
        for (i, r) in self.rejected.iter().enumerate() {
            meta.push((format!("rejected.{i}"), r.clone()));
        }
        ReportTable {
            kind: "transfer".into(),
            meta,
            header: TRANSFER_HEADER.iter().map(|s| s.to_string()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.mode.clone(),
                        f(r.center_hz),
                        f(r.half_width_hz),
                        f(r.retention),
                        r.probes_used.to_string(),
                    ]
                })
                .collect(),
        }
    }

    pub fn from_table(t: &ReportTable) -> Result<Self> {
        t.expect("transfer", &TRANSFER_HEADER)?;
        let rows = t
            .rows
            .iter()
            .map(|r| {
                Ok(TransferRow {
                    mode: r[0].clone(),
                    center_hz: num(&r[1])?,
                    half_width_hz: num(&r[2])?,
                    retention: num(&r[3])?,
                    probes_used: int(&r[4])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            checkpoints: t.checkpoints(),
            probe_set: t.meta_value("probe_set").unwrap_or_default(),
            rows,
            rejected: t.meta_list("rejected."),
        })
    }

    /// Long-form series `retention/<mode>` over band centre.
    fn plot_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![format!("retention/{}", r.mode), f(r.center_hz), f(r.retention)])
            .collect()
    }
}

impl RobustnessReport {
    pub fn to_table(&self, config_hash: &str) -> ReportTable {
        let mut meta = meta_common(config_hash, &self.checkpoints, &self.probe_set);
        meta.push(("metric".into(), ROBUSTNESS_METRIC.into()));
        meta.push(("ratios".into(), self.ratios.iter().map(|r| f(*r)).collect::<Vec<_>>().join(" ")));
        for (i, w) in self.warnings.iter().enumerate() {
            meta.push((format!("warning.{i}"), w.clone()));
        }
        ReportTable {
            kind: "robustness".into(),
            meta,
            header: ROBUSTNESS_HEADER.iter().map(|s| s.to_string()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| vec![r.mode.clone(), f(r.ratio), f(r.score), f(r.drop), r.bands_used.to_string()])
                .collect(),
        }
    }

    pub fn from_table(t: &ReportTable) -> Result<Self> {
        t.expect("robustness", &ROBUSTNESS_HEADER)?;
        let rows = t
            .rows
            .iter()
            .map(|r| {
                Ok(RobustnessRow {
                    mode: r[0].clone(),
                    ratio: num(&r[1])?,
                    score: num(&r[2])?,
                    drop: num(&r[3])?,
                    bands_used: int(&r[4])?,
                })
            })
            .collect::<Result<_>>()?;
        let ratios = t
            .meta_value("ratios")
            .unwrap_or_default()
            .split_whitespace()
            .map(num)
            .collect::<Result<_>>()?;
        Ok(Self {
            checkpoints: t.checkpoints(),
            probe_set: t.meta_value("probe_set").unwrap_or_default(),
            ratios,
            rows,
            warnings: t.meta_list("warning."),
        })
    }

    fn plot_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![format!("score/{}", r.mode), f(r.ratio), f(r.score)])
            .collect()
    }
}

impl IntrinsicReport {
    pub fn to_table(reports: &[IntrinsicReport], config_hash: &str) -> ReportTable {
        ReportTable {
            kind: "intrinsic".into(),
            meta: vec![("config_hash".into(), config_hash.into())],
            header: INTRINSIC_HEADER.iter().map(|s| s.to_string()).collect(),
            rows: reports
                .iter()
                .map(|r| {
                    vec![
                        r.mode.clone(),
                        r.checkpoint_id.clone(),
                        r.clips.to_string(),
                        f(r.snr_db),
                        f(r.mel_distance),
                        r.token_mse.map(f).unwrap_or_default(),
                    ]
                })
                .collect(),
        }
    }

    pub fn from_table(t: &ReportTable) -> Result<Vec<Self>> {
        t.expect("intrinsic", &INTRINSIC_HEADER)?;
        t.rows
            .iter()
            .map(|r| {
                Ok(IntrinsicReport {
                    mode: r[0].clone(),
                    checkpoint_id: r[1].clone(),
                    clips: int(&r[2])?,
                    snr_db: num(&r[3])?,
                    mel_distance: num(&r[4])?,
                    token_mse: if r[5].is_empty() { None } else { Some(num(&r[5])?) },
                })
            })
            .collect()
    }
}

fn num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Config(format!("report field '{s}' is not a number")))
}

fn int(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Config(format!("report field '{s}' is not an integer")))
}

impl ReportTable {
    fn expect(&self, kind: &str, header: &[&str]) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!("expected a {kind} report, found {}", self.kind)));
        }
        if self.header != header {
            return Err(Error::Config(format!("unexpected {kind} header {:?}", self.header)));
        }
        if let Some(r) = self.rows.iter().find(|r| r.len() != header.len()) {
            return Err(Error::Config(format!("row {r:?} has the wrong number of fields")));
        }
        Ok(())
    }

    pub fn meta_value(&self, key: &str) -> Option<String> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
    }

    fn meta_list(&self, prefix: &str) -> Vec<String> {
        self.meta
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    fn checkpoints(&self) -> Vec<(String, String)> {
        self.meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("checkpoint.").map(|m| (m.to_string(), v.clone())))
            .collect()
    }

    /// Serialized bytes: `# tokenlab-report v1 kind=<kind>`, one
    /// `# key=value` line per metadata entry, then CSV.
    pub fn render(&self) -> Result<String> {
        let mut out = format!("# tokenlab-report v{REPORT_VERSION} kind={}\n", self.kind);
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={}\n", v.replace('\n', " ")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Config(format!("report serialization: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| Error::Config(format!("report serialization: {e}")))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().unwrap_or_default();
        let kind = first
            .strip_prefix("# tokenlab-report v")
            .and_then(|rest| rest.split_once(" kind="))
            .map(|(_, k)| k.to_string())
            .ok_or_else(|| Error::Config("missing tokenlab-report preamble".into()))?;
        let mut meta = Vec::new();
        let mut body = String::new();
        for line in lines {
            match line.strip_prefix("# ") {
                Some(m) if body.is_empty() => {
                    let (k, v) = m.split_once('=').unwrap_or((m, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                _ => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let io = |e: csv::Error| Error::Config(format!("report parse: {e}"));
        let header = rd.headers().map_err(io)?.iter().map(str::to_string).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(io))
            .collect::<Result<_>>()?;
        Ok(Self { kind, meta, header, rows })
    }
}

/// Any report the lab produces.
pub enum Report<'a> {
    Transfer(&'a TransferReport),
    Robustness(&'a RobustnessReport),
    Intrinsic(&'a [IntrinsicReport]),
}

impl Report<'_> {
    pub fn table(&self, format: ReportFormat, config_hash: &str) -> ReportTable {
        let wide = match self {
            Report::Transfer(r) => r.to_table(config_hash),
            Report::Robustness(r) => r.to_table(config_hash),
            Report::Intrinsic(r) => IntrinsicReport::to_table(r, config_hash),
        };
        match format {
            ReportFormat::Delimited => wide,
            ReportFormat::PlotTable => {
                let rows = match self {
                    Report::Transfer(r) => r.plot_rows(),
                    Report::Robustness(r) => r.plot_rows(),
                    Report::Intrinsic(r) => r
                        .iter()
                        .flat_map(|x| {
                            [
                                vec![format!("snr_db/{}", x.mode), "0".into(), f(x.snr_db)],
                                vec![format!("mel_distance/{}", x.mode), "0".into(), f(x.mel_distance)],
                            ]
                        })
                        .collect(),
                };
                ReportTable {
                    kind: format!("{}-plot", wide.kind),
                    meta: wide.meta,
                    header: PLOT_HEADER.iter().map(|s| s.to_string()).collect(),
                    rows,
                }
            }
        }
    }
}

/// Writes `report` to `path` in `format`, embedding `config_hash`.
pub fn emit_report(report: &Report, path: &Path, format: ReportFormat, config_hash: &str) -> Result<()> {
    let text = report.table(format, config_hash).render()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ReportTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ReportTable::parse(&text)
}
