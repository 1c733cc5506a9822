//! File adapters. Everything is converted to canonical units on ingest:
//! seconds for offsets, Kbps for bandwidth.
//!
//! The canonical format is one `offset_seconds,bandwidth_kbps` sample per line
//! with `#` comments. Vendor datasets (FCC broadband, LTE drive tests) are
//! delimited tables whose relevant columns are named by an [`AdapterConfig`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BandwidthTrace, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Canonical,
    Fcc,
    Lte,
}

impl std::str::FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(Self::Canonical),
            "fcc" => Ok(Self::Fcc),
            "lte" | "4g" => Ok(Self::Lte),
            other => Err(format!("unknown trace format {other:?}")),
        }
    }
}

/// A column addressed by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthUnit {
    BitsPerSec,
    BytesPerSec,
    Kbps,
    Mbps,
}

impl BandwidthUnit {
    fn to_kbps(self, v: f64) -> f64 {
        match self {
            Self::BitsPerSec => v / 1000.0,
            Self::BytesPerSec => v * 8.0 / 1000.0,
            Self::Kbps => v,
            Self::Mbps => v * 1000.0,
        }
    }
}

/// Column mapping for delimited vendor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub delimiter: char,
    pub header: bool,
    /// Rows sharing an id form one trace; without it the file is one trace.
    pub id_column: Option<Column>,
    /// Time column; without it samples are spaced by `granularity_s` in row order.
    pub time_column: Option<Column>,
    /// Seconds per unit of the time column.
    pub time_scale: f64,
    pub bandwidth_column: Column,
    pub bandwidth_unit: BandwidthUnit,
    pub granularity_s: f64,
    /// Samples below this (idle or dropped measurements) are raised to it.
    pub min_kbps: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self::fcc()
    }
}

impl AdapterConfig {
    /// FCC "download speed" exports: one row per 10 s measurement, grouped by unit.
    pub fn fcc() -> Self {
        Self {
            delimiter: ',',
            header: true,
            id_column: Some(Column::Name("unit_id".into())),
            time_column: None,
            time_scale: 1.0,
            bandwidth_column: Column::Name("bytes_sec".into()),
            bandwidth_unit: BandwidthUnit::BytesPerSec,
            granularity_s: 10.0,
            min_kbps: 1.0,
        }
    }

    /// LTE drive-test logs: one row per second, downlink rate in Kbps.
    pub fn lte() -> Self {
        Self {
            delimiter: ',',
            header: true,
            id_column: None,
            time_column: None,
            time_scale: 1.0,
            bandwidth_column: Column::Name("DL_bitrate".into()),
            bandwidth_unit: BandwidthUnit::Kbps,
            granularity_s: 1.0,
            min_kbps: 1.0,
        }
    }

    pub fn for_format(format: TraceFormat) -> Self {
        match format {
            TraceFormat::Lte => Self::lte(),
            _ => Self::fcc(),
        }
    }
}

/// Loads every trace under `path` (a file, or a directory of files read in name order).
pub fn load_traces(
    path: &Path,
    format: TraceFormat,
    adapter: Option<&AdapterConfig>,
) -> Result<Vec<BandwidthTrace>, TraceError> {
    let io_err = |p: &Path, source| TraceError::Io {
        path: p.display().to_string(),
        source,
    };
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path).map_err(|e| io_err(path, e))? {
            let p = entry.map_err(|e| io_err(path, e))?.path();
            let hidden = p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'));
            if p.is_file() && !hidden {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let default_adapter = AdapterConfig::for_format(format);
    let adapter = adapter.unwrap_or(&default_adapter);
    let mut out = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file).map_err(|e| io_err(&file, e))?;
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("trace")
            .to_string();
        out.extend(parse_traces(
            &text,
            &file.display().to_string(),
            &stem,
            format,
            adapter,
        )?);
    }
    Ok(out)
}

/// Parses one file's contents. `file` is only used in error messages and `stem`
/// prefixes trace ids.
pub fn parse_traces(
    text: &str,
    file: &str,
    stem: &str,
    format: TraceFormat,
    adapter: &AdapterConfig,
) -> Result<Vec<BandwidthTrace>, TraceError> {
    match format {
        TraceFormat::Canonical => parse_canonical(text, file, stem).map(|t| vec![t]),
        TraceFormat::Fcc | TraceFormat::Lte => parse_delimited(text, file, stem, adapter),
    }
}

fn parse_canonical(text: &str, file: &str, stem: &str) -> Result<BandwidthTrace, TraceError> {
    let err = |line: usize, message: String| TraceError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(t), Some(bw), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(n + 1, format!("expected `offset,kbps`, got {line:?}")));
        };
        let t: f64 = t
            .parse()
            .map_err(|_| err(n + 1, format!("bad offset {t:?}")))?;
        let bw: f64 = bw
            .parse()
            .map_err(|_| err(n + 1, format!("bad bandwidth {bw:?}")))?;
        if !(bw.is_finite() && bw > 0.0) {
            return Err(err(n + 1, format!("bandwidth must be positive, got {bw}")));
        }
        if let Some(&(prev, _)) = samples.last() {
            if t.is_nan() || t <= prev {
                return Err(err(n + 1, format!("offset {t} does not increase")));
            }
        }
        samples.push((t, bw));
    }
    if samples.is_empty() {
        return Err(TraceError::Empty(file.to_string()));
    }
    BandwidthTrace::with_inferred_granularity(stem, &samples, 1.0)
}

fn resolve(column: &Column, header: Option<&[&str]>, file: &str) -> Result<usize, TraceError> {
    match column {
        Column::Index(i) => Ok(*i),
        Column::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| TraceError::Parse {
                file: file.to_string(),
                line: 1,
                message: format!("column {name:?} not found in header"),
            }),
    }
}

fn parse_delimited(
    text: &str,
    file: &str,
    stem: &str,
    cfg: &AdapterConfig,
) -> Result<Vec<BandwidthTrace>, TraceError> {
    let err = |line: usize, message: String| TraceError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

    let header_fields: Option<Vec<&str>> = if cfg.header {
        let (_, h) = lines
            .next()
            .ok_or_else(|| TraceError::Empty(file.to_string()))?;
        Some(h.split(cfg.delimiter).map(str::trim).collect())
    } else {
        None
    };
    let header = header_fields.as_deref();
    let bw_col = resolve(&cfg.bandwidth_column, header, file)?;
    let time_col = cfg
        .time_column
        .as_ref()
        .map(|c| resolve(c, header, file))
        .transpose()?;
    let id_col = cfg
        .id_column
        .as_ref()
        .map(|c| resolve(c, header, file))
        .transpose()?;

    // groups in first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(cfg.delimiter).map(str::trim).collect();
        let field = |i: usize| {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| err(n + 1, format!("missing column {i}")))
        };
        let raw_bw = field(bw_col)?;
        let bw: f64 = raw_bw
            .parse()
            .map_err(|_| err(n + 1, format!("bad bandwidth {raw_bw:?}")))?;
        if !bw.is_finite() || bw < 0.0 {
            return Err(err(n + 1, format!("bandwidth must be non-negative, got {bw}")));
        }
        let kbps = cfg.bandwidth_unit.to_kbps(bw).max(cfg.min_kbps);
        let key = match id_col {
            Some(i) => field(i)?.to_string(),
            None => String::new(),
        };
        let group = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        let t = match time_col {
            Some(i) => {
                let raw = field(i)?;
                let t: f64 = raw
                    .parse()
                    .map_err(|_| err(n + 1, format!("bad time {raw:?}")))?;
                t * cfg.time_scale
            }
            None => group.len() as f64 * cfg.granularity_s,
        };
        if let Some(&(prev, _)) = group.last() {
            if t.is_nan() || t <= prev {
                return Err(err(n + 1, format!("time {t} does not increase")));
            }
        }
        group.push((t, kbps));
    }
    if order.is_empty() {
        return Err(TraceError::Empty(file.to_string()));
    }
    order
        .into_iter()
        .map(|key| {
            let id = if key.is_empty() {
                stem.to_string()
            } else {
                format!("{stem}:{key}")
            };
            BandwidthTrace::new(id, &groups[&key], cfg.granularity_s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_rows() {
        let traces = parse_traces(
            "# offset,kbps\n0,1500\n10,800\n",
            "t.csv",
            "t",
            TraceFormat::Canonical,
            &AdapterConfig::default(),
        )
        .unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].len(), 2);
        assert_eq!(traces[0].granularity(), 10.0);
        assert_eq!(traces[0].duration(), 20.0);
    }

    #[test]
    fn canonical_errors_name_the_line() {
        let e = parse_traces(
            "0,1500\n10;800\n",
            "bad.csv",
            "bad",
            TraceFormat::Canonical,
            &AdapterConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 2, .. }), "{e}");
        assert!(e.to_string().starts_with("bad.csv:2:"));
        let e = parse_traces("# nothing\n", "e.csv", "e", TraceFormat::Canonical, &AdapterConfig::default())
            .unwrap_err();
        assert!(matches!(e, TraceError::Empty(_)));
        let e = parse_traces("0,10\n0,20\n", "d.csv", "d", TraceFormat::Canonical, &AdapterConfig::default())
            .unwrap_err();
        assert!(matches!(e, TraceError::Parse { line: 2, .. }));
    }

    #[test]
    fn fcc_rows_group_by_unit_at_ten_seconds() {
        let text = "unit_id,dtime,bytes_sec\n7,a,125000\n7,b,250000\n9,a,62500\n7,c,0\n";
        let traces = parse_traces(text, "fcc.csv", "fcc", TraceFormat::Fcc, &AdapterConfig::fcc()).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].id(), "fcc:7");
        let s: Vec<_> = traces[0].samples().collect();
        assert_eq!(s, vec![(0.0, 1000.0), (10.0, 2000.0), (20.0, 1.0)]);
        assert_eq!(traces[1].samples().collect::<Vec<_>>(), vec![(0.0, 500.0)]);
        assert_eq!(traces[0].granularity(), 10.0);
    }

    #[test]
    fn lte_rows_at_one_second() {
        let text = "Timestamp,Speed,DL_bitrate,UL_bitrate\nx,0,1200,10\nx,0,900,10\nx,0,300,10\n";
        let traces = parse_traces(text, "lte.csv", "car_1", TraceFormat::Lte, &AdapterConfig::lte()).unwrap();
        assert_eq!(traces.len(), 1);
        let offsets: Vec<f64> = traces[0].samples().map(|s| s.0).collect();
        assert_eq!(offsets, vec![0.0, 1.0, 2.0]);
        assert_eq!(traces[0].mean_bandwidth(), 800.0);
    }

    #[test]
    fn configurable_columns() {
        let cfg = AdapterConfig {
            delimiter: ' ',
            header: false,
            id_column: None,
            time_column: Some(Column::Index(0)),
            bandwidth_column: Column::Index(1),
            bandwidth_unit: BandwidthUnit::Mbps,
            granularity_s: 1.0,
            ..AdapterConfig::fcc()
        };
        let traces = parse_traces("5 1.5\n6 0.5\n", "p", "p", TraceFormat::Fcc, &cfg).unwrap();
        assert_eq!(
            traces[0].samples().collect::<Vec<_>>(),
            vec![(0.0, 1500.0), (1.0, 500.0)]
        );
        let e = parse_traces("x,1\n", "m", "m", TraceFormat::Lte, &AdapterConfig::lte()).unwrap_err();
        assert!(e.to_string().contains("DL_bitrate"));
    }

    #[test]
    fn adapter_config_from_toml() {
        let cfg: AdapterConfig = toml::from_str(
            "delimiter = ';'\nbandwidth_column = 3\nbandwidth_unit = 'mbps'\ngranularity_s = 5.0\n",
        )
        .unwrap();
        assert_eq!(cfg.bandwidth_column, Column::Index(3));
        assert_eq!(cfg.id_column, Some(Column::Name("unit_id".into())));
    }

    #[test]
    fn loads_directories_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.csv"), "0,200\n1,300\n").unwrap();
        std::fs::write(dir.path().join("a.csv"), "0,100\n").unwrap();
        std::fs::write(dir.path().join(".hidden"), "garbage").unwrap();
        let traces = load_traces(dir.path(), TraceFormat::Canonical, None).unwrap();
        let ids: Vec<_> = traces.iter().map(|t| t.id().to_string()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(matches!(
            load_traces(&dir.path().join("missing"), TraceFormat::Canonical, None),
            Err(TraceError::Io { .. })
        ));
    }
}
