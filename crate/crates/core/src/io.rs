//! File formats: point streams, windows, trajectories and sidecar metadata.
//!
//! Point streams are CSV with header `x,y` or `x,y,t`. Windows are JSON
//! objects tagged by `type`. Every real is written as the shortest decimal
//! text that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eprocess::{Decision, TrajectoryRecord};
use crate::format::fmt_f64;
use crate::geometry::{GeometryError, Point, Rect, Window};
use crate::simulate::Provenance;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Stream(#[from] std::io::Error),

    #[error("line {line} (row {row}): {message}")]
    Parse {
        line: u64,
        row: u64,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("invalid window: {0}")]
    Geometry(#[from] GeometryError),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a point stream in file order, or stably sorted by `t` when
/// `order_by_t` is set.
pub fn read_pattern(path: &Path, order_by_t: bool) -> Result<Vec<Point>> {
    read_pattern_from(open(path)?, order_by_t)
}

pub fn read_pattern_from<R: Read>(reader: R, order_by_t: bool) -> Result<Vec<Point>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IoError::Format(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ix), Some(iy)) = (col("x"), col("y")) else {
        return Err(IoError::Format(format!(
            "point file header must contain `x` and `y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    };
    let it = col("t");
    if order_by_t && it.is_none() {
        return Err(IoError::Config(
            "ordering by time requested but the point file has no `t` column".into(),
        ));
    }
    let mut rows: Vec<(Point, f64)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k as u64 + 1;
        let rec = rec.map_err(|e| IoError::Parse {
            line: e.position().map_or(row + 1, |p| p.line()),
            row,
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(row + 1, |p| p.line());
        let cell = |i: usize, name: &str| -> Result<f64> {
            let text = rec.get(i).unwrap_or("");
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::Parse {
                    line,
                    row,
                    message: format!("`{name}` value `{text}` is not a finite number"),
                }),
            }
        };
        let p = Point::new(cell(ix, "x")?, cell(iy, "y")?);
        let t = match it {
            Some(i) if order_by_t => cell(i, "t")?,
            _ => 0.0,
        };
        rows.push((p, t));
    }
    if order_by_t {
        rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    }
    Ok(rows.into_iter().map(|(p, _)| p).collect())
}

pub fn write_pattern<W: Write + ?Sized>(w: &mut W, points: &[Point]) -> std::io::Result<()> {
    writeln!(w, "x,y")?;
    for p in points {
        writeln!(w, "{},{}", fmt_f64(p.x), fmt_f64(p.y))?;
    }
    Ok(())
}

/// Serialized window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WindowFile {
    Rectangle {
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

impl WindowFile {
    pub fn to_window(&self) -> std::result::Result<Window, GeometryError> {
        match self {
            WindowFile::Rectangle { xmin, xmax, ymin, ymax } => Window::rectangle(*xmin, *xmax, *ymin, *ymax),
            WindowFile::Polygon { vertices } => {
                Window::polygon(vertices.iter().map(|v| Point::new(v[0], v[1])).collect())
            }
        }
    }
}

impl From<&Window> for WindowFile {
    fn from(w: &Window) -> Self {
        match w {
            Window::Rectangle(Rect { xmin, xmax, ymin, ymax }) => WindowFile::Rectangle {
                xmin: *xmin,
                xmax: *xmax,
                ymin: *ymin,
                ymax: *ymax,
            },
            Window::Polygon(p) => WindowFile::Polygon {
                vertices: p.vertices().iter().map(|v| [v.x, v.y]).collect(),
            },
        }
    }
}

pub fn parse_window(text: &str) -> Result<Window> {
    let spec: WindowFile = serde_json::from_str(text)?;
    Ok(spec.to_window()?)
}

pub fn read_window(path: &Path) -> Result<Window> {
    parse_window(&read_to_string(path)?)
}

pub fn write_window<W: Write>(w: &mut W, window: &Window) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, &WindowFile::from(window))?;
    writeln!(w)?;
    Ok(())
}

/// JSON sidecar written next to a simulated point file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    pub format_version: u32,
    pub provenance: Provenance,
    pub window: WindowFile,
    pub count: usize,
}

pub fn write_trajectory_csv<W: Write + ?Sized>(w: &mut W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    writeln!(w, "n,log_e,crossed")?;
    for r in records {
        writeln!(w, "{},{},{}", r.n, fmt_f64(r.log_e), u8::from(r.crossed))?;
    }
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<TrajectoryRecord> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k as u64 + 1;
        let bad = |message: String| IoError::Parse {
            line: row + 1,
            row,
            message,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let n: u64 = rec[0].parse().map_err(|_| bad(format!("bad n `{}`", &rec[0])))?;
        let log_e: f64 = rec[1].parse().map_err(|_| bad(format!("bad log_e `{}`", &rec[1])))?;
        let crossed = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("crossed must be 0 or 1, got `{other}`"))),
        };
        if out.last().is_some_and(|p| p.n >= n) {
            return Err(bad(format!("n must be strictly increasing, got {n}")));
        }
        out.push(TrajectoryRecord { n, log_e, crossed });
    }
    Ok(out)
}

/// Metadata line opening an NDJSON trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub format_version: u32,
    pub alpha: f64,
    pub threshold: f64,
    pub particles: usize,
    pub gamma: f64,
    pub bounds: (f64, f64),
    pub pretrain_lambda: f64,
    pub stride: u64,
    pub seed: u64,
    pub log_area: f64,
}

pub fn write_trajectory_ndjson<W: Write>(
    w: &mut W,
    meta: &RunMeta,
    records: &[TrajectoryRecord],
) -> Result<()> {
    #[derive(Serialize)]
    struct Header<'a> {
        meta: &'a RunMeta,
    }
    serde_json::to_writer(&mut *w, &Header { meta })?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trajectory_ndjson<R: BufRead>(reader: R) -> Result<(RunMeta, Vec<TrajectoryRecord>)> {
    #[derive(Deserialize)]
    struct Header {
        meta: RunMeta,
    }
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| IoError::Format("empty trajectory file".into()))??;
    let meta = serde_json::from_str::<Header>(&first)?.meta;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok((meta, records))
}

/// Human-readable decision summary.
pub fn format_decision(d: &Decision, n: u64, log_e: f64, outside: usize) -> String {
    let at = d.at_n.map_or_else(|| "none".to_string(), |k| k.to_string());
    let mut s = format!(
        "verdict: {}\nfirst_crossing: {}\nthreshold: {}\nalpha: {}\nn: {}\nlog_e: {}\n",
        d.verdict,
        at,
        fmt_f64(d.threshold),
        fmt_f64(d.alpha),
        n,
        fmt_f64(log_e)
    );
    if outside > 0 {
        s.push_str(&format!("outside_window: {outside}\n"));
    }
    s
}
