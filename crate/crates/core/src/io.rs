//! Text file formats: event corpora, model checkpoints, dense matrices,
//! binary panels and long-format grid exports. Every writer goes through a
//! temporary file and a rename.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discrete::BinaryPanel;
use crate::error::{Error, Result};
use crate::graph::GraphModel;
use crate::intensity::SttpModel;
use crate::model::{Event, EventSequence, ModelConfig, SpatialDomain, TimeWindow};

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
}

/// Sequences sharing one observation window and event schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub window: TimeWindow,
    pub domain: Option<SpatialDomain>,
    pub nodes: Option<usize>,
    pub sequences: Vec<EventSequence>,
}

impl Corpus {
    pub fn event_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    fn mark_dim(&self) -> usize {
        self.sequences.iter().flat_map(|s| &s.events).map(|e| e.mark.as_ref().map_or(0, |m| m.len())).max().unwrap_or(0)
    }
}

/// Comment lines carry the window, domain and sequence count; the header row
/// names the columns: `seq_id,t[,x,y][,node][,mark0,...]`.
pub fn format_corpus(c: &Corpus) -> String {
    let mut out = String::from("# deepstpp corpus v1\n");
    out.push_str(&format!("# horizon={}\n", c.window.horizon()));
    if let Some(d) = c.domain {
        out.push_str(&format!("# domain={},{},{},{}\n", d.x_lo, d.x_hi, d.y_lo, d.y_hi));
    }
    if let Some(n) = c.nodes {
        out.push_str(&format!("# nodes={n}\n"));
    }
    out.push_str(&format!("# sequences={}\n", c.sequences.len()));
    let spatial = c.domain.is_some();
    let graph = c.nodes.is_some();
    let q = c.mark_dim();
    let mut header = vec!["seq_id".to_string(), "t".into()];
    if spatial {
        header.extend(["x".into(), "y".into()]);
    }
    if graph {
        header.push("node".into());
    }
    header.extend((0..q).map(|i| format!("mark{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, seq) in c.sequences.iter().enumerate() {
        for e in &seq.events {
            let mut row = vec![i.to_string(), e.t.to_string()];
            if spatial {
                let s = e.loc();
                row.extend([s[0].to_string(), s[1].to_string()]);
            }
            if graph {
                row.push(e.node.map_or(String::new(), |n| n.to_string()));
            }
            let m = e.mark.as_deref().unwrap_or(&[]);
            row.extend((0..q).map(|k| m.get(k).map_or(String::new(), |v| v.to_string())));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut horizon = None;
    let mut domain = None;
    let mut nodes = None;
    let mut count = None;
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, Event)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                match k.trim() {
                    "horizon" => horizon = Some(parse_f64(v, "horizon")?),
                    "domain" => {
                        let p: Vec<f64> = v.split(',').map(|x| parse_f64(x, "domain")).collect::<Result<_>>()?;
                        if p.len() != 4 {
                            return Err(Error::Parse("domain needs four bounds".into()));
                        }
                        domain = Some(SpatialDomain::new(p[0], p[1], p[2], p[3])?);
                    }
                    "nodes" => nodes = Some(v.trim().parse().map_err(|_| Error::Parse(format!("bad node count {v:?}")))?),
                    "sequences" => count = Some(v.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad count {v:?}")))?),
                    _ => {}
                }
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let Some(h) = &header else {
            header = Some(cells.iter().map(|c| c.trim().to_string()).collect());
            continue;
        };
        if cells.len() != h.len() {
            return Err(Error::Parse(format!("line {}: expected {} fields, got {}", lineno + 1, h.len(), cells.len())));
        }
        let mut seq = None;
        let mut e = Event::temporal(f64::NAN);
        let mut xy = [None, None];
        let mut mark = Vec::new();
        for (name, cell) in h.iter().zip(&cells) {
            match name.as_str() {
                "seq_id" => seq = Some(cell.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad seq_id {cell:?}")))?),
                "t" => e.t = parse_f64(cell, "time")?,
                "x" => xy[0] = Some(parse_f64(cell, "x")?),
                "y" => xy[1] = Some(parse_f64(cell, "y")?),
                "node" if !cell.trim().is_empty() => {
                    e.node = Some(cell.trim().parse().map_err(|_| Error::Parse(format!("bad node {cell:?}")))?)
                }
                n if n.starts_with("mark") && !cell.trim().is_empty() => mark.push(parse_f64(cell, "mark")?),
                _ => {}
            }
        }
        if let [Some(x), Some(y)] = xy {
            e.s = Some([x, y]);
        }
        if !mark.is_empty() {
            e.mark = Some(mark);
        }
        let seq = seq.ok_or_else(|| Error::Parse(format!("line {}: missing seq_id", lineno + 1)))?;
        rows.push((seq, e));
    }
    let window = TimeWindow::new(horizon.ok_or_else(|| Error::Parse("missing horizon".into()))?)?;
    let m = count.unwrap_or_else(|| rows.iter().map(|(s, _)| s + 1).max().unwrap_or(0));
    let mut sequences = vec![EventSequence::empty(window); m];
    for (s, e) in rows {
        let seq = sequences.get_mut(s).ok_or_else(|| Error::Parse(format!("seq_id {s} beyond declared count {m}")))?;
        seq.events.push(e);
    }
    Ok(Corpus { window, domain, nodes, sequences })
}

pub fn write_corpus(path: &Path, c: &Corpus) -> Result<()> {
    write_atomic(path, format_corpus(c).as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&fs::read_to_string(path)?)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelPayload {
    Sttp { model: SttpModel },
    Graph { model: GraphModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    pub payload: ModelPayload,
    /// Hex SHA-256 of the compact JSON of `payload`.
    pub checksum: String,
}

fn payload_digest(p: &ModelPayload) -> Result<String> {
    let bytes = serde_json::to_vec(p).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Checkpoint {
    pub fn new(payload: ModelPayload, config: Option<ModelConfig>) -> Result<Self> {
        let checksum = payload_digest(&payload)?;
        Ok(Self { schema_version: CHECKPOINT_VERSION, config, payload, checksum })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        if c.schema_version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", c.schema_version)));
        }
        if payload_digest(&c.payload)? != c.checksum {
            return Err(Error::Parse("checkpoint checksum mismatch".into()));
        }
        Ok(c)
    }
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    write_atomic(path, c.to_json()?.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}

/// One comma-separated row per matrix row.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        let row: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(|c| parse_f64(c, "matrix entry")).collect())
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, format_matrix(m).as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}

/// Header of location ids, then one 0/1 row per time step.
pub fn format_panel(p: &BinaryPanel) -> String {
    let mut out = p.ids.join(",");
    out.push('\n');
    for row in p.omega.chunks(p.locations()) {
        let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_panel(text: &str) -> Result<BinaryPanel> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let ids: Vec<String> = lines.next().ok_or_else(|| Error::Parse("empty panel".into()))?.split(',').map(|s| s.trim().to_string()).collect();
    let mut omega = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: Vec<u8> = l
            .split(',')
            .map(|c| match c.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse(format!("panel row {}: entry {other:?} is not 0 or 1", i + 1))),
            })
            .collect::<Result<_>>()?;
        if row.len() != ids.len() {
            return Err(Error::Parse(format!("panel row {} has {} entries, expected {}", i + 1, row.len(), ids.len())));
        }
        omega.extend(row);
    }
    BinaryPanel::new(ids, omega, 1.0)
}

pub fn write_panel(path: &Path, p: &BinaryPanel) -> Result<()> {
    write_atomic(path, format_panel(p).as_bytes())
}

pub fn read_panel(path: &Path) -> Result<BinaryPanel> {
    parse_panel(&fs::read_to_string(path)?)
}

/// Values on a tensor grid, the first axis varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub axes: Vec<(String, Vec<f64>)>,
    pub values: Vec<f64>,
}

impl GridTable {
    pub fn new(axes: Vec<(String, Vec<f64>)>, values: Vec<f64>) -> Result<Self> {
        let n: usize = axes.iter().map(|(_, a)| a.len()).product();
        if n != values.len() {
            return Err(Error::DimensionMismatch { expected: n, got: values.len() });
        }
        Ok(Self { axes, values })
    }
}

/// Long format: header `axis1,...,value`, then one row per node.
pub fn format_grid(table: &GridTable) -> Result<String> {
    if table.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("grid table has non-finite values".into()));
    }
    let mut names: Vec<&str> = table.axes.iter().map(|(n, _)| n.as_str()).collect();
    names.push("value");
    let mut out = names.join(",");
    out.push('\n');
    let dims: Vec<usize> = table.axes.iter().map(|(_, a)| a.len()).collect();
    let mut idx = vec![0usize; dims.len()];
    for v in &table.values {
        let mut row: Vec<String> = idx.iter().zip(&table.axes).map(|(&i, (_, a))| a[i].to_string()).collect();
        row.push(v.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
        for d in (0..dims.len()).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

pub fn parse_grid(text: &str) -> Result<GridTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines.next().ok_or_else(|| Error::Parse("empty grid".into()))?.split(',').map(String::from).collect();
    let k = header.len().checked_sub(1).filter(|&k| k > 0).ok_or_else(|| Error::Parse("grid needs an axis".into()))?;
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| parse_f64(c, "grid entry")).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut axes: Vec<(String, Vec<f64>)> = header[..k].iter().map(|n| (n.clone(), Vec::new())).collect();
    for row in &rows {
        if row.len() != k + 1 {
            return Err(Error::Parse("grid row length mismatch".into()));
        }
    }
    // Axis values in first-appearance order along each coordinate.
    for (d, axis) in axes.iter_mut().enumerate() {
        for row in &rows {
            if !axis.1.iter().any(|v| v.to_bits() == row[d].to_bits()) {
                axis.1.push(row[d]);
            }
        }
    }
    GridTable::new(axes, rows.iter().map(|r| r[k]).collect())
}

pub fn export_grid(table: &GridTable, path: &Path) -> Result<()> {
    write_atomic(path, format_grid(table)?.as_bytes())
}

pub fn read_grid(path: &Path) -> Result<GridTable> {
    parse_grid(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_grid_has_header_and_four_rows() {
        let t = GridTable::new(vec![("x".into(), vec![0.0, 1.0]), ("y".into(), vec![0.5, 1.5])], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = format_grid(&t).unwrap();
        assert_eq!(s, "x,y,value\n0,0.5,1\n0,1.5,2\n1,0.5,3\n1,1.5,4\n");
        assert_eq!(parse_grid(&s).unwrap(), t);
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 1e-20, 0.1, 2.0, 3.25]);
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        assert!(parse_matrix("1,2\n3\n").is_err());
    }

    #[test]
    fn corpus_round_trip_keeps_empty_sequences() {
        let w = TimeWindow::new(5.0).unwrap();
        let c = Corpus {
            window: w,
            domain: Some(SpatialDomain::centered_square(1.0).unwrap()),
            nodes: None,
            sequences: vec![
                EventSequence::new(vec![Event::spatial(0.1, 0.2, -0.3), Event::spatial(1.0 / 3.0, 0.0, 0.9)], w),
                EventSequence::empty(w),
            ],
        };
        let text = format_corpus(&c);
        assert_eq!(parse_corpus(&text).unwrap(), c);
    }

    #[test]
    fn panel_rejects_non_binary() {
        assert!(parse_panel("a,b\n0,1\n2,0\n").is_err());
        let p = parse_panel("a,b\n0,1\n1,0\n").unwrap();
        assert_eq!(format_panel(&p), "a,b\n0,1\n1,0\n");
    }
}
