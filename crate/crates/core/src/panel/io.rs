//! Wide CSV format: `actor_id,layer,sector,<YYYYQn>,...`, one row per actor.
//! Leading lines starting with `#` carry free-form provenance.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{ActorMeta, Panel, Quarter};
use crate::error::{Error, Result};

const META_COLUMNS: [&str; 3] = ["actor_id", "layer", "sector"];

pub fn load_panel(path: impl AsRef<Path>) -> Result<Panel> {
    let file = fs::File::open(path)?;
    read_panel(file)
}

pub fn read_panel<R: Read>(mut reader: R) -> Result<Panel> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;

    let mut provenance = Vec::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        match line.strip_prefix('#') {
            Some(rest) => {
                provenance.push(rest.trim_start_matches(' ').trim_end_matches(['\r', '\n']).to_string());
                body_start += line.len();
            }
            None => break,
        }
    }
    let header_line = provenance.len() + 1;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(&text.as_bytes()[body_start..]);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || header.iter().take(3).ne(META_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            line: header_line,
            msg: "header must start with actor_id,layer,sector followed by quarter labels".into(),
        });
    }
    let quarters = header
        .iter()
        .skip(3)
        .map(|s| s.parse::<Quarter>())
        .collect::<Result<Vec<_>>>()?;
    for w in quarters.windows(2) {
        if w[1].ordinal() != w[0].ordinal() + 1 {
            return Err(Error::Calendar(format!("quarter labels not consecutive: {} then {}", w[0], w[1])));
        }
    }

    let t = quarters.len();
    let mut registry = Vec::new();
    let mut data = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = header_line + 1 + k;
        if rec.len() != t + 3 {
            return Err(Error::UnbalancedPanel(format!("line {line}: expected {} fields, found {}", t + 3, rec.len())));
        }
        let meta = ActorMeta::new(&rec[0], rec[1].parse()?, &rec[2]);
        for (j, cell) in rec.iter().skip(3).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::UnbalancedPanel(format!(
                    "missing value for actor '{}' at {}",
                    meta.actor_id, quarters[j]
                )));
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            data.push(v);
        }
        registry.push(meta);
    }
    let n = registry.len();
    let values = DMatrix::from_row_slice(n, t, &data);
    let panel = Panel::new(values, quarters, registry)?;
    Ok(if provenance.is_empty() { panel } else { panel.with_provenance(provenance.join("\n")) })
}

pub fn save_panel(panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_panel(panel, file)
}

/// Values are written with Rust's shortest round-trip float formatting, so
/// reloading reproduces every finite value bit for bit.
pub fn write_panel<W: Write>(panel: &Panel, mut out: W) -> Result<()> {
    if let Some(p) = panel.provenance() {
        for line in p.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(panel.quarters().iter().map(|q| q.to_string()));
    wtr.write_record(&header)?;
    for (i, meta) in panel.registry().iter().enumerate() {
        let mut row = vec![meta.actor_id.clone(), meta.layer.to_string(), meta.sector.clone()];
        row.extend(panel.values().row(i).iter().map(|v| format!("{v:?}")));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
