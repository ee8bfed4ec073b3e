//! Plot-ready CSV export of gridded fields.
//!
//! A 1D field is written whole as `t,x,value` rows. A 2D field is written
//! one time slice at a time as `x,y,value` rows. Coordinates are box
//! centers, and floats use Rust's shortest round-trip formatting so a
//! re-read reproduces them exactly.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fokker_core::GriddedField;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Column names; the last one is always `value`.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Builds the table; `slice` selects the time slice of a 2D field and is
/// ignored for 1D fields.
pub fn heatmap(field: &GriddedField, slice: usize) -> Result<Heatmap> {
    let spec = field.spec();
    let mut c = vec![0.0; spec.dim()];
    match spec.dim() {
        1 => {
            let mut rows = Vec::with_capacity(spec.value_count());
            for n in 0..=spec.slices() {
                let t = spec.slice_time(n);
                for (b, &v) in field.slice(n).iter().enumerate() {
                    spec.box_center(b, &mut c);
                    rows.push(vec![t, c[0], v]);
                }
            }
            Ok(Heatmap {
                columns: vec!["t".into(), "x".into(), "value".into()],
                rows,
            })
        }
        2 => {
            if slice > spec.slices() {
                bail!("slice {slice} beyond the last slice {}", spec.slices());
            }
            let rows = field
                .slice(slice)
                .iter()
                .enumerate()
                .map(|(b, &v)| {
                    spec.box_center(b, &mut c);
                    vec![c[0], c[1], v]
                })
                .collect();
            Ok(Heatmap {
                columns: vec!["x".into(), "y".into(), "value".into()],
                rows,
            })
        }
        d => bail!("heat maps need a 1D or 2D field, got {d}D"),
    }
}

pub fn write_heatmap<W: Write>(map: &Heatmap, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&map.columns)?;
    for row in &map.rows {
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_heatmap<R: Read>(r: R) -> Result<Heatmap> {
    let mut rdr = csv::Reader::from_reader(r);
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if columns.last().map(String::as_str) != Some("value") {
        bail!("heat map header must end with 'value'");
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().with_context(|| format!("bad number '{s}'")))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != columns.len() {
            bail!("row has {} fields, header has {}", row.len(), columns.len());
        }
        rows.push(row);
    }
    Ok(Heatmap { columns, rows })
}

/// Writes the heat map of `field` to `path`.
pub fn export_heatmap(field: &GriddedField, slice: usize, path: &Path) -> Result<()> {
    let map = heatmap(field, slice)?;
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_heatmap(&map, BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))
}

/// `a − b` on a shared grid.
pub fn difference(a: &GriddedField, b: &GriddedField) -> Result<GriddedField> {
    if !a.spec().is_compatible(b.spec()) {
        bail!("fields live on different grids");
    }
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(GriddedField::from_values(a.spec().clone(), values)?)
}
