//! File formats: fields as CSV slices or a flat binary dump, traces as CSV
//! or binary with a JSON sidecar, iteration histories as JSON lines and
//! 8-bit PGM heatmaps.
//!
//! Binary layouts are little-endian: three `u64` dimensions followed by
//! `f64` payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CauchyData, Face};
use crate::grid::{ScalarField, SpaceTimeGrid};
use crate::qrm::IterationHistory;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("{what}: {s:?}: {e}")))
}

/// One CSV line per `y` row of a single time layer.
fn write_slice<W: Write>(field: &ScalarField, k: usize, w: &mut W) -> Result<()> {
    let g = field.grid();
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx).map(|i| format!("{:e}", field.at(i, j, k))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes `stem.csv` for a spatial field, or `stem_tKKKK.csv` per layer.
pub fn write_field_csv(field: &ScalarField, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    if field.is_spatial() {
        let p = dir.join(format!("{stem}.csv"));
        let mut w = create(&p)?;
        write_slice(field, 0, &mut w)?;
        w.flush()?;
        paths.push(p);
        return Ok(paths);
    }
    for k in 0..field.layers() {
        let p = dir.join(format!("{stem}_t{k:04}.csv"));
        let mut w = create(&p)?;
        write_slice(field, k, &mut w)?;
        w.flush()?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads one CSV slice onto the spatial part of `grid`.
pub fn read_slice_csv(path: &Path, grid: &SpaceTimeGrid) -> Result<ScalarField> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = Vec::with_capacity(grid.spatial_len());
    let mut rows = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            values.push(parse_f64(cell, "field value")?);
        }
        if values.len() - before != grid.nx {
            return Err(Error::ShapeMismatch(format!(
                "row {rows} has {} values, expected {}",
                values.len() - before,
                grid.nx
            )));
        }
        rows += 1;
    }
    if rows != grid.ny {
        return Err(Error::ShapeMismatch(format!("{rows} rows, expected {}", grid.ny)));
    }
    ScalarField::from_values(*grid, values)
}

fn write_dims<W: Write>(w: &mut W, dims: [usize; 3]) -> Result<()> {
    for d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_dims<R: Read>(r: &mut R) -> Result<[usize; 3]> {
    let mut dims = [0usize; 3];
    let mut buf = [0u8; 8];
    for d in &mut dims {
        r.read_exact(&mut buf)?;
        *d = usize::try_from(u64::from_le_bytes(buf)).map_err(|e| Error::Parse(e.to_string()))?;
    }
    Ok(dims)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Header `nx, ny, layers` then the values in storage order.
pub fn write_field_binary(field: &ScalarField, path: &Path) -> Result<()> {
    let g = field.grid();
    let mut w = create(path)?;
    write_dims(&mut w, [g.nx, g.ny, field.layers()])?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary dump onto `grid`; a single layer gives a spatial field.
pub fn read_field_binary(path: &Path, grid: &SpaceTimeGrid) -> Result<ScalarField> {
    let mut r = BufReader::new(File::open(path)?);
    let [nx, ny, nt] = read_dims(&mut r)?;
    if nx != grid.nx || ny != grid.ny || (nt != grid.nt && nt != 1) {
        return Err(Error::ShapeMismatch(format!(
            "file holds {nx}x{ny}x{nt}, grid is {}x{}x{}",
            grid.nx, grid.ny, grid.nt
        )));
    }
    let values = read_f64s(&mut r, nx * ny * nt)?;
    ScalarField::from_values(*grid, values)
}

/// Grid and provenance of a trace file, stored next to it as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub grid: SpaceTimeGrid,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

impl TraceMeta {
    pub fn of(data: &CauchyData) -> Self {
        Self {
            grid: data.grid,
            noise_level: data.noise_level,
            seed: data.seed,
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Columns `face, i, k, f, g`, with `i` the position along the face.
pub fn write_cauchy_csv(data: &CauchyData, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "face,i,k,f,g")?;
    for face in Face::ALL {
        for k in 0..data.grid.nt {
            for pos in 0..face.len(&data.grid) {
                let idx = data.index(face, pos, k);
                writeln!(w, "{},{pos},{k},{:e},{:e}", face.name(), data.f[idx], data.g[idx])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cauchy_csv(path: &Path, meta: &TraceMeta) -> Result<CauchyData> {
    let mut data = CauchyData::zeros(meta.grid);
    data.noise_level = meta.noise_level;
    data.seed = meta.seed;
    let mut seen = vec![false; data.f.len()];
    let reader = BufReader::new(File::open(path)?);
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 columns", line_no + 1)));
        }
        let face = Face::from_name(cells[0].trim())
            .ok_or_else(|| Error::Parse(format!("line {}: unknown face {:?}", line_no + 1, cells[0])))?;
        let pos: usize = cells[1].trim().parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        let k: usize = cells[2].trim().parse().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)))?;
        if pos >= face.len(&data.grid) || k >= data.grid.nt {
            return Err(Error::Parse(format!("line {}: sample out of range", line_no + 1)));
        }
        let idx = data.index(face, pos, k);
        data.f[idx] = parse_f64(cells[3], "f")?;
        data.g[idx] = parse_f64(cells[4], "g")?;
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("trace sample {missing} missing")));
    }
    Ok(data)
}

/// Header `nx, ny, nt` of the trace grid, then all `f`, then all `g`.
pub fn write_cauchy_binary(data: &CauchyData, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_dims(&mut w, [data.grid.nx, data.grid.ny, data.grid.nt])?;
    for v in data.f.iter().chain(&data.g) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cauchy_binary(path: &Path, meta: &TraceMeta) -> Result<CauchyData> {
    let mut r = BufReader::new(File::open(path)?);
    let dims = read_dims(&mut r)?;
    let g = meta.grid;
    if dims != [g.nx, g.ny, g.nt] {
        return Err(Error::ShapeMismatch(format!("trace file holds {dims:?}, sidecar says {}x{}x{}", g.nx, g.ny, g.nt)));
    }
    let n = CauchyData::sample_count(&g);
    let f = read_f64s(&mut r, n)?;
    let gv = read_f64s(&mut r, n)?;
    Ok(CauchyData {
        grid: g,
        f,
        g: gv,
        noise_level: meta.noise_level,
        seed: meta.seed,
    })
}

/// One JSON object per recorded step.
pub fn write_history_jsonl(history: &IterationHistory, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for rec in &history.records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Value range a heatmap was scaled with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRange {
    pub min: f64,
    pub max: f64,
}

/// Binary 8-bit PGM of layer 0, north row first; black is the minimum.
pub fn write_pgm(field: &ScalarField, path: &Path) -> Result<HeatmapRange> {
    let g = field.grid();
    let slice = if field.is_spatial() { field.clone() } else { field.layer(0)? };
    let range = HeatmapRange {
        min: slice.min(),
        max: slice.max(),
    };
    let span = range.max - range.min;
    let mut w = create(path)?;
    write!(w, "P5\n{} {}\n255\n", g.nx, g.ny)?;
    let mut bytes = Vec::with_capacity(g.spatial_len());
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let v = if span > 0.0 { (slice.at(i, j, 0) - range.min) / span } else { 0.0 };
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(range)
}
