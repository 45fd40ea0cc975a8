//! File outputs: the diagnostics CSV, 16-bit PGM previews, and exact raw
//! field dumps.
//!
//! Everything written here is deterministic byte-for-byte for a given run:
//! floats are printed in shortest round-trip form, the PGM quantization is
//! a fixed affine map recorded in the image header, and the raw format is
//! a plain little-endian dump with a magic header so it can be read back
//! losslessly (the nutrient reference states of the truncation-convergence
//! study round-trip through it).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::stepper::StepFailure;

/// Write the diagnostics series as CSV (fixed column order, see
/// [`DiagnosticsRecord::CSV_HEADER`]). A step failure appends a final
/// comment row naming the step and the error, so a truncated run is
/// distinguishable from a completed one by its last line.
pub fn write_csv(path: &Path, series: &[DiagnosticsRecord], failure: Option<&StepFailure>) -> Result<()> {
    let mut text = String::with_capacity(series.len() * 160 + 160);
    text.push_str(DiagnosticsRecord::CSV_HEADER);
    text.push('\n');
    for rec in series {
        text.push_str(&rec.csv_row());
        text.push('\n');
    }
    if let Some(f) = failure {
        text.push_str(&format!("# step {} failed: {}\n", f.step, f.error));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write a field as a 16-bit PGM (`P5`, maxval 65535, big-endian raster per
/// the format). The header comment records the affine map back to physical
/// values: `value = lo + (hi - lo) * code / 65535`. Rows are written north
/// to south so +y points up in the image.
pub fn write_pgm(path: &Path, field: &Field) -> Result<()> {
    let g = field.grid;
    let (lo, hi) = (field.min(), field.max());
    let mut bytes = Vec::with_capacity(64 + 2 * g.n_cells());
    let header = format!(
        "P5\n# affine map: value = {lo} + ({hi} - {lo}) * code / 65535\n{} {}\n65535\n",
        g.nx, g.ny
    );
    bytes.extend_from_slice(header.as_bytes());
    let span = hi - lo;
    for j in (0..g.ny).rev() {
        for i in 0..g.nx {
            let v = field.values[g.idx(i, j)];
            let code = if span > 0.0 {
                ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            bytes.extend_from_slice(&code.to_be_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

const RAW_MAGIC: &[u8; 8] = b"CHKSRAW1";

/// Write a field exactly: magic `CHKSRAW1`, then little-endian `u32` nx, ny
/// and `f64` lx, ly, then the row-major cell values as little-endian `f64`.
pub fn write_raw(path: &Path, field: &Field) -> Result<()> {
    let g = field.grid;
    let mut f = fs::File::create(path)?;
    f.write_all(RAW_MAGIC)?;
    f.write_all(&(g.nx as u32).to_le_bytes())?;
    f.write_all(&(g.ny as u32).to_le_bytes())?;
    f.write_all(&g.lx.to_le_bytes())?;
    f.write_all(&g.ly.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * field.values.len());
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read back a [`write_raw`] dump, reconstructing the grid.
pub fn read_raw(path: &Path) -> Result<Field> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::Output(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 || &bytes[..8] != RAW_MAGIC {
        return Err(fail("not a raw field dump (bad magic)"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (nx, ny) = (u32_at(8), u32_at(12));
    let (lx, ly) = (f64_at(16), f64_at(24));
    let grid = if ny == 1 { Grid::line(nx, lx) } else { Grid::rect(nx, ny, lx, ly) }
        .map_err(|e| fail(&e.to_string()))?;
    let expect = 32 + 8 * nx * ny;
    if bytes.len() != expect {
        return Err(fail(&format!("size {} does not match {nx}x{ny} cells", bytes.len())));
    }
    let values = (0..nx * ny).map(|k| f64_at(32 + 8 * k)).collect();
    Ok(Field { grid, values })
}

/// Create the output directory (and parents) if needed.
pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use std::f64::consts::PI;

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let p = std::env::temp_dir().join(format!("chks-output-{name}-{}", std::process::id()));
        fs::create_dir_all(&p).unwrap();
        p
    }

    #[test]
    fn raw_round_trips_bit_exactly() {
        let g = Grid::rect(12, 8, 2.0, 1.0).unwrap();
        let mut rng = SplitMix64::new(11);
        let f = Field::from_fn(g, |_, _| rng.next_symmetric() * 1e3);
        let path = tmpdir("raw").join("f.raw");
        write_raw(&path, &f).unwrap();
        let back = read_raw(&path).unwrap();
        assert_eq!(back.grid.nx, 12);
        assert_eq!(back.grid.ny, 8);
        assert_eq!(back.grid.lx, 2.0);
        assert_eq!(back.values, f.values);
    }

    #[test]
    fn raw_rejects_corrupt_input() {
        let dir = tmpdir("rawbad");
        let path = dir.join("bad.raw");
        fs::write(&path, b"not a dump").unwrap();
        assert!(read_raw(&path).is_err());
        // Truncated payload.
        let g = Grid::line(8, 1.0).unwrap();
        let f = Field::constant(g, 1.0);
        let path2 = dir.join("trunc.raw");
        write_raw(&path2, &f).unwrap();
        let mut bytes = fs::read(&path2).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path2, bytes).unwrap();
        assert!(read_raw(&path2).is_err());
    }

    #[test]
    fn pgm_header_and_quantization() {
        let g = Grid::line(8, 1.0).unwrap();
        let f = Field::from_fn(g, |x, _| (PI * x).cos());
        let path = tmpdir("pgm").join("f.pgm");
        write_pgm(&path, &f).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = std::str::from_utf8(&bytes[..bytes.len() - 16]).unwrap();
        assert!(header.starts_with("P5\n# affine map: value = "));
        assert!(header.contains("\n8 1\n65535\n"));
        // Raster: 8 big-endian u16; max value maps to 65535, min to 0.
        let raster = &bytes[bytes.len() - 16..];
        let codes: Vec<u16> = raster
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(*codes.iter().max().unwrap(), 65535);
        assert_eq!(*codes.iter().min().unwrap(), 0);
        // cos(pi x) decreases over (0,1): codes must be monotone decreasing.
        assert!(codes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn csv_failure_row_is_appended() {
        let path = tmpdir("csv").join("d.csv");
        let failure = StepFailure {
            step: 7,
            error: Error::PositivityLoss { min: -1e-3, step: 7 },
        };
        write_csv(&path, &[], Some(&failure)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), DiagnosticsRecord::CSV_HEADER);
        let last = lines.next().unwrap();
        assert!(last.starts_with("# step 7 failed:"), "{last}");
        assert!(last.contains("positivity"), "{last}");
    }
}
