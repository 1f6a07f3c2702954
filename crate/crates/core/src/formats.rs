//! On-disk grid formats: integer label maps and float-valued maps.
//!
//! Label maps travel as 16-bit grayscale PNG or integer CSV; float maps
//! (edge strengths, soft boundaries) as float CSV or 8/16-bit grayscale PNG
//! rescaled to [0, 1]. CSV files are headerless comma-separated grids, one
//! image row per line.

use ndarray::Array2;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{flt, Real};

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads an integer label grid from PNG (8- or 16-bit grayscale) or CSV.
pub fn read_label_grid(path: &Path) -> Result<Array2<u32>> {
    match extension(path).as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::UnsupportedImage {
                    path: path.into(),
                    detail: other.to_string(),
                },
            })?;
            use image::DynamicImage as D;
            match img {
                D::ImageLuma8(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
                        buf.get_pixel(c as u32, r as u32).0[0] as u32
                    }))
                }
                D::ImageLuma16(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
                        buf.get_pixel(c as u32, r as u32).0[0] as u32
                    }))
                }
                other => Err(Error::UnsupportedImage {
                    path: path.into(),
                    detail: format!(
                        "label PNG must be single-channel grayscale, got {:?}",
                        other.color()
                    ),
                }),
            }
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv_grid(&text, |tok, r, c| {
                tok.parse::<i64>()
                    .ok()
                    .filter(|&v| v >= 0 && v <= u32::MAX as i64)
                    .map(|v| v as u32)
                    .ok_or_else(|| {
                        Error::Ingest(format!(
                            "label CSV {}: row {r}, col {c}: {tok:?} is not a nonnegative integer",
                            path.display()
                        ))
                    })
            })
        }
        other => Err(Error::Ingest(format!(
            "label file {} has unsupported extension {other:?} (want .png or .csv)",
            path.display()
        ))),
    }
}

/// Reads a float grid from CSV or grayscale PNG (values rescaled to [0, 1]).
pub fn read_float_grid<F: Real>(path: &Path) -> Result<Array2<F>> {
    match extension(path).as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::UnsupportedImage {
                    path: path.into(),
                    detail: other.to_string(),
                },
            })?;
            use image::DynamicImage as D;
            match img {
                D::ImageLuma8(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
                        flt::<F>(buf.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0)
                    }))
                }
                D::ImageLuma16(buf) => {
                    let (w, h) = (buf.width() as usize, buf.height() as usize);
                    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
                        flt::<F>(buf.get_pixel(c as u32, r as u32).0[0] as f64 / 65535.0)
                    }))
                }
                other => Err(Error::UnsupportedImage {
                    path: path.into(),
                    detail: format!(
                        "float-map PNG must be single-channel grayscale, got {:?}",
                        other.color()
                    ),
                }),
            }
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv_grid(&text, |tok, r, c| {
                tok.parse::<f64>().map(flt::<F>).map_err(|_| {
                    Error::Ingest(format!(
                        "float CSV {}: row {r}, col {c}: {tok:?} is not a number",
                        path.display()
                    ))
                })
            })
        }
        other => Err(Error::Ingest(format!(
            "float map {} has unsupported extension {other:?} (want .png or .csv)",
            path.display()
        ))),
    }
}

fn parse_csv_grid<T: Clone + Default>(
    text: &str,
    parse: impl Fn(&str, usize, usize) -> Result<T>,
) -> Result<Array2<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, tok) in line.split(',').enumerate() {
            row.push(parse(tok.trim(), r, c)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Ingest("CSV grid is empty".into()));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Ingest("CSV rows have inconsistent lengths".into()));
    }
    let h = rows.len();
    Ok(Array2::from_shape_fn((h, w), |(r, c)| rows[r][c].clone()))
}

/// Writes a label grid as 16-bit grayscale PNG. Labels must fit in u16.
pub fn write_label_png(path: &Path, labels: &Array2<u32>) -> Result<()> {
    let (h, w) = labels.dim();
    if let Some(&m) = labels.iter().max() {
        if m > u16::MAX as u32 {
            return Err(Error::Contract(format!(
                "label {m} exceeds 16-bit PNG range; use CSV output"
            )));
        }
    }
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            buf.put_pixel(c as u32, r as u32, image::Luma([labels[[r, c]] as u16]));
        }
    }
    buf.save(path).map_err(|e| Error::Ingest(format!(
        "failed to write {}: {e}",
        path.display()
    )))
}

/// Writes a label grid as integer CSV.
pub fn write_label_csv(path: &Path, labels: &Array2<u32>) -> Result<()> {
    let (h, w) = labels.dim();
    let mut out = String::new();
    for r in 0..h {
        for c in 0..w {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&labels[[r, c]].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a float grid as CSV with shortest round-trip formatting.
pub fn write_float_csv<F: Real>(path: &Path, grid: &Array2<F>) -> Result<()> {
    let (h, w) = grid.dim();
    let mut out = String::new();
    for r in 0..h {
        for c in 0..w {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", grid[[r, c]]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a [0, 1] float grid as 16-bit grayscale PNG.
pub fn write_float_png16<F: Real>(path: &Path, grid: &Array2<F>) -> Result<()> {
    let (h, w) = grid.dim();
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = grid[[r, c]].to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
            buf.put_pixel(c as u32, r as u32, image::Luma([(v * 65535.0).round() as u16]));
        }
    }
    buf.save(path).map_err(|e| Error::Ingest(format!(
        "failed to write {}: {e}",
        path.display()
    )))
}

/// Writes an N x d matrix as CSV, one row per line.
pub fn write_matrix_csv<F: Real>(path: &Path, m: &nalgebra::DMatrix<F>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        writeln!(file, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.png");
        let grid = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as u32 * 300);
        write_label_png(&p, &grid).unwrap();
        let back = read_label_grid(&p).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn label_png_rejects_wide_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.png");
        let grid = Array2::from_elem((2, 2), 70_000u32);
        assert!(write_label_png(&p, &grid).is_err());
    }

    #[test]
    fn label_csv_roundtrip_and_negative_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        let grid = Array2::from_shape_fn((2, 3), |(r, c)| (r + c) as u32);
        write_label_csv(&p, &grid).unwrap();
        assert_eq!(read_label_grid(&p).unwrap(), grid);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "0,1\n2,-3\n").unwrap();
        match read_label_grid(&bad) {
            Err(Error::Ingest(msg)) => assert!(msg.contains("-3") && msg.contains("row 1")),
            other => panic!("expected Ingest error, got {other:?}"),
        }
    }

    #[test]
    fn float_csv_roundtrip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let grid =
            Array2::from_shape_vec((2, 2), vec![0.0f64, 0.123456789012345, 1.0, 1e-8]).unwrap();
        write_float_csv(&p, &grid).unwrap();
        let back: Array2<f64> = read_float_grid(&p).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn float_png16_quantizes_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let grid = Array2::from_shape_vec((1, 3), vec![0.0f64, 0.5, 1.0]).unwrap();
        write_float_png16(&p, &grid).unwrap();
        let back: Array2<f64> = read_float_grid(&p).unwrap();
        assert!((back[[0, 0]] - 0.0).abs() < 1e-4);
        assert!((back[[0, 1]] - 0.5).abs() < 1e-4);
        assert!((back[[0, 2]] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn ragged_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ragged.csv");
        fs::write(&p, "1,2,3\n4,5\n").unwrap();
        assert!(read_label_grid(&p).is_err());
    }
}
