//! Frame export as binary portable pixmaps (P6, 8-bit): one image file per
//! frame per grid, values round(255·v) after clamping to [0, 1].

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn ppm_bytes(grid: &Grid, frame: usize) -> Vec<u8> {
    let (h, w) = (grid.height(), grid.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = if c < grid.channels() { grid.get(frame, y, x, c) } else { 0.0 };
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Write `<name>_f<frame>.ppm` for every frame of every named grid.
pub fn export_frames(grids: &[(String, Grid)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, grid) in grids {
        for f in 0..grid.frames() {
            let path = out_dir.join(format!("{name}_f{f:03}.ppm"));
            let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            file.write_all(&ppm_bytes(grid, f))
                .map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rounding() {
        let g = Grid::from_f32((1, 1, 2), 3, vec![0.0, 0.5, 1.0, -0.2, 1.7, 0.25]).unwrap();
        let bytes = ppm_bytes(&g, 0);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        let px = &bytes[bytes.len() - 6..];
        assert_eq!(px, &[0, 128, 255, 0, 255, 64]);
    }

    #[test]
    fn export_writes_one_file_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::zeros((3, 2, 2), 3, crate::numerics::DType::F32);
        let files = export_frames(&[("depth".into(), g)], dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(dir.path().join("depth_f001.ppm").exists());
    }
}
