//! Output files: tracked so a failed command leaves nothing half-written.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use pulmo_core::signal_io::{save_audio, Waveform};

use crate::CliError;

/// Files written by one command. Unless [`Outputs::commit`] is called, dropping
/// removes every file written so far, and the directory if it was created here.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, written: Vec::new(), committed: false })
    }

    fn claim(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }

    pub fn wav(&mut self, name: &str, waveform: &Waveform) -> Result<(), CliError> {
        let path = self.claim(name);
        save_audio(waveform, &path)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.claim(name);
        fs::write(&path, contents).map_err(|e| io_error(&path, e))
    }

    /// CSV with a header row; every record must match the header width.
    pub fn csv<I, R>(&mut self, name: &str, header: &[String], records: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.claim(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(fail)?;
        for record in records {
            w.write_record(record).map_err(fail)?;
        }
        w.flush().map_err(|e| io_error(&path, e))
    }

    /// Matrix as CSV: a leading axis column, then one column per matrix column.
    pub fn matrix_csv(&mut self, name: &str, axis_name: &str, axis: &[f64], col_prefix: &str, m: ArrayView2<f64>) -> Result<(), CliError> {
        let mut header = vec![axis_name.to_string()];
        header.extend((0..m.ncols()).map(|c| format!("{col_prefix}{c}")));
        let records = m.rows().into_iter().zip(axis).map(|(row, a)| std::iter::once(a.to_string()).chain(row.iter().map(|v| v.to_string())).collect::<Vec<_>>());
        self.csv(name, &header, records)
    }

    /// 8-bit binary PGM. `m` is frames x bins; the image puts time on the
    /// horizontal axis and the highest bin on the top row. Values are mapped
    /// linearly from `[lo, hi]` to `[0, 255]`.
    pub fn pgm(&mut self, name: &str, m: ArrayView2<f64>, lo: f64, hi: f64) -> Result<(), CliError> {
        let path = self.claim(name);
        let (frames, bins) = m.dim();
        let span = if hi > lo { hi - lo } else { 1.0 };
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(file);
        let mut pixels = Vec::with_capacity(frames * bins);
        for b in (0..bins).rev() {
            for n in 0..frames {
                let v = ((m[[n, b]] - lo) / span).clamp(0.0, 1.0);
                pixels.push((v * 255.0).round() as u8);
            }
        }
        write!(w, "P5\n{frames} {bins}\n255\n").and_then(|_| w.write_all(&pixels)).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))
    }

    /// Magnitude spectrogram in dB over an 80 dB range below its peak.
    pub fn spectrogram_pgm(&mut self, name: &str, magnitude: &Array2<f64>) -> Result<(), CliError> {
        let db = magnitude.mapv(|v| 20.0 * v.max(1e-12).log10());
        let hi = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.pgm(name, db.view(), hi - 80.0, hi)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        if self.created_dir {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// `key = value` manifest lines.
pub fn manifest(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Formats a float with fixed decimals for summary tables.
pub fn fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}
