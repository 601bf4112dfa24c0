//! Rate-distortion CSV files.
//!
//! ```text
//! # pcqe rd-curve v1
//! qp,bitrate_bpip,psnr_y,psnr_cb,psnr_cr,psnr_ycbcr
//! 51,0.4102,24.1130,33.0210,32.7781,26.4101
//! ```
//!
//! Readers only need a `bitrate_bpip` column plus the PSNR column being
//! compared; a bare `psnr` column is accepted as well.

use std::io::{Read, Write};
use std::path::Path;

use pcqe_core::metrics::RdCurve;
use pcqe_core::{Error, Result};

pub const RD_HEADER: &str = "# pcqe rd-curve v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdRow {
    pub qp: i32,
    pub bitrate: f64,
    /// Y, Cb, Cr and the weighted YCbCr combination.
    pub psnr: [f64; 4],
}

pub fn write_rd_csv<W: Write>(mut w: W, rows: &[RdRow]) -> Result<()> {
    let io = |e| Error::io("<rd csv>", e);
    writeln!(w, "{RD_HEADER}").map_err(io)?;
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Argument(format!("rd csv: {e}"));
    out.write_record(["qp", "bitrate_bpip", "psnr_y", "psnr_cb", "psnr_cr", "psnr_ycbcr"]).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.qp.to_string(), format!("{:.6}", r.bitrate)];
        rec.extend(r.psnr.iter().map(|p| format!("{p:.6}")));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(io)
}

/// Which PSNR column a curve is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RdMetric {
    Y,
    Cb,
    Cr,
    Ycbcr,
}

impl RdMetric {
    fn column(self) -> &'static str {
        match self {
            RdMetric::Y => "psnr_y",
            RdMetric::Cb => "psnr_cb",
            RdMetric::Cr => "psnr_cr",
            RdMetric::Ycbcr => "psnr_ycbcr",
        }
    }
}

pub fn read_rd_curve<R: Read>(r: R, metric: RdMetric, origin: &Path) -> Result<RdCurve> {
    let err = |msg: String| Error::Argument(format!("{}: {msg}", origin.display()));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let rate_col = find("bitrate_bpip").or_else(|| find("bitrate")).ok_or_else(|| err("no bitrate_bpip column".into()))?;
    let psnr_col = find(metric.column()).or_else(|| find("psnr")).ok_or_else(|| err(format!("no {} column", metric.column())))?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse().map_err(|_| err(format!("row {}: '{raw}' is not a number", i + 1)))
        };
        points.push((field(rate_col)?, field(psnr_col)?));
    }
    RdCurve::new(points)
}

pub fn load_rd_curve(path: &Path, metric: RdMetric) -> Result<RdCurve> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rd_curve(f, metric, path)
}
