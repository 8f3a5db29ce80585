//! Analysis and comparison reports (JSON) and plot data (CSV).

use std::path::Path;

use alod_core::analysis::{ComparisonReport, DecayAnalysis, DualSlope};
use alod_core::bands;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jobs::InputRef;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub tool: String,
    pub alod_version: String,
    pub core_version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        ToolInfo {
            tool: "alod".into(),
            alod_version: env!("CARGO_PKG_VERSION").into(),
            core_version: alod_core::VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrInfo {
    pub file: InputRef,
    pub fs: f64,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub center_hz: f64,
    pub energy: f64,
    pub t30_s: Option<f64>,
    pub t20_s: Option<f64>,
    pub edt_s: Option<f64>,
}

/// `analyze` output. Broadband values refer to the combined 500 Hz and
/// 1 kHz bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub provenance: ToolInfo,
    pub input: IrInfo,
    pub t30_s: f64,
    pub t20_s: f64,
    pub edt_s: f64,
    pub dual_slope: Option<DualSlope>,
    pub bands: Vec<BandRow>,
    pub truncated_at_samples: Option<usize>,
}

impl AnalysisReport {
    pub fn new(input: IrInfo, a: &DecayAnalysis) -> Self {
        AnalysisReport {
            schema_version: REPORT_SCHEMA,
            provenance: ToolInfo::current(),
            input,
            t30_s: a.t30,
            t20_s: a.t20,
            edt_s: a.edt,
            dual_slope: a.dual_slope,
            bands: a
                .bands
                .iter()
                .enumerate()
                .map(|(b, d)| BandRow {
                    center_hz: bands::NOMINAL_CENTERS[b],
                    energy: d.energy,
                    t30_s: d.t30,
                    t20_s: d.t20,
                    edt_s: d.edt,
                })
                .collect(),
            truncated_at_samples: a.truncated_at,
        }
    }

    pub fn summary(&self) -> Vec<String> {
        let mut out = vec![format!(
            "T30 {:.3} s  T20 {:.3} s  EDT {:.3} s",
            self.t30_s, self.t20_s, self.edt_s
        )];
        out.push(match &self.dual_slope {
            Some(d) => format!(
                "dual slope: knee {:.1} dB, slopes {:.1} / {:.1} dB/s",
                d.knee_db, d.early_slope, d.late_slope
            ),
            None => "single slope".into(),
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDistance {
    pub center_hz: f64,
    pub distance_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub provenance: ToolInfo,
    pub a: IrInfo,
    pub b: IrInfo,
    pub band_spectral_distance: Vec<BandDistance>,
    pub edc_difference_area_db_s: f64,
    /// T30 of `b` minus T30 of `a`.
    pub t30_delta_s: Option<f64>,
}

impl CompareReport {
    pub fn new(a: IrInfo, b: IrInfo, r: &ComparisonReport) -> Self {
        CompareReport {
            schema_version: REPORT_SCHEMA,
            provenance: ToolInfo::current(),
            a,
            b,
            band_spectral_distance: r
                .band_spectral_distance_db
                .iter()
                .enumerate()
                .map(|(i, d)| BandDistance {
                    center_hz: bands::NOMINAL_CENTERS[i],
                    distance_db: *d,
                })
                .collect(),
            edc_difference_area_db_s: r.edc_difference_area,
            t30_delta_s: r.t30_delta,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    })
}

fn csv_fail(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::parse(path, e)
}

/// Plot data: `edc.csv` (time, broadband and mid-band EDC) and `bands.csv`.
pub fn write_plot_csv(dir: &Path, a: &DecayAnalysis) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("edc.csv");
    let mut w = csv_writer(&path)?;
    let fail = csv_fail(&path);
    w.write_record(["time_s", "edc_db", "mid_edc_db"]).map_err(&fail)?;
    for (i, (e, m)) in a.edc_db.iter().zip(&a.mid_edc_db).enumerate() {
        w.write_record([(i as f64 / a.fs).to_string(), e.to_string(), m.to_string()])
            .map_err(&fail)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("bands.csv");
    let mut w = csv_writer(&path)?;
    let fail = csv_fail(&path);
    w.write_record(["center_hz", "energy", "t30_s", "t20_s", "edt_s"]).map_err(&fail)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (b, d) in a.bands.iter().enumerate() {
        w.write_record([
            bands::NOMINAL_CENTERS[b].to_string(),
            d.energy.to_string(),
            opt(d.t30),
            opt(d.t20),
            opt(d.edt),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
