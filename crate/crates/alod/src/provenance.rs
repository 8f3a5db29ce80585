//! Provenance sidecars: versions, seeds, plan digest, the job itself and
//! hashes of every output. Running the recorded job again must reproduce
//! the outputs byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jobs::{sha256_hex, Job, JobOutput};

pub const SIDECAR_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub alod_version: String,
    pub core_version: String,
    pub command: String,
    /// Command line as invoked; informational, the job is authoritative.
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub plan_digest: Option<String>,
}

impl Provenance {
    pub fn new(job: &Job, argv: Vec<String>, plan_digest: Option<String>) -> Self {
        Provenance {
            tool: "alod".into(),
            alod_version: env!("CARGO_PKG_VERSION").into(),
            core_version: alod_core::VERSION.into(),
            command: job.name().into(),
            argv,
            seed: job.seed(),
            plan_digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRef {
    /// File name relative to the sidecar's directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub job: Job,
    /// Name of the main output without extension.
    pub stem: String,
    pub outputs: Vec<OutputRef>,
}

/// Where a job's files go.
#[derive(Debug, Clone, PartialEq)]
pub struct Destination {
    pub dir: PathBuf,
    pub stem: String,
    pub sidecar: PathBuf,
}

impl Destination {
    /// Outputs beside `file`, sidecar `<stem>.provenance.json`.
    pub fn for_file(file: &Path) -> Self {
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = file
            .file_stem()
            .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
        let sidecar = dir.join(format!("{stem}.provenance.json"));
        Destination { dir, stem, sidecar }
    }

    /// Outputs inside `dir`, sidecar `provenance.json`.
    pub fn for_dir(dir: &Path, stem: &str) -> Self {
        Destination {
            dir: dir.to_path_buf(),
            stem: stem.into(),
            sidecar: dir.join("provenance.json"),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Run `job`, write its outputs and the sidecar. Returns the sidecar and
/// the job output.
pub fn execute(job: &Job, dest: &Destination, argv: Vec<String>) -> Result<(Sidecar, JobOutput)> {
    let out = job.run(&dest.stem)?;
    if !dest.dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dest.dir).map_err(|e| Error::io(&dest.dir, e))?;
    }
    let mut outputs = Vec::new();
    for a in &out.artifacts {
        write(&dest.dir.join(&a.name), &a.bytes)?;
        outputs.push(OutputRef {
            file: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
        });
    }
    let sidecar = Sidecar {
        schema_version: SIDECAR_SCHEMA,
        provenance: Provenance::new(job, argv, out.plan_digest.clone()),
        job: job.clone(),
        stem: dest.stem.clone(),
        outputs,
    };
    let text = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write(&dest.sidecar, &text)?;
    Ok((sidecar, out))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let s: Sidecar = serde_json::from_slice(&text).map_err(|e| Error::parse(path, e))?;
    if s.schema_version != SIDECAR_SCHEMA {
        return Err(Error::parse(path, format!("unsupported sidecar schema {}", s.schema_version)));
    }
    Ok(s)
}

/// Outcome of re-running a recorded job.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub checked: usize,
    /// Files whose regenerated bytes differ from the record.
    pub mismatched: Vec<String>,
}

impl Replay {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Run the job recorded in `sidecar` again and compare every output hash.
/// Nothing is written.
pub fn replay(sidecar: &Sidecar) -> Result<Replay> {
    let out = sidecar.job.run(&sidecar.stem)?;
    let mut mismatched = Vec::new();
    for rec in &sidecar.outputs {
        let now = out.artifacts.iter().find(|a| a.name == rec.file);
        if now.map(|a| sha256_hex(&a.bytes)) != Some(rec.sha256.clone()) {
            mismatched.push(rec.file.clone());
        }
    }
    if out.artifacts.len() != sidecar.outputs.len() {
        mismatched.push(format!(
            "output count {} vs recorded {}",
            out.artifacts.len(),
            sidecar.outputs.len()
        ));
    }
    Ok(Replay {
        checked: sidecar.outputs.len(),
        mismatched,
    })
}
