//! The `simulate`, `conceal` and `evaluate` commands as library calls.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! masks/mask_0001.txt ...      loss masks, one per inter frame
//! <method>/frame_0000.pgm ...  concealed frames per method
//! report.csv                   concealment report
//! evaluation.csv               evaluate output
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::concealment::{
    blank_lost, conceal, select_alpha_for_estimate, simulate_loss, ConcealmentReport, LossMask,
    Method, DEFAULT_ALPHA_GRID, DEFAULT_MB_SIZE,
};
use crate::error::{Error, Result};
use crate::imaging::Frame;
use crate::metrics_io::{list_pgm_files, psnr, write_pgm, write_report, SequenceSource};
use crate::motion::{estimate_field, EstimationConfig};
use crate::regularizer::BregmanConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaMode {
    #[default]
    Fixed,
    /// Per-frame hold-out search over the alpha grid.
    Search,
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "search" => Ok(AlphaMode::Search),
            other => Err(Error::InvalidParameter {
                name: "alpha_mode",
                reason: format!("unknown mode `{other}` (expected fixed or search)"),
            }),
        }
    }
}

/// Where frames come from: a PGM directory, or a raw 4:2:0 file when `raw`
/// carries its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub path: PathBuf,
    pub raw: Option<(usize, usize)>,
}

impl InputSpec {
    pub fn open(&self) -> Result<SequenceSource> {
        match self.raw {
            Some((w, h)) => SequenceSource::raw_yuv420(&self.path, w, h),
            None => SequenceSource::pgm_directory(&self.path),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: InputSpec,
    pub frames: Option<usize>,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub loss_rate: f64,
    pub seed: u64,
    pub mask_in: Option<PathBuf>,
    pub mask_out: Option<PathBuf>,
    pub alpha_mode: AlphaMode,
    pub alpha_grid: Vec<f64>,
    pub mb_size: usize,
    pub report: Option<PathBuf>,
    /// Root of the concealed sequences read by `evaluate`.
    pub concealed: Option<PathBuf>,
    pub parallel_eval: bool,
    pub estimation: EstimationConfig,
    pub bregman: BregmanConfig,
}

impl RunConfig {
    /// Defaults: 5% loss, seed 1, q = 1, gamma = 0.8, alpha = 1, 16x16 blocks.
    pub fn new(input: InputSpec, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            input,
            frames: None,
            output_dir: output_dir.into(),
            methods: vec![Method::Bregman],
            loss_rate: 0.05,
            seed: 1,
            mask_in: None,
            mask_out: None,
            alpha_mode: AlphaMode::Fixed,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            mb_size: DEFAULT_MB_SIZE,
            report: None,
            concealed: None,
            parallel_eval: false,
            estimation: EstimationConfig::default(),
            bregman: BregmanConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(Error::InvalidParameter {
                name: "loss_rate",
                reason: format!("{} is outside [0, 1]", self.loss_rate),
            });
        }
        if self.mb_size == 0 {
            return Err(Error::InvalidParameter {
                name: "mb_size",
                reason: "must be at least 1".into(),
            });
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter {
                name: "method",
                reason: "no method selected".into(),
            });
        }
        self.estimation.validate()?;
        self.bregman.validate()
    }

    fn mask_out_dir(&self) -> PathBuf {
        self.mask_out
            .clone()
            .unwrap_or_else(|| self.output_dir.join("masks"))
    }

    fn frame_count(&self, source: &SequenceSource) -> usize {
        self.frames
            .map_or(source.frame_count, |n| n.min(source.frame_count))
    }
}

pub fn mask_file_name(frame: usize) -> String {
    format!("mask_{frame:04}.txt")
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:04}.pgm")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn simulated_mask(cfg: &RunConfig, width: usize, height: usize, frame: usize) -> Result<LossMask> {
    let grid = LossMask::for_frame(width, height, cfg.mb_size)?;
    simulate_loss(
        grid.mb_rows(),
        grid.mb_cols(),
        cfg.mb_size,
        cfg.loss_rate,
        cfg.seed.wrapping_add(frame as u64),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulateSummary {
    pub masks_written: usize,
    pub total_mbs: usize,
    pub lost_mbs: usize,
    pub mask_dir: PathBuf,
}

/// Writes one loss mask per inter frame, seeded with `seed + frame_index`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    cfg.validate()?;
    let source = cfg.input.open()?;
    let n = cfg.frame_count(&source);
    let dir = cfg.mask_out_dir();
    create_dir(&dir)?;
    let mut summary = SimulateSummary {
        masks_written: 0,
        total_mbs: 0,
        lost_mbs: 0,
        mask_dir: dir.clone(),
    };
    for k in 1..n {
        let mask = simulated_mask(cfg, source.width, source.height, k)?;
        mask.write(&dir.join(mask_file_name(k)))?;
        summary.masks_written += 1;
        summary.total_mbs += mask.len();
        summary.lost_mbs += mask.lost_count();
    }
    Ok(summary)
}

/// Masks for frames `1..n`, read from `mask_in` or simulated.
fn load_masks(cfg: &RunConfig, width: usize, height: usize, n: usize) -> Result<Vec<LossMask>> {
    let Some(dir) = &cfg.mask_in else {
        return (1..n)
            .map(|k| simulated_mask(cfg, width, height, k))
            .collect();
    };
    let intra = dir.join(mask_file_name(0));
    if intra.exists() && LossMask::read(&intra)?.lost_count() > 0 {
        return Err(Error::IntraLoss { frame: 0 });
    }
    (1..n)
        .map(|k| {
            let path = dir.join(mask_file_name(k));
            if !path.exists() {
                return Err(Error::Input(format!("missing mask {}", path.display())));
            }
            let mask = LossMask::read(&path)?;
            if !mask.matches_frame(width, height) {
                return Err(Error::MalformedMask {
                    path,
                    reason: format!(
                        "{}x{} grid of {}-pixel blocks does not cover a {width}x{height} frame",
                        mask.mb_cols(),
                        mask.mb_rows(),
                        mask.mb_size()
                    ),
                });
            }
            Ok(mask)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConcealSummary {
    pub reports: Vec<ConcealmentReport>,
    /// `(frame, method)` pairs whose solver hit its iteration cap.
    pub nonconverged: Vec<(usize, Method)>,
    pub report_path: PathBuf,
}

/// Damages each inter frame with its mask, conceals it with every selected
/// method and scores it against the original.
///
/// Frame 0 is an intact intra reference. Each concealed frame, quantized to
/// 8 bits, is the reference for the next one.
pub fn cmd_conceal(cfg: &RunConfig) -> Result<ConcealSummary> {
    cfg.validate()?;
    let source = cfg.input.open()?;
    let n = cfg.frame_count(&source);
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 frames, found {n}")));
    }
    let originals = source.read_all(Some(n))?;
    let (w, h) = (source.width, source.height);
    let masks = load_masks(cfg, w, h, n)?;

    if cfg.mask_out.is_some() {
        let dir = cfg.mask_out_dir();
        create_dir(&dir)?;
        for (k, mask) in masks.iter().enumerate() {
            mask.write(&dir.join(mask_file_name(k + 1)))?;
        }
    }

    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();

    let mut reports = Vec::new();
    let mut nonconverged = Vec::new();
    for &method in &methods {
        let dir = cfg.output_dir.join(method.name());
        create_dir(&dir)?;
        write_pgm(&originals[0], &dir.join(frame_file_name(0)))?;
        let mut reference = originals[0].quantized();
        for k in 1..n {
            let mask = &masks[k - 1];
            let damaged = blank_lost(&originals[k], mask, 0.0)?;
            let breg = bregman_config_for(cfg, method, &damaged, &reference, mask, k)?;
            let out = conceal(method, &damaged, &reference, mask, &cfg.estimation, &breg)?;
            let decoded = out.frame.quantized();
            write_pgm(&decoded, &dir.join(frame_file_name(k)))?;
            if !out.converged {
                nonconverged.push((k, method));
            }
            reports.push(ConcealmentReport {
                frame_index: k,
                method,
                psnr_db: psnr(&originals[k], &decoded)?,
                lost_mb_count: mask.lost_count(),
                solver_outer_iters: out.outer_iterations,
                final_q: out.final_q,
            });
            reference = decoded;
        }
    }

    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("report.csv"));
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_report(&reports, &report_path)?;
    Ok(ConcealSummary {
        reports,
        nonconverged,
        report_path,
    })
}

fn bregman_config_for(
    cfg: &RunConfig,
    method: Method,
    damaged: &Frame,
    reference: &Frame,
    mask: &LossMask,
    frame: usize,
) -> Result<BregmanConfig> {
    if method != Method::Bregman || cfg.alpha_mode == AlphaMode::Fixed {
        return Ok(cfg.bregman.clone());
    }
    let legit = mask.legit_pixels(damaged.width(), damaged.height());
    let estimate = estimate_field(damaged, reference, &legit, &cfg.estimation)?;
    let selection = select_alpha_for_estimate(
        damaged,
        reference,
        &estimate,
        cfg.estimation.d_max,
        &cfg.bregman,
        &cfg.alpha_grid,
        cfg.seed.wrapping_add(frame as u64),
    )?;
    Ok(BregmanConfig {
        alpha: selection.best,
        ..cfg.bregman.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub frame: usize,
    pub method: String,
    pub psnr_db: f64,
}

pub const EVALUATION_HEADER: &str = "frame,method,psnr_db";

pub fn format_evaluation(rows: &[EvaluationRow]) -> String {
    let mut sorted: Vec<&EvaluationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.frame.cmp(&b.frame).then_with(|| a.method.cmp(&b.method)));
    let mut out = format!("{EVALUATION_HEADER}\n");
    for r in sorted {
        writeln!(out, "{},{},{:.6}", r.frame, r.method, r.psnr_db).unwrap();
    }
    out
}

/// Sequences under the concealed root: each subdirectory holding PGM files
/// is one method; a root that holds PGM files itself is a single sequence.
fn concealed_sequences(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    if !list_pgm_files(root)?.is_empty() {
        let name = root
            .file_name()
            .map_or("concealed".into(), |n| n.to_string_lossy().into_owned());
        found.push((name, root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        if !list_pgm_files(&dir)?.is_empty() {
            let name = dir.file_name().unwrap().to_string_lossy().into_owned();
            found.push((name, dir));
        }
    }
    if found.is_empty() {
        return Err(Error::Input(format!(
            "no concealed PGM sequences under {}",
            root.display()
        )));
    }
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub rows: Vec<EvaluationRow>,
    pub report_path: PathBuf,
}

/// Per-frame PSNR of every concealed sequence against the originals.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    let source = cfg.input.open()?;
    let n = cfg.frame_count(&source);
    let originals = source.read_all(Some(n))?;
    let root = cfg.concealed.clone().ok_or_else(|| {
        Error::Input("evaluate needs the concealed sequence root (--concealed)".into())
    })?;

    let mut jobs = Vec::new();
    for (method, dir) in concealed_sequences(&root)? {
        let seq = SequenceSource::pgm_directory(&dir)?;
        if (seq.width, seq.height) != (source.width, source.height) {
            return Err(Error::ShapeMismatch {
                expected: (source.width, source.height),
                actual: (seq.width, seq.height),
            });
        }
        if seq.frame_count < n {
            return Err(Error::Input(format!(
                "{} holds {} frames, originals have {n}",
                dir.display(),
                seq.frame_count
            )));
        }
        for k in 0..n {
            jobs.push((method.clone(), seq.clone(), k));
        }
    }

    let score = |(method, seq, k): &(String, SequenceSource, usize)| -> Result<EvaluationRow> {
        Ok(EvaluationRow {
            frame: *k,
            method: method.clone(),
            psnr_db: psnr(&originals[*k], &seq.read_frame(*k)?)?,
        })
    };
    let rows: Vec<EvaluationRow> = if cfg.parallel_eval {
        jobs.par_iter().map(score).collect::<Result<_>>()?
    } else {
        jobs.iter().map(score).collect::<Result<_>>()?
    };

    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("evaluation.csv"));
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&report_path, format_evaluation(&rows)).map_err(|e| Error::io(&report_path, e))?;
    Ok(EvaluateSummary { rows, report_path })
}
