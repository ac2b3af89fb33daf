//! Accuracy-versus-resource sweeps over bit width, sparsity and reuse.

pub mod fixtures;
mod metrics;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{metric_accuracy, metric_auc};
pub use synthetic::{blob_means, make_synthetic, BLOB_SEPARATION};

use crate::dataset::Dataset;
use crate::emulate::{emulate_fixed, emulate_float, AccumulationOrder, EmulateError, Prediction};
use crate::estimate::{estimate, CostModel, EstimateError};
use crate::lower::{lower, LowerError};
use crate::model::Model;
use crate::quantize::{
    calibrate_formats, prune_fcnn, quantize_model, PruningConfig, QuantizeError, Widths,
};

/// Float decision margin below which a sample counts as a near tie.
pub const MARGIN_GUARD: f64 = 1.0 / 256.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("no samples")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("NaN score")]
    NanScore,
    #[error("empty {0} grid")]
    EmptyGrid(&'static str),
    #[error("sparsity {0} requested for a tree ensemble")]
    SparsityOnBdt(f64),
    #[error(transparent)]
    Emulate(#[from] EmulateError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::Length { .. } => "LengthMismatch",
            BenchError::Empty => "EmptyDataset",
            BenchError::SingleClass => "SingleClass",
            BenchError::NanScore => "NanScore",
            BenchError::EmptyGrid(_) => "EmptyGrid",
            BenchError::SparsityOnBdt(_) => "InvalidConfig",
            BenchError::Emulate(_) => "FeatureCount",
            BenchError::Quantize(e) => e.code(),
            BenchError::Lower(e) => e.code(),
            BenchError::Estimate(e) => e.code(),
            BenchError::Csv(_) => "Io",
            BenchError::Pool(_) => "Internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub widths: Vec<u32>,
    pub sparsity: Vec<f64>,
    pub reuse: Vec<u32>,
}

impl SweepGrid {
    /// Points in iteration order: width outermost, then sparsity, then reuse.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &width in &self.widths {
            for &sparsity in &self.sparsity {
                for &reuse in &self.reuse {
                    out.push(GridPoint {
                        width,
                        sparsity,
                        reuse,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub width: u32,
    pub sparsity: f64,
    pub reuse: u32,
}

/// Extra per-row metric computed from fixed predictions and the dataset.
pub type MetricHook = Arc<dyn Fn(&[Prediction], &Dataset) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SweepOptions {
    /// Rows used to calibrate formats; the evaluation data when unset.
    pub calibration: Option<Dataset>,
    pub accum_width: Option<u32>,
    pub order: AccumulationOrder,
    pub cost_model: CostModel,
    /// Worker threads; rayon's default when unset.
    pub jobs: Option<usize>,
    pub metrics: Vec<(String, MetricHook)>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            calibration: None,
            accum_width: None,
            order: AccumulationOrder::Tree,
            cost_model: CostModel::default(),
            jobs: None,
            metrics: Vec::new(),
        }
    }
}

/// One grid point. When quantization or lowering fails the row keeps its
/// grid coordinates, `status` holds the error code and the measurements
/// are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub width: u32,
    pub sparsity: f64,
    pub reuse: u32,
    pub status: String,
    pub accuracy: Option<f64>,
    pub float_accuracy: Option<f64>,
    pub auc: Option<f64>,
    /// Fraction of samples whose fixed class differs from the float class
    /// of the same (pruned) model.
    pub mismatch_vs_float: Option<f64>,
    /// Same, over samples whose float margin exceeds [`MARGIN_GUARD`].
    pub guarded_mismatch: Option<f64>,
    /// Fraction of samples with float margin at most [`MARGIN_GUARD`].
    pub margin_tie_rate: Option<f64>,
    pub lut: Option<u64>,
    pub ff: Option<u64>,
    pub dsp: Option<u64>,
    pub bram: Option<u64>,
    pub latency_cycles: Option<u32>,
    pub initiation_interval: Option<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

/// Column order of [`rows_to_csv`]; user metrics follow in name order.
pub const SWEEP_CSV_HEADER: [&str; 17] = [
    "width",
    "sparsity",
    "reuse",
    "status",
    "accuracy",
    "float_accuracy",
    "auc",
    "mismatch_vs_float",
    "guarded_mismatch",
    "margin_tie_rate",
    "lut",
    "ff",
    "dsp",
    "bram",
    "latency_cycles",
    "initiation_interval",
    "model_kind",
];

/// Score used for AUC on two-class problems: the single output, or the
/// class-1 logit minus the class-0 logit.
fn binary_score(scores: &[f64]) -> f64 {
    match scores {
        [s] => *s,
        [a, b, ..] => b - a,
        [] => 0.0,
    }
}

fn auc_of(preds: &[Prediction], data: &Dataset) -> Option<f64> {
    if data.labels.iter().any(|l| *l > 1) {
        return None;
    }
    let scores: Vec<f64> = preds.iter().map(|p| binary_score(&p.scores)).collect();
    let labels: Vec<bool> = data.labels.iter().map(|l| *l == 1).collect();
    metric_auc(&scores, &labels).ok()
}

fn failed_row(p: GridPoint, code: &str) -> SweepRow {
    SweepRow {
        width: p.width,
        sparsity: p.sparsity,
        reuse: p.reuse,
        status: code.to_string(),
        accuracy: None,
        float_accuracy: None,
        auc: None,
        mismatch_vs_float: None,
        guarded_mismatch: None,
        margin_tie_rate: None,
        lut: None,
        ff: None,
        dsp: None,
        bram: None,
        latency_cycles: None,
        initiation_interval: None,
        extra: BTreeMap::new(),
    }
}

/// Evaluates a single grid point.
pub fn run_point(
    model: &Model,
    data: &Dataset,
    p: GridPoint,
    opts: &SweepOptions,
) -> Result<SweepRow, BenchError> {
    if data.is_empty() {
        return Err(BenchError::Empty);
    }
    data.check_features(model.n_features())
        .map_err(|_| EmulateError::FeatureCount {
            expected: model.n_features(),
            found: data.n_features(),
        })?;
    let (model, masks) = match model {
        Model::Fcnn(f) => {
            let (pruned, masks) =
                prune_fcnn(f, &PruningConfig::uniform(p.sparsity, f.layers.len()))?;
            (Model::Fcnn(pruned), Some(masks))
        }
        Model::Bdt(_) if p.sparsity != 0.0 => return Err(BenchError::SparsityOnBdt(p.sparsity)),
        Model::Bdt(_) => (model.clone(), None),
    };
    let mut widths = Widths::uniform(p.width);
    widths.accum = opts.accum_width;
    let calib = opts.calibration.as_ref().unwrap_or(data);
    let q = match calibrate_formats(&model, calib, &widths)
        .and_then(|cfg| quantize_model(&model, &cfg, masks.as_deref()))
    {
        Ok(q) => q,
        Err(e @ (QuantizeError::WidthTooSmall { .. } | QuantizeError::InvalidConfig(_))) => {
            return Ok(failed_row(p, e.code()))
        }
        Err(e) => return Err(e.into()),
    };
    let netlist = lower(&q, p.reuse, "sweep")?;
    let report = estimate(&netlist, &opts.cost_model)?;
    let fixed = emulate_fixed(&q, data, opts.order)?;
    let float = emulate_float(&model, data)?;
    let fixed_classes: Vec<usize> = fixed.iter().map(|p| p.class).collect();
    let float_classes: Vec<usize> = float.iter().map(|p| p.class).collect();
    let n = data.len() as f64;
    let mismatches = fixed_classes
        .iter()
        .zip(&float_classes)
        .filter(|(a, b)| a != b)
        .count();
    let guarded: Vec<bool> = float
        .iter()
        .map(|p| p.margin.unwrap_or(0.0) > MARGIN_GUARD)
        .collect();
    let n_guarded = guarded.iter().filter(|g| **g).count();
    let guarded_mismatches = fixed_classes
        .iter()
        .zip(&float_classes)
        .zip(&guarded)
        .filter(|((a, b), g)| **g && a != b)
        .count();
    let extra = opts
        .metrics
        .iter()
        .map(|(name, hook)| (name.clone(), hook(&fixed, data)))
        .collect();
    Ok(SweepRow {
        width: p.width,
        sparsity: p.sparsity,
        reuse: p.reuse,
        status: "ok".into(),
        accuracy: Some(metric_accuracy(&fixed_classes, &data.labels)?),
        float_accuracy: Some(metric_accuracy(&float_classes, &data.labels)?),
        auc: auc_of(&fixed, data),
        mismatch_vs_float: Some(mismatches as f64 / n),
        guarded_mismatch: Some(if n_guarded == 0 {
            0.0
        } else {
            guarded_mismatches as f64 / n_guarded as f64
        }),
        margin_tie_rate: Some((data.len() - n_guarded) as f64 / n),
        lut: Some(report.lut),
        ff: Some(report.ff),
        dsp: Some(report.dsp),
        bram: Some(report.bram),
        latency_cycles: Some(report.latency_cycles),
        initiation_interval: Some(report.initiation_interval),
        extra,
    })
}

/// Evaluates every grid point, in parallel, returning rows in grid order.
pub fn sweep(
    model: &Model,
    data: &Dataset,
    grid: &SweepGrid,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>, BenchError> {
    for (name, empty) in [
        ("width", grid.widths.is_empty()),
        ("sparsity", grid.sparsity.is_empty()),
        ("reuse", grid.reuse.is_empty()),
    ] {
        if empty {
            return Err(BenchError::EmptyGrid(name));
        }
    }
    let points = grid.points();
    let work = || -> Result<Vec<SweepRow>, BenchError> {
        points
            .par_iter()
            .map(|p| run_point(model, data, *p, opts))
            .collect()
    };
    match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

/// CSV with [`SWEEP_CSV_HEADER`] columns then any user metrics.
pub fn rows_to_csv(rows: &[SweepRow], model_kind: &str) -> Result<String, BenchError> {
    let extra: Vec<String> = rows
        .iter()
        .flat_map(|r| r.extra.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = SWEEP_CSV_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(extra.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.width.to_string(),
            r.sparsity.to_string(),
            r.reuse.to_string(),
            r.status.clone(),
            opt(&r.accuracy),
            opt(&r.float_accuracy),
            opt(&r.auc),
            opt(&r.mismatch_vs_float),
            opt(&r.guarded_mismatch),
            opt(&r.margin_tie_rate),
            opt(&r.lut),
            opt(&r.ff),
            opt(&r.dsp),
            opt(&r.bram),
            opt(&r.latency_cycles),
            opt(&r.initiation_interval),
            model_kind.to_string(),
        ];
        rec.extend(extra.iter().map(|k| opt(&r.extra.get(k))));
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| BenchError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<PlotPoint>,
}

fn series_label(r: &SweepRow) -> String {
    format!("sparsity={} reuse={}", r.sparsity, r.reuse)
}

/// Accuracy against LUT + DSP count, one labelled series per
/// sparsity/reuse pair. Failed rows are left out.
pub fn plot_data(rows: &[SweepRow]) -> PlotData {
    let points = rows
        .iter()
        .filter_map(|r| {
            Some(PlotPoint {
                x: (r.lut? + r.dsp?) as f64,
                y: r.accuracy?,
                label: series_label(r),
            })
        })
        .collect();
    PlotData {
        x_label: "lut+dsp".into(),
        y_label: "accuracy".into(),
        points,
    }
}

/// Whitespace-separated table for gnuplot, one block per series separated
/// by two blank lines so `index` selects a series.
pub fn rows_to_dat(rows: &[SweepRow]) -> String {
    let mut groups: Vec<(String, Vec<&SweepRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let label = series_label(r);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, g)) => g.push(r),
            None => groups.push((label, vec![r])),
        }
    }
    let mut s =
        String::from("# width accuracy auc lut ff dsp bram latency_cycles initiation_interval\n");
    for (i, (label, group)) in groups.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# {label}");
        for r in group {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {}",
                r.width,
                opt(&r.accuracy),
                r.auc.map_or("nan".into(), |a| a.to_string()),
                opt(&r.lut),
                opt(&r.ff),
                opt(&r.dsp),
                opt(&r.bram),
                opt(&r.latency_cycles),
                opt(&r.initiation_interval),
            );
        }
    }
    s
}
