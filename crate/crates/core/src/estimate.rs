//! Resource and latency estimates for a netlist under a configurable,
//! data-driven cost model.
//!
//! Default rules target a generic fabric of 4-input LUTs, 18x18 DSP blocks
//! and 8 kbit block RAMs:
//!
//! | cell | cost |
//! |------|------|
//! | Const | nothing |
//! | Comparator | W LUTs, W = operand width |
//! | Add, Mux, SatCast, ReluClamp | W LUTs, W = output width |
//! | AndReduce, OrReduce | ceil(k/4) LUTs per output bit, k inputs |
//! | Mul | 1 DSP if both operands fit 18 bits, else ceil(W1/18)·ceil(W2/18) |
//! | LutRom | 1 BRAM if E·W > 8192 bits, else ceil(E·W/64) LUTs |
//! | Register | W FFs |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{verify, CellKind, NetlistError, NetlistIr};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("cost model has no rule for cell kind {0}")]
    UncoveredCellKind(String),
    #[error("cost model names unknown cell kind {0}")]
    UnknownCellKind(String),
    #[error("netlist failed verification: {0}")]
    UnverifiedNetlist(#[from] NetlistError),
    #[error("cost model: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl EstimateError {
    pub fn code(&self) -> &'static str {
        match self {
            EstimateError::UncoveredCellKind(_) => "UncoveredCellKind",
            EstimateError::UnknownCellKind(_) => "UnknownCellKind",
            EstimateError::UnverifiedNetlist(_) => "UnverifiedNetlist",
            EstimateError::Json(_) => "CostModelFormat",
            EstimateError::Io(_) => "Io",
            EstimateError::Csv(_) => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Lut,
    Ff,
    Dsp,
    Bram,
}

/// How one cell kind is costed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostRule {
    Free,
    /// `per_bit * W` of one resource.
    PerBit {
        resource: Resource,
        per_bit: u64,
    },
    /// `ceil(k / inputs_per_unit)` units per output bit for `k` inputs.
    Packed {
        resource: Resource,
        inputs_per_unit: u64,
    },
    /// Hard multiplier blocks of `port_a x port_b` bits.
    Dsp {
        port_a: u32,
        port_b: u32,
    },
    /// Block RAM above `bram_threshold_bits`, distributed LUT memory of
    /// `bits_per_lut` below.
    Rom {
        bram_threshold_bits: u64,
        bits_per_lut: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub rules: BTreeMap<String, CostRule>,
}

impl Default for CostModel {
    fn default() -> Self {
        let lut = |per_bit| CostRule::PerBit {
            resource: Resource::Lut,
            per_bit,
        };
        let packed = CostRule::Packed {
            resource: Resource::Lut,
            inputs_per_unit: 4,
        };
        let rules = [
            ("Const", CostRule::Free),
            ("Comparator", lut(1)),
            ("AndReduce", packed.clone()),
            ("OrReduce", packed),
            ("Mux", lut(1)),
            ("Add", lut(1)),
            (
                "Mul",
                CostRule::Dsp {
                    port_a: 18,
                    port_b: 18,
                },
            ),
            ("SatCast", lut(1)),
            ("ReluClamp", lut(1)),
            (
                "LutRom",
                CostRule::Rom {
                    bram_threshold_bits: 8192,
                    bits_per_lut: 64,
                },
            ),
            (
                "Register",
                CostRule::PerBit {
                    resource: Resource::Ff,
                    per_bit: 1,
                },
            ),
        ];
        Self {
            rules: rules.into_iter().map(|(k, r)| (k.to_string(), r)).collect(),
        }
    }
}

impl CostModel {
    /// Parses and checks that every cell kind has exactly the known names.
    pub fn from_json(text: &str) -> Result<Self, EstimateError> {
        let cm: CostModel = serde_json::from_str(text)?;
        cm.check()?;
        Ok(cm)
    }

    pub fn load(path: &Path) -> Result<Self, EstimateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost model serializes") + "\n"
    }

    pub fn check(&self) -> Result<(), EstimateError> {
        if let Some(k) = self
            .rules
            .keys()
            .find(|k| !CellKind::ALL_NAMES.contains(&k.as_str()))
        {
            return Err(EstimateError::UnknownCellKind(k.clone()));
        }
        if let Some(k) = CellKind::ALL_NAMES
            .iter()
            .find(|k| !self.rules.contains_key(**k))
        {
            return Err(EstimateError::UncoveredCellKind(k.to_string()));
        }
        Ok(())
    }
}

/// Resource counts for one group of cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub cells: u64,
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram: u64,
}

impl Resources {
    fn add(&mut self, r: Resource, n: u64) {
        match r {
            Resource::Lut => self.lut += n,
            Resource::Ff => self.ff += n,
            Resource::Dsp => self.dsp += n,
            Resource::Bram => self.bram += n,
        }
    }

    fn accumulate(&mut self, o: &Resources) {
        self.cells += o.cells;
        self.lut += o.lut;
        self.ff += o.ff;
        self.dsp += o.dsp;
        self.bram += o.bram;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub name: String,
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram: u64,
    pub latency_cycles: u32,
    pub initiation_interval: u32,
    /// Per cell kind; totals are the sum of these.
    pub breakdown: BTreeMap<String, Resources>,
}

pub const CSV_HEADER: [&str; 9] = [
    "name",
    "kind",
    "cells",
    "lut",
    "ff",
    "dsp",
    "bram",
    "latency_cycles",
    "initiation_interval",
];

impl ResourceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per cell kind, then a `total` row. Columns: [`CSV_HEADER`].
    pub fn to_csv(&self) -> Result<String, EstimateError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        let mut total = Resources::default();
        let rows = self.breakdown.iter().map(|(k, r)| (k.as_str(), *r));
        for (kind, r) in rows.chain(std::iter::once(("total", Resources::default()))) {
            let r = if kind == "total" { total } else { r };
            total.accumulate(&r);
            w.write_record([
                self.name.clone(),
                kind.to_string(),
                r.cells.to_string(),
                r.lut.to_string(),
                r.ff.to_string(),
                r.dsp.to_string(),
                r.bram.to_string(),
                self.latency_cycles.to_string(),
                self.initiation_interval.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| EstimateError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

fn cell_cost(n: &NetlistIr, i: usize, rule: &CostRule) -> Resources {
    let cell = &n.cells[i];
    let out_w = n.wires[cell.output].ty.width() as u64;
    let in_w = |k: usize| n.wires[cell.inputs[k]].ty.width() as u64;
    let mut r = Resources {
        cells: 1,
        ..Default::default()
    };
    match rule {
        CostRule::Free => {}
        CostRule::PerBit { resource, per_bit } => {
            let w = match cell.kind {
                CellKind::Comparator => in_w(0).max(in_w(1)),
                _ => out_w,
            };
            r.add(*resource, per_bit * w);
        }
        CostRule::Packed {
            resource,
            inputs_per_unit,
        } => r.add(
            *resource,
            div_ceil(cell.inputs.len() as u64, *inputs_per_unit) * out_w,
        ),
        CostRule::Dsp { port_a, port_b } => {
            let (a, b) = if cell.inputs.len() >= 2 {
                (in_w(0), in_w(1))
            } else {
                (out_w, 1)
            };
            let (pa, pb) = (*port_a as u64, *port_b as u64);
            let dsp = if (a <= pa && b <= pb) || (a <= pb && b <= pa) {
                1
            } else {
                div_ceil(a, pa) * div_ceil(b, pb)
            };
            r.dsp += dsp;
        }
        CostRule::Rom {
            bram_threshold_bits,
            bits_per_lut,
        } => {
            let entries = match &cell.kind {
                CellKind::LutRom { contents, .. } => contents.len() as u64,
                _ => 1,
            };
            let bits = entries * out_w;
            if bits > *bram_threshold_bits {
                r.bram += 1;
            } else {
                r.lut += div_ceil(bits, *bits_per_lut);
            }
        }
    }
    r
}

/// Sums rule costs over every cell of a verified netlist.
pub fn estimate(n: &NetlistIr, cm: &CostModel) -> Result<ResourceReport, EstimateError> {
    verify(n)?;
    let mut breakdown: BTreeMap<String, Resources> = BTreeMap::new();
    for (i, cell) in n.cells.iter().enumerate() {
        let kind = cell.kind.name();
        let rule = cm
            .rules
            .get(kind)
            .ok_or_else(|| EstimateError::UncoveredCellKind(kind.to_string()))?;
        breakdown
            .entry(kind.to_string())
            .or_default()
            .accumulate(&cell_cost(n, i, rule));
    }
    let mut total = Resources::default();
    for r in breakdown.values() {
        total.accumulate(r);
    }
    Ok(ResourceReport {
        name: n.name.clone(),
        lut: total.lut,
        ff: total.ff,
        dsp: total.dsp,
        bram: total.bram,
        latency_cycles: n.latency_cycles,
        initiation_interval: n.initiation_interval,
        breakdown,
    })
}

/// Pareto verdict between two reports, lower being better on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dominance {
    Equal,
    FirstDominates,
    SecondDominates,
    Incomparable,
}

/// Compares LUT, FF, DSP, BRAM, latency and initiation interval.
pub fn compare_reports(a: &ResourceReport, b: &ResourceReport) -> Dominance {
    let axes = |r: &ResourceReport| {
        [
            r.lut,
            r.ff,
            r.dsp,
            r.bram,
            r.latency_cycles as u64,
            r.initiation_interval as u64,
        ]
    };
    let (x, y) = (axes(a), axes(b));
    let a_better = x.iter().zip(&y).any(|(p, q)| p < q);
    let b_better = x.iter().zip(&y).any(|(p, q)| q < p);
    match (a_better, b_better) {
        (false, false) => Dominance::Equal,
        (true, false) => Dominance::FirstDominates,
        (false, true) => Dominance::SecondDominates,
        (true, true) => Dominance::Incomparable,
    }
}
