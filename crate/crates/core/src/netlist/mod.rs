//! Pipelined netlist IR shared by lowering, emission and estimation.
//!
//! Wires carry either a single bit or a fixed-point value. Every cell
//! drives exactly one wire. Registers are the only sequential cells; a
//! register with a `capture_phase` only loads when the global phase
//! counter (cycle count modulo the initiation interval) equals it.

mod interpret;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::FixedPointFormat;

pub use interpret::{interpret_netlist, run_stream, InterpretError, Simulator};
pub use verify::{topo_order, verify, Timing};

pub type WireId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireType {
    Bit,
    Fixed(FixedPointFormat),
}

impl WireType {
    /// Physical width. Unsigned formats gain a zero sign bit.
    pub fn width(&self) -> u32 {
        match self {
            WireType::Bit => 1,
            WireType::Fixed(f) => f.signed_width(),
        }
    }

    pub fn format(&self) -> Option<FixedPointFormat> {
        match self {
            WireType::Bit => None,
            WireType::Fixed(f) => Some(*f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub name: String,
    pub ty: WireType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Constant raw value.
    Const {
        raw: i128,
    },
    /// `a < b` on exact values: inputs `[a, b]`, bit output.
    Comparator,
    /// AND over bit inputs, each inverted where `invert` is set.
    AndReduce {
        invert: Vec<bool>,
    },
    /// Bitwise OR of same-format words.
    OrReduce,
    /// Inputs `[sel, a, b]`: `sel ? a : b`.
    Mux,
    /// Exact sum of `[a, b]`, cast once into the output format.
    Add,
    /// Inputs `[a0, b0, a1, b1, ...]`. Pair `j` is multiplied while
    /// `phase == (phase_offset + j) mod II`; a single pair is always used.
    Mul {
        phase_offset: u32,
    },
    /// Cast into the output format with its rounding and overflow modes.
    SatCast,
    /// `max(0, a)` in the input format.
    ReluClamp,
    /// Table lookup at `floor(a * 2^shift) + len/2`, with `below`/`above`
    /// outside the table.
    LutRom {
        shift: i32,
        contents: Vec<i128>,
        below: i128,
        above: i128,
    },
    Register {
        capture_phase: Option<u32>,
    },
}

impl CellKind {
    pub fn name(&self) -> &'static str {
        match self {
            CellKind::Const { .. } => "Const",
            CellKind::Comparator => "Comparator",
            CellKind::AndReduce { .. } => "AndReduce",
            CellKind::OrReduce => "OrReduce",
            CellKind::Mux => "Mux",
            CellKind::Add => "Add",
            CellKind::Mul { .. } => "Mul",
            CellKind::SatCast => "SatCast",
            CellKind::ReluClamp => "ReluClamp",
            CellKind::LutRom { .. } => "LutRom",
            CellKind::Register { .. } => "Register",
        }
    }

    pub fn is_register(&self) -> bool {
        matches!(self, CellKind::Register { .. })
    }

    pub const ALL_NAMES: [&'static str; 11] = [
        "Const",
        "Comparator",
        "AndReduce",
        "OrReduce",
        "Mux",
        "Add",
        "Mul",
        "SatCast",
        "ReluClamp",
        "LutRom",
        "Register",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub inputs: Vec<WireId>,
    pub output: WireId,
    /// Cycle, relative to the input sample, at which the output becomes
    /// valid. Zero for constants.
    pub stage: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub wire: WireId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetlistIr {
    pub name: String,
    pub latency_cycles: u32,
    pub initiation_interval: u32,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub valid_in: WireId,
    pub valid_out: WireId,
    pub wires: Vec<Wire>,
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("wire {wire} ({name}) has {drivers} drivers")]
    DriverCount {
        wire: WireId,
        name: String,
        drivers: usize,
    },
    #[error("wire id {0} out of range")]
    UnknownWire(WireId),
    #[error("netlist contains a cycle through cell {0}")]
    Cycle(usize),
    #[error("cell {cell} ({kind}): {detail}")]
    Type {
        cell: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("cell {cell} ({kind}): {detail}")]
    Timing {
        cell: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("cell {cell}: declared stage {declared}, arrives at {actual}")]
    Stage {
        cell: usize,
        declared: u32,
        actual: u32,
    },
    #[error("port {port}: {detail}")]
    Port { port: String, detail: String },
    #[error("initiation interval must be at least 1")]
    InitiationInterval,
    #[error("netlist json: {0}")]
    Json(String),
}

impl NetlistIr {
    pub fn cell_count(&self, kind: &str) -> usize {
        self.cells.iter().filter(|c| c.kind.name() == kind).count()
    }

    pub fn input_format(&self, i: usize) -> Option<FixedPointFormat> {
        self.wires[self.inputs[i].wire].ty.format()
    }

    pub fn output_format(&self, i: usize) -> Option<FixedPointFormat> {
        self.wires[self.outputs[i].wire].ty.format()
    }

    /// Debug dump with a fixed key order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("netlist serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, NetlistError> {
        serde_json::from_str(text).map_err(|e| NetlistError::Json(e.to_string()))
    }
}

/// Incremental netlist construction.
#[derive(Debug)]
pub struct Builder {
    n: NetlistIr,
}

impl Builder {
    pub fn new(name: &str) -> Self {
        let mut b = Self {
            n: NetlistIr {
                name: name.into(),
                latency_cycles: 0,
                initiation_interval: 1,
                inputs: Vec::new(),
                outputs: Vec::new(),
                valid_in: 0,
                valid_out: 0,
                wires: Vec::new(),
                cells: Vec::new(),
                notes: Vec::new(),
            },
        };
        b.n.valid_in = b.wire("in_valid", WireType::Bit);
        b
    }

    pub fn wire(&mut self, name: &str, ty: WireType) -> WireId {
        self.n.wires.push(Wire {
            name: name.into(),
            ty,
        });
        self.n.wires.len() - 1
    }

    pub fn ty(&self, w: WireId) -> WireType {
        self.n.wires[w].ty
    }

    pub fn input(&mut self, name: &str, ty: WireType) -> WireId {
        let w = self.wire(name, ty);
        self.n.inputs.push(Port {
            name: name.into(),
            wire: w,
        });
        w
    }

    pub fn output(&mut self, name: &str, wire: WireId) {
        self.n.outputs.push(Port {
            name: name.into(),
            wire,
        });
    }

    pub fn cell(
        &mut self,
        kind: CellKind,
        inputs: Vec<WireId>,
        ty: WireType,
        stage: u32,
        name: &str,
    ) -> WireId {
        let output = self.wire(&format!("{name}_{}", self.n.wires.len()), ty);
        self.n.cells.push(Cell {
            kind,
            inputs,
            output,
            stage,
        });
        output
    }

    pub fn constant(&mut self, raw: i128, ty: WireType) -> WireId {
        self.cell(CellKind::Const { raw }, vec![], ty, 0, "c")
    }

    pub fn register(&mut self, d: WireId, stage: u32, capture_phase: Option<u32>) -> WireId {
        let ty = self.ty(d);
        self.cell(
            CellKind::Register { capture_phase },
            vec![d],
            ty,
            stage,
            "r",
        )
    }

    pub fn note(&mut self, text: String) {
        self.n.notes.push(text);
    }

    /// Adds the valid chain and timing parameters.
    pub fn finish(mut self, latency: u32, ii: u32) -> NetlistIr {
        let mut v = self.n.valid_in;
        for s in 1..=latency {
            v = self.register(v, s, None);
        }
        self.n.valid_out = v;
        self.n.latency_cycles = latency;
        self.n.initiation_interval = ii;
        self.n
    }
}
