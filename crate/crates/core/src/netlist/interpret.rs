use thiserror::Error;

use super::{topo_order, CellKind, NetlistError, NetlistIr, WireType};
use crate::fixedpoint::{cast, fxp_add, fxp_compare, fxp_mul, FixedPointValue};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("input vector has {found} values, netlist has {expected} inputs")]
    Arity { expected: usize, found: usize },
    #[error("input {port}: raw {raw} outside its format")]
    InputRange { port: String, raw: i128 },
    #[error("out_valid low when sample {0} was due")]
    ValidMissing(usize),
}

/// Cycle-level simulation. Every wire holds a raw value; registers start
/// at zero after reset.
pub struct Simulator<'a> {
    n: &'a NetlistIr,
    comb: Vec<usize>,
    regs: Vec<usize>,
    values: Vec<i128>,
    cycle: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(n: &'a NetlistIr) -> Result<Self, NetlistError> {
        let order = topo_order(n)?;
        let (regs, comb) = order
            .into_iter()
            .partition(|&i| n.cells[i].kind.is_register());
        Ok(Self {
            n,
            comb,
            regs,
            values: vec![0; n.wires.len()],
            cycle: 0,
        })
    }

    pub fn phase(&self) -> u32 {
        (self.cycle % self.n.initiation_interval as u64) as u32
    }

    pub fn value(&self, wire: usize) -> i128 {
        self.values[wire]
    }

    fn fixed(&self, wire: usize) -> FixedPointValue {
        match self.n.wires[wire].ty {
            WireType::Fixed(f) => FixedPointValue::from_parts(self.values[wire], f),
            WireType::Bit => unreachable!("verified netlist"),
        }
    }

    fn eval(&self, cell: usize) -> i128 {
        let c = &self.n.cells[cell];
        let out = self.n.wires[c.output].ty.format();
        let ii = self.n.initiation_interval;
        match &c.kind {
            CellKind::Const { raw } => *raw,
            CellKind::Comparator => {
                i128::from(fxp_compare(self.fixed(c.inputs[0]), self.fixed(c.inputs[1])).is_lt())
            }
            CellKind::AndReduce { invert } => i128::from(
                c.inputs
                    .iter()
                    .zip(invert)
                    .all(|(w, inv)| (self.values[*w] == 1) != *inv),
            ),
            CellKind::OrReduce => c.inputs.iter().fold(0, |acc, w| acc | self.values[*w]),
            CellKind::Mux => {
                if self.values[c.inputs[0]] == 1 {
                    self.values[c.inputs[1]]
                } else {
                    self.values[c.inputs[2]]
                }
            }
            CellKind::Add => fxp_add(
                self.fixed(c.inputs[0]),
                self.fixed(c.inputs[1]),
                out.unwrap(),
            )
            .raw(),
            CellKind::Mul { phase_offset } => {
                let slots = c.inputs.len() / 2;
                let j = if slots == 1 {
                    0
                } else {
                    (((self.phase() + ii - phase_offset) % ii) as usize).min(slots - 1)
                };
                fxp_mul(
                    self.fixed(c.inputs[2 * j]),
                    self.fixed(c.inputs[2 * j + 1]),
                    out.unwrap(),
                )
                .raw()
            }
            CellKind::SatCast => cast(self.fixed(c.inputs[0]), out.unwrap()).raw(),
            CellKind::ReluClamp => self.values[c.inputs[0]].max(0),
            CellKind::LutRom {
                shift,
                contents,
                below,
                above,
            } => {
                let raw = self.values[c.inputs[0]];
                let scaled = if *shift >= 0 {
                    raw << shift
                } else {
                    raw >> (-shift).min(127)
                };
                let idx = scaled + contents.len() as i128 / 2;
                if idx < 0 {
                    *below
                } else if idx >= contents.len() as i128 {
                    *above
                } else {
                    contents[idx as usize]
                }
            }
            CellKind::Register { .. } => unreachable!("registers update on the clock edge"),
        }
    }

    /// Drives the inputs and settles the combinational logic for the
    /// current cycle.
    pub fn settle(&mut self, inputs: &[i128], valid: bool) {
        for (p, raw) in self.n.inputs.iter().zip(inputs) {
            self.values[p.wire] = *raw;
        }
        self.values[self.n.valid_in] = i128::from(valid);
        for k in 0..self.comb.len() {
            let i = self.comb[k];
            self.values[self.n.cells[i].output] = self.eval(i);
        }
    }

    /// Rising clock edge: enabled registers load their inputs.
    pub fn clock(&mut self) {
        let phase = self.phase();
        let loads: Vec<(usize, i128)> = self
            .regs
            .iter()
            .filter_map(|&i| {
                let c = &self.n.cells[i];
                match c.kind {
                    CellKind::Register { capture_phase }
                        if capture_phase.is_none_or(|p| p == phase) =>
                    {
                        Some((c.output, self.values[c.inputs[0]]))
                    }
                    _ => None,
                }
            })
            .collect();
        for (w, v) in loads {
            self.values[w] = v;
        }
        self.cycle += 1;
    }
}

fn check_inputs(n: &NetlistIr, x: &[i128]) -> Result<(), InterpretError> {
    if x.len() != n.inputs.len() {
        return Err(InterpretError::Arity {
            expected: n.inputs.len(),
            found: x.len(),
        });
    }
    for (p, raw) in n.inputs.iter().zip(x) {
        if !n.wires[p.wire]
            .ty
            .format()
            .is_some_and(|f| f.contains_raw(*raw))
        {
            return Err(InterpretError::InputRange {
                port: p.name.clone(),
                raw: *raw,
            });
        }
    }
    Ok(())
}

/// Streams samples back to back, one every initiation interval, each held
/// for the whole interval with `in_valid` high on its first cycle.
/// Sample `i` is read `latency_cycles` after it was presented.
pub fn run_stream(n: &NetlistIr, samples: &[Vec<i128>]) -> Result<Vec<Vec<i128>>, InterpretError> {
    for s in samples {
        check_inputs(n, s)?;
    }
    let mut sim = Simulator::new(n)?;
    let ii = n.initiation_interval as u64;
    let latency = n.latency_cycles as u64;
    let idle = vec![0; n.inputs.len()];
    let mut out = Vec::with_capacity(samples.len());
    let total = samples.len() as u64 * ii + latency;
    for cycle in 0..total.max(1) {
        let i = (cycle / ii) as usize;
        let (x, valid) = match samples.get(i) {
            Some(s) => (s.as_slice(), cycle % ii == 0),
            None => (idle.as_slice(), false),
        };
        sim.settle(x, valid);
        if cycle >= latency && (cycle - latency).is_multiple_of(ii) {
            let k = ((cycle - latency) / ii) as usize;
            if k < samples.len() {
                if sim.value(n.valid_out) != 1 {
                    return Err(InterpretError::ValidMissing(k));
                }
                out.push(n.outputs.iter().map(|p| sim.value(p.wire)).collect());
            }
        }
        sim.clock();
    }
    Ok(out)
}

/// Output raws for one input sample, in output-port order.
pub fn interpret_netlist(n: &NetlistIr, inputs: &[i128]) -> Result<Vec<i128>, InterpretError> {
    Ok(run_stream(n, &[inputs.to_vec()])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::Builder;

    fn fx(s: &str) -> WireType {
        WireType::Fixed(s.parse().unwrap())
    }

    #[test]
    fn const_only_netlist() {
        let mut b = Builder::new("k");
        let c = b.constant(-5, fx("fixed<8,4,s>"));
        b.output("y", c);
        let n = b.finish(0, 1);
        assert_eq!(interpret_netlist(&n, &[]).unwrap(), vec![-5]);
    }

    #[test]
    fn comparator_and_stream() {
        let mut b = Builder::new("cmp");
        let a = b.input("x0", fx("fixed<8,4,s>"));
        let k = b.constant(16, fx("fixed<8,4,s>"));
        let lt = b.cell(CellKind::Comparator, vec![a, k], WireType::Bit, 0, "lt");
        let r = b.register(lt, 1, None);
        b.output("y", r);
        let n = b.finish(1, 1);
        assert_eq!(interpret_netlist(&n, &[3]).unwrap(), vec![1]);
        let got = run_stream(&n, &[vec![3], vec![16], vec![-100], vec![20]]).unwrap();
        assert_eq!(got, vec![vec![1], vec![0], vec![1], vec![0]]);
        assert!(interpret_netlist(&n, &[300]).is_err());
        assert!(interpret_netlist(&n, &[]).is_err());
    }

    #[test]
    fn time_shared_multiplier() {
        let mut b = Builder::new("share");
        let f = fx("fixed<8,4,s>");
        let x0 = b.input("x0", f);
        let x1 = b.input("x1", f);
        let w = b.constant(3 * 16, f);
        let p = b.cell(
            CellKind::Mul { phase_offset: 0 },
            vec![x0, w, x1, w],
            fx("fixed<16,8,s>"),
            0,
            "p",
        );
        let hold = b.register(p, 1, Some(0));
        let a0 = b.register(hold, 2, Some(1));
        let a1 = b.register(p, 2, Some(1));
        let s = b.cell(CellKind::Add, vec![a0, a1], fx("fixed<17,9,s>"), 2, "s");
        let r = b.register(s, 3, None);
        b.output("y", r);
        let n = b.finish(3, 2);
        crate::netlist::verify(&n).unwrap();
        // 3 * (x0 + x1) with 8 fractional bits in the product.
        let got = run_stream(&n, &[vec![16, 32], vec![-8, 4], vec![1, 1]]).unwrap();
        assert_eq!(
            got,
            vec![vec![3 * 48 * 16], vec![3 * -4 * 16], vec![3 * 2 * 16]]
        );
    }
}
