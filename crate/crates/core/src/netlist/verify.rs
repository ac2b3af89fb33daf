use std::collections::VecDeque;

use super::{CellKind, NetlistError, NetlistIr, WireType};
use crate::quantize::product_format;

/// When a wire carries the value belonging to an input sample, relative
/// to the first cycle that sample is presented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Independent of the input sample.
    Static,
    /// Valid during cycles `[t, t + window)`.
    Timed { t: u32, window: u32 },
    /// Time-shared multiplier output: pair `j` is present during the
    /// cycle whose phase is `offset + j`, at `t + j` when input-driven.
    Slotted {
        t: Option<u32>,
        offset: u32,
        slots: u32,
    },
}

/// Cells in dependency order. Registers count as ordinary nodes, so any
/// feedback loop is rejected.
pub fn topo_order(n: &NetlistIr) -> Result<Vec<usize>, NetlistError> {
    let mut driver = vec![None; n.wires.len()];
    for (i, c) in n.cells.iter().enumerate() {
        for &w in c.inputs.iter().chain(std::iter::once(&c.output)) {
            if w >= n.wires.len() {
                return Err(NetlistError::UnknownWire(w));
            }
        }
        driver[c.output] = Some(i);
    }
    let mut indegree = vec![0usize; n.cells.len()];
    let mut users = vec![Vec::new(); n.cells.len()];
    for (i, c) in n.cells.iter().enumerate() {
        for &w in &c.inputs {
            if let Some(d) = driver[w] {
                indegree[i] += 1;
                users[d].push(i);
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..n.cells.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n.cells.len());
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                queue.push_back(u);
            }
        }
    }
    if order.len() != n.cells.len() {
        let stuck = (0..n.cells.len()).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(NetlistError::Cycle(stuck));
    }
    Ok(order)
}

fn check_drivers(n: &NetlistIr) -> Result<(), NetlistError> {
    let mut count = vec![0usize; n.wires.len()];
    for w in n
        .inputs
        .iter()
        .map(|p| p.wire)
        .chain(std::iter::once(n.valid_in))
    {
        if w >= n.wires.len() {
            return Err(NetlistError::UnknownWire(w));
        }
        count[w] += 1;
    }
    for c in &n.cells {
        count[c.output] += 1;
    }
    for p in &n.outputs {
        if p.wire >= n.wires.len() {
            return Err(NetlistError::UnknownWire(p.wire));
        }
    }
    if let Some((w, &drivers)) = count.iter().enumerate().find(|(_, c)| **c != 1) {
        return Err(NetlistError::DriverCount {
            wire: w,
            name: n.wires[w].name.clone(),
            drivers,
        });
    }
    Ok(())
}

fn check_types(n: &NetlistIr, ii: u32) -> Result<(), NetlistError> {
    for (i, c) in n.cells.iter().enumerate() {
        let err = |detail: String| NetlistError::Type {
            cell: i,
            kind: c.kind.name(),
            detail,
        };
        let ins: Vec<WireType> = c.inputs.iter().map(|w| n.wires[*w].ty).collect();
        let out = n.wires[c.output].ty;
        let all_fixed = ins.iter().all(|t| matches!(t, WireType::Fixed(_)));
        let arity = |k: usize| {
            if ins.len() == k {
                Ok(())
            } else {
                Err(err(format!("expected {k} inputs, found {}", ins.len())))
            }
        };
        let out_fmt = out.format();
        match &c.kind {
            CellKind::Const { raw } => {
                arity(0)?;
                let ok = match out {
                    WireType::Bit => *raw == 0 || *raw == 1,
                    WireType::Fixed(f) => f.contains_raw(*raw),
                };
                if !ok {
                    return Err(err(format!("constant {raw} does not fit {out:?}")));
                }
            }
            CellKind::Comparator => {
                arity(2)?;
                if !all_fixed || out != WireType::Bit {
                    return Err(err("compares two fixed-point words into a bit".into()));
                }
            }
            CellKind::AndReduce { invert } => {
                if invert.len() != ins.len()
                    || ins.iter().any(|t| *t != WireType::Bit)
                    || out != WireType::Bit
                {
                    return Err(err("bit inputs with one inversion flag each".into()));
                }
            }
            CellKind::OrReduce => {
                if ins.is_empty() || out_fmt.is_none() || ins.iter().any(|t| *t != out) {
                    return Err(err("inputs must share the output format".into()));
                }
            }
            CellKind::Mux => {
                arity(3)?;
                if ins[0] != WireType::Bit || ins[1] != out || ins[2] != out {
                    return Err(err("select bit and two words of the output format".into()));
                }
            }
            CellKind::Add => {
                arity(2)?;
                if !all_fixed || out_fmt.is_none() {
                    return Err(err("adds fixed-point words".into()));
                }
            }
            CellKind::Mul { phase_offset } => {
                let Some(of) =
                    out_fmt.filter(|_| all_fixed && !ins.is_empty() && ins.len().is_multiple_of(2))
                else {
                    return Err(err("needs pairs of fixed-point operands".into()));
                };
                if ins.len() / 2 > ii as usize || *phase_offset >= ii {
                    return Err(err(format!(
                        "{} slots / offset {phase_offset} exceed II {ii}",
                        ins.len() / 2
                    )));
                }
                if ins.chunks(2).any(|pair| pair != &ins[..2]) {
                    return Err(err("time-shared operand pairs must share formats".into()));
                }
                for pair in ins.chunks(2) {
                    let p = product_format(pair[0].format().unwrap(), pair[1].format().unwrap())
                        .map_err(|e| err(e.to_string()))?;
                    let same = p.total_bits() == of.total_bits()
                        && p.integer_bits() == of.integer_bits()
                        && p.is_signed() == of.is_signed();
                    if !same {
                        return Err(err(format!(
                            "output {of} is not the full product format {p}"
                        )));
                    }
                }
            }
            CellKind::SatCast => {
                arity(1)?;
                if !all_fixed || out_fmt.is_none() {
                    return Err(err("casts a fixed-point word".into()));
                }
            }
            CellKind::ReluClamp => {
                arity(1)?;
                if ins[0] != out || out_fmt.is_none() {
                    return Err(err("input and output formats must match".into()));
                }
            }
            CellKind::LutRom {
                shift: _,
                contents,
                below,
                above,
            } => {
                arity(1)?;
                let Some(of) = out_fmt.filter(|_| all_fixed) else {
                    return Err(err("maps a fixed-point word to a fixed-point word".into()));
                };
                if contents.len() < 2 || !contents.len().is_power_of_two() {
                    return Err(err("table length must be a power of two".into()));
                }
                if contents
                    .iter()
                    .chain([below, above])
                    .any(|r| !of.contains_raw(*r))
                {
                    return Err(err(format!("table entries must fit {of}")));
                }
            }
            CellKind::Register { capture_phase } => {
                arity(1)?;
                if ins[0] != out {
                    return Err(err("input and output types must match".into()));
                }
                if capture_phase.is_some_and(|p| p >= ii) {
                    return Err(err("capture phase beyond II".into()));
                }
            }
        }
    }
    for p in &n.inputs {
        if !matches!(n.wires[p.wire].ty, WireType::Fixed(_)) {
            return Err(NetlistError::Port {
                port: p.name.clone(),
                detail: "inputs are fixed-point".into(),
            });
        }
    }
    if n.wires[n.valid_in].ty != WireType::Bit || n.wires[n.valid_out].ty != WireType::Bit {
        return Err(NetlistError::Port {
            port: "valid".into(),
            detail: "valid signals are single bits".into(),
        });
    }
    Ok(())
}

fn propagate(n: &NetlistIr, order: &[usize], ii: u32) -> Result<Vec<Timing>, NetlistError> {
    let mut timing = vec![Timing::Static; n.wires.len()];
    for p in &n.inputs {
        timing[p.wire] = Timing::Timed { t: 0, window: ii };
    }
    timing[n.valid_in] = Timing::Timed { t: 0, window: 1 };
    for &i in order {
        let c = &n.cells[i];
        let err = |detail: String| NetlistError::Timing {
            cell: i,
            kind: c.kind.name(),
            detail,
        };
        let ins: Vec<Timing> = c.inputs.iter().map(|w| timing[*w]).collect();
        let out = match &c.kind {
            CellKind::Register { capture_phase } => match (ins[0], capture_phase) {
                (Timing::Static, _) => Timing::Static,
                (Timing::Timed { t, window }, None) => Timing::Timed { t: t + 1, window },
                (Timing::Timed { t, window }, Some(cp)) => {
                    let u = t + (cp + ii - t % ii) % ii;
                    if u >= t + window {
                        return Err(err(format!(
                            "phase {cp} capture misses window [{t}, {})",
                            t + window
                        )));
                    }
                    Timing::Timed {
                        t: u + 1,
                        window: ii,
                    }
                }
                (Timing::Slotted { .. }, None) => {
                    return Err(err(
                        "time-shared product needs a phase-enabled register".into()
                    ))
                }
                (Timing::Slotted { t, offset, slots }, Some(cp)) => {
                    let j = (cp + ii - offset) % ii;
                    if j >= slots {
                        return Err(err(format!("phase {cp} selects no product")));
                    }
                    match t {
                        Some(t) => Timing::Timed {
                            t: t + j + 1,
                            window: ii,
                        },
                        None => Timing::Static,
                    }
                }
            },
            kind => {
                let mut arrival: Option<(u32, u32)> = None;
                for tm in &ins {
                    match *tm {
                        Timing::Static => {}
                        Timing::Slotted { .. } => {
                            return Err(err("reads a time-shared product combinationally".into()))
                        }
                        Timing::Timed { t, window } => match arrival {
                            None => arrival = Some((t, window)),
                            Some((t0, w0)) if t0 == t => arrival = Some((t0, w0.min(window))),
                            Some((t0, _)) => {
                                return Err(err(format!("inputs arrive at cycles {t0} and {t}")))
                            }
                        },
                    }
                }
                match (kind, arrival) {
                    (CellKind::Mul { phase_offset }, _) if c.inputs.len() > 2 => {
                        let slots = (c.inputs.len() / 2) as u32;
                        match arrival {
                            None => Timing::Slotted {
                                t: None,
                                offset: *phase_offset,
                                slots,
                            },
                            Some((t, w)) => {
                                if w < slots {
                                    return Err(err(format!(
                                        "operands held {w} cycles, {slots} slots"
                                    )));
                                }
                                if t % ii != *phase_offset {
                                    return Err(err(format!(
                                        "operands arrive at phase {}, slots start at {phase_offset}",
                                        t % ii
                                    )));
                                }
                                Timing::Slotted {
                                    t: Some(t),
                                    offset: *phase_offset,
                                    slots,
                                }
                            }
                        }
                    }
                    (_, None) => Timing::Static,
                    (_, Some((t, window))) => Timing::Timed { t, window },
                }
            }
        };
        let actual = match out {
            Timing::Timed { t, .. } | Timing::Slotted { t: Some(t), .. } => Some(t),
            _ => None,
        };
        if let Some(actual) = actual {
            if actual != c.stage {
                return Err(NetlistError::Stage {
                    cell: i,
                    declared: c.stage,
                    actual,
                });
            }
        }
        timing[c.output] = out;
    }
    Ok(timing)
}

/// Structural and timing check. Returns the timing of every wire.
///
/// Checks single drivers, acyclicity, per-kind type rules, that each
/// cell's declared stage matches when its output actually becomes valid,
/// and that every input-dependent output and `out_valid` arrive exactly
/// `latency_cycles` after the input.
pub fn verify(n: &NetlistIr) -> Result<Vec<Timing>, NetlistError> {
    let ii = n.initiation_interval;
    if ii == 0 {
        return Err(NetlistError::InitiationInterval);
    }
    if n.valid_in >= n.wires.len() || n.valid_out >= n.wires.len() {
        return Err(NetlistError::UnknownWire(n.valid_in.max(n.valid_out)));
    }
    check_drivers(n)?;
    let order = topo_order(n)?;
    check_types(n, ii)?;
    let timing = propagate(n, &order, ii)?;
    let ports = n
        .outputs
        .iter()
        .map(|p| (p.name.as_str(), p.wire))
        .chain(std::iter::once(("out_valid", n.valid_out)));
    for (name, w) in ports {
        match timing[w] {
            Timing::Static if name != "out_valid" => {}
            Timing::Timed { t, .. } if t == n.latency_cycles => {}
            other => {
                return Err(NetlistError::Port {
                    port: name.into(),
                    detail: format!("arrives as {other:?}, latency is {}", n.latency_cycles),
                })
            }
        }
    }
    Ok(timing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::Builder;

    fn fx(s: &str) -> WireType {
        WireType::Fixed(s.parse().unwrap())
    }

    fn comparator_netlist() -> NetlistIr {
        let mut b = Builder::new("cmp");
        let a = b.input("x0", fx("fixed<8,4,s>"));
        let k = b.constant(16, fx("fixed<8,4,s>"));
        let lt = b.cell(CellKind::Comparator, vec![a, k], WireType::Bit, 0, "lt");
        let r = b.register(lt, 1, None);
        b.output("y", r);
        b.finish(1, 1)
    }

    #[test]
    fn accepts_balanced_pipeline() {
        let n = comparator_netlist();
        let t = verify(&n).unwrap();
        assert_eq!(t[n.outputs[0].wire], Timing::Timed { t: 1, window: 1 });
    }

    #[test]
    fn rejects_double_driver() {
        let mut n = comparator_netlist();
        let out = n.cells[1].output;
        n.cells.push(n.cells[0].clone());
        n.cells.last_mut().unwrap().output = out;
        assert!(matches!(verify(&n), Err(NetlistError::DriverCount { .. })));
    }

    #[test]
    fn rejects_cycle() {
        let mut n = comparator_netlist();
        let reg_out = n.cells[2].output;
        n.cells[1].inputs = vec![reg_out, reg_out];
        // Comparator now reads its own registered output.
        assert!(matches!(verify(&n), Err(NetlistError::Cycle(_))));
    }

    #[test]
    fn rejects_wrong_stage_and_latency() {
        let mut n = comparator_netlist();
        n.cells[2].stage = 2;
        assert!(matches!(verify(&n), Err(NetlistError::Stage { .. })));
        let mut n = comparator_netlist();
        n.latency_cycles = 2;
        assert!(verify(&n).is_err());
    }

    #[test]
    fn rejects_unbalanced_add() {
        let mut b = Builder::new("skew");
        let a = b.input("x0", fx("fixed<8,4,s>"));
        let r = b.register(a, 1, None);
        let s = b.cell(CellKind::Add, vec![a, r], fx("fixed<9,5,s>"), 1, "s");
        b.output("y", s);
        let n = b.finish(1, 1);
        assert!(matches!(verify(&n), Err(NetlistError::Timing { .. })));
    }

    #[test]
    fn rejects_type_errors() {
        let mut b = Builder::new("bad");
        let a = b.input("x0", fx("fixed<8,4,s>"));
        let w = b.constant(3, fx("fixed<8,4,s>"));
        let p = b.cell(
            CellKind::Mul { phase_offset: 0 },
            vec![a, w],
            fx("fixed<15,8,s>"),
            0,
            "p",
        );
        b.output("y", p);
        let n = b.finish(0, 1);
        assert!(matches!(verify(&n), Err(NetlistError::Type { .. })));
    }

    #[test]
    fn time_shared_product_timing() {
        // Two products share one multiplier at II = 2.
        let mut b = Builder::new("share");
        let f = fx("fixed<8,4,s>");
        let x0 = b.input("x0", f);
        let x1 = b.input("x1", f);
        let w = b.constant(3, f);
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
        let t = verify(&n).unwrap();
        assert_eq!(t[r], Timing::Timed { t: 3, window: 2 });
        // Capturing the hold register at the wrong phase breaks alignment.
        let mut bad = n.clone();
        let hold_cell = bad.cells.iter().position(|c| c.output == hold).unwrap();
        bad.cells[hold_cell].kind = CellKind::Register {
            capture_phase: Some(1),
        };
        assert!(verify(&bad).is_err());
    }
}
