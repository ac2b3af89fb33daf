use std::fmt::Write;

use num_bigint::BigInt;

use crate::fixedpoint::{FixedPointFormat, Overflow, Rounding};
use crate::netlist::{CellKind, NetlistIr, WireType};

/// Sized signed hex literal holding the two's-complement pattern of `raw`.
pub(crate) fn lit(raw: impl Into<BigInt>, width: u32) -> String {
    let modulus = BigInt::from(1) << width as usize;
    let mut v = raw.into() % &modulus;
    if v < BigInt::from(0) {
        v += modulus;
    }
    format!("{width}'sh{}", v.to_str_radix(16))
}

/// Signed vector declaration. Every fixed-point wire is signed, whatever
/// its width.
pub(crate) fn decl(kind: &str, width: u32, name: &str) -> String {
    format!("{kind} signed [{}:0] {name};", width - 1)
}

pub(crate) fn decl_ty(kind: &str, ty: WireType, name: &str) -> String {
    match ty {
        WireType::Bit => format!("{kind} {name};"),
        WireType::Fixed(_) => decl(kind, ty.width(), name),
    }
}

/// `src` (signed, `width` bits) sign-extended to `to` bits after a left
/// shift by `shift`.
fn extend(src: &str, width: u32, shift: u32, to: u32) -> String {
    let ext = to - width - shift;
    let mut parts = Vec::new();
    if ext > 0 {
        parts.push(format!("{{{ext}{{{src}[{}]}}}}", width - 1));
    }
    parts.push(src.to_string());
    if shift > 0 {
        parts.push(format!("{{{shift}{{1'b0}}}}"));
    }
    if parts.len() == 1 {
        src.to_string()
    } else {
        format!("{{{}}}", parts.join(", "))
    }
}

fn pow2_minus_one_exceeds(bits: u32, limit: i128) -> bool {
    // Is 2^bits - 1 > limit?
    bits >= 127 || (1i128 << bits) - 1 > limit
}

fn neg_pow2_below(bits: u32, limit: i128) -> bool {
    // Is -2^bits < limit?
    bits >= 127 || -(1i128 << bits) < limit
}

struct Emitter<'a> {
    n: &'a NetlistIr,
    decls: Vec<String>,
    body: Vec<String>,
}

impl Emitter<'_> {
    fn name(&self, w: usize) -> &str {
        &self.n.wires[w].name
    }

    fn width(&self, w: usize) -> u32 {
        self.n.wires[w].ty.width()
    }

    fn frac(&self, w: usize) -> u32 {
        self.n.wires[w]
            .ty
            .format()
            .map_or(0, |f| f.fractional_bits())
    }

    fn wire(&mut self, width: u32, name: &str, expr: String) {
        self.decls.push(decl("wire", width, name));
        self.body.push(format!("assign {name} = {expr};"));
    }

    fn bit(&mut self, name: &str, expr: String) {
        self.decls.push(format!("wire {name};"));
        self.body.push(format!("assign {name} = {expr};"));
    }

    fn assign(&mut self, name: &str, expr: String) {
        self.body.push(format!("assign {name} = {expr};"));
    }

    /// Rounds and range-limits `src` (`ws` bits, `fs` fractional bits)
    /// into `out`, driving wire `o`.
    fn cast(&mut self, src: &str, ws: u32, fs: u32, out: FixedPointFormat, o: &str) {
        let fo = out.fractional_bits();
        let (t, wt) = if fs > fo {
            let k = fs - fo;
            let q = format!("{o}_q");
            self.wire(ws, &q, format!("{src} >>> {k}"));
            if out.rounding() == Rounding::RoundNearestEven {
                let h = format!("{o}_h");
                self.bit(&h, format!("{src}[{}]", k - 1));
                let tail = if k >= 2 {
                    format!("|{src}[{}:0]", k - 2)
                } else {
                    "1'b0".into()
                };
                let tl = format!("{o}_t");
                self.bit(&tl, tail);
                let u = format!("{o}_u");
                self.bit(&u, format!("{h} & ({tl} | {q}[0])"));
                let r = format!("{o}_r");
                self.wire(ws + 1, &r, format!("{q} + $signed({{1'b0, {u}}})"));
                (r, ws + 1)
            } else {
                (q, ws)
            }
        } else if fs < fo {
            let k = fo - fs;
            let l = format!("{o}_l");
            self.wire(ws + k, &l, extend(src, ws, k, ws + k));
            (l, ws + k)
        } else {
            (src.to_string(), ws)
        };
        let wo = out.signed_width();
        let wx = wt.max(wo + 1);
        let e = format!("{o}_e");
        self.wire(wx, &e, extend(&t, wt, 0, wx));
        let low = format!("{e}[{}:0]", wo - 1);
        let expr = match out.overflow() {
            Overflow::Wrap if out.is_signed() => low,
            Overflow::Wrap => format!("{{1'b0, {e}[{}:0]}}", out.total_bits() - 1),
            Overflow::Saturate => {
                let (max, min) = (out.max_raw(), out.min_raw());
                let mut expr = low;
                if neg_pow2_below(wt - 1, min) {
                    expr = format!("({e} < {}) ? {} : {expr}", lit(min, wx), lit(min, wo));
                }
                if pow2_minus_one_exceeds(wt - 1, max) {
                    expr = format!("({e} > {}) ? {} : {expr}", lit(max, wx), lit(max, wo));
                }
                expr
            }
        };
        self.assign(o, expr);
    }

    fn cell(&mut self, i: usize) {
        let c = &self.n.cells[i];
        let o = self.name(c.output).to_string();
        let wo = self.width(c.output);
        let ins: Vec<String> = c.inputs.iter().map(|w| self.name(*w).to_string()).collect();
        match &c.kind {
            CellKind::Const { raw } => {
                let v = if self.n.wires[c.output].ty == WireType::Bit {
                    format!("1'b{raw}")
                } else {
                    lit(*raw, wo)
                };
                self.decls
                    .push(decl_ty("wire", self.n.wires[c.output].ty, &o));
                self.assign(&o, v);
            }
            CellKind::Comparator | CellKind::Add => {
                let (a, b) = (c.inputs[0], c.inputs[1]);
                let (fa, fb) = (self.frac(a), self.frac(b));
                let f = fa.max(fb);
                let int = (self.width(a) - fa).max(self.width(b) - fb);
                let is_add = matches!(c.kind, CellKind::Add);
                let wc = int + f + u32::from(is_add);
                let (oa, ob) = (format!("{o}_a"), format!("{o}_b"));
                self.wire(wc, &oa, extend(&ins[0], self.width(a), f - fa, wc));
                self.wire(wc, &ob, extend(&ins[1], self.width(b), f - fb, wc));
                if is_add {
                    let s = format!("{o}_s");
                    self.wire(wc, &s, format!("{oa} + {ob}"));
                    self.decls.push(decl("wire", wo, &o));
                    let out = self.n.wires[c.output].ty.format().unwrap();
                    self.cast(&s, wc, f, out, &o);
                } else {
                    self.bit(&o, format!("{oa} < {ob}"));
                }
            }
            CellKind::AndReduce { invert } => {
                let expr = if ins.is_empty() {
                    "1'b1".to_string()
                } else {
                    let terms: Vec<String> = ins
                        .iter()
                        .zip(invert)
                        .map(|(n, inv)| if *inv { format!("~{n}") } else { n.clone() })
                        .collect();
                    format!("&{{{}}}", terms.join(", "))
                };
                self.bit(&o, expr);
            }
            CellKind::OrReduce => self.wire(wo, &o, ins.join(" | ")),
            CellKind::Mux => self.wire(wo, &o, format!("{} ? {} : {}", ins[0], ins[1], ins[2])),
            CellKind::Mul { phase_offset } => {
                let (wa, wb) = (self.width(c.inputs[0]), self.width(c.inputs[1]));
                let (a, b) = if ins.len() == 2 {
                    (ins[0].clone(), ins[1].clone())
                } else {
                    let (ma, mb) = (format!("{o}_ma"), format!("{o}_mb"));
                    self.decls.push(decl("reg", wa, &ma));
                    self.decls.push(decl("reg", wb, &mb));
                    let ii = self.n.initiation_interval;
                    let pw = phase_width(ii);
                    let mut block = String::from("always @* begin\n    case (phase)\n");
                    let slots = ins.len() / 2;
                    for j in 0..slots {
                        let ph = (phase_offset + j as u32) % ii;
                        let label = if j + 1 == slots {
                            "default".to_string()
                        } else {
                            format!("{pw}'d{ph}")
                        };
                        let _ = writeln!(
                            block,
                            "        {label}: begin {ma} = {}; {mb} = {}; end",
                            ins[2 * j],
                            ins[2 * j + 1]
                        );
                    }
                    block.push_str("    endcase\nend");
                    self.body.push(block);
                    (ma, mb)
                };
                let p = format!("{o}_p");
                self.wire(wa + wb, &p, format!("{a} * {b}"));
                self.decls.push(decl("wire", wo, &o));
                let fs = self.frac(c.inputs[0]) + self.frac(c.inputs[1]);
                let out = self.n.wires[c.output].ty.format().unwrap();
                self.cast(&p, wa + wb, fs, out, &o);
            }
            CellKind::SatCast => {
                self.decls.push(decl("wire", wo, &o));
                let a = c.inputs[0];
                let out = self.n.wires[c.output].ty.format().unwrap();
                self.cast(&ins[0], self.width(a), self.frac(a), out, &o);
            }
            CellKind::ReluClamp => {
                let expr = format!("{}[{}] ? {} : {}", ins[0], wo - 1, lit(0, wo), ins[0]);
                self.wire(wo, &o, expr);
            }
            CellKind::LutRom {
                shift,
                contents,
                below,
                above,
            } => {
                let a = c.inputs[0];
                let wa = self.width(a);
                let e = contents.len().trailing_zeros();
                let sh = format!("{o}_sh");
                let ws = if *shift >= 0 {
                    let s = *shift as u32;
                    self.wire(wa + s, &sh, extend(&ins[0], wa, s, wa + s));
                    wa + s
                } else {
                    self.wire(wa, &sh, format!("{} >>> {}", ins[0], -shift));
                    wa
                };
                let wi = ws.max(e + 1) + 1;
                let ix = format!("{o}_ix");
                self.wire(
                    wi,
                    &ix,
                    format!(
                        "{} + {}",
                        extend(&sh, ws, 0, wi),
                        lit(contents.len() / 2, wi)
                    ),
                );
                let rom = format!("{o}_rom");
                self.decls.push(decl("reg", wo, &rom));
                let mut block = format!("always @* begin\n    case ({ix}[{}:0])\n", e - 1);
                for (k, v) in contents.iter().enumerate() {
                    let _ = writeln!(block, "        {e}'d{k}: {rom} = {};", lit(*v, wo));
                }
                let _ = writeln!(block, "        default: {rom} = {};", lit(contents[0], wo));
                block.push_str("    endcase\nend");
                self.body.push(block);
                let expr = format!(
                    "{ix}[{}] ? {} : ({ix} >= {}) ? {} : {rom}",
                    wi - 1,
                    lit(*below, wo),
                    lit(contents.len(), wi),
                    lit(*above, wo)
                );
                self.wire(wo, &o, expr);
            }
            CellKind::Register { .. } => {
                self.decls
                    .push(decl_ty("reg", self.n.wires[c.output].ty, &o))
            }
        }
    }
}

pub(crate) fn phase_width(ii: u32) -> u32 {
    (32 - (ii - 1).leading_zeros()).max(1)
}

fn port(dir: &str, ty: WireType, name: &str) -> String {
    match ty {
        WireType::Bit => format!("    {dir} wire {name}"),
        WireType::Fixed(_) => format!("    {dir} wire signed [{}:0] {name}", ty.width() - 1),
    }
}

/// Verilog-2001 text for a verified netlist.
pub(crate) fn render(n: &NetlistIr) -> String {
    let mut e = Emitter {
        n,
        decls: Vec::new(),
        body: Vec::new(),
    };
    for i in 0..n.cells.len() {
        e.cell(i);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "// {}: latency {} cycles, initiation interval {}.",
        n.name, n.latency_cycles, n.initiation_interval
    );
    if n.initiation_interval > 1 {
        let _ = writeln!(
            out,
            "// Present a new input every {} cycles, starting on phase 0 after reset, and hold it.",
            n.initiation_interval
        );
    }
    let _ = writeln!(out, "module {} (", n.name);
    let mut ports = vec![
        port("input", WireType::Bit, "clk"),
        port("input", WireType::Bit, "rst"),
        port("input", WireType::Bit, "in_valid"),
    ];
    for p in &n.inputs {
        ports.push(port("input", n.wires[p.wire].ty, &p.name));
    }
    ports.push(port("output", WireType::Bit, "out_valid"));
    for p in &n.outputs {
        ports.push(port("output", n.wires[p.wire].ty, &p.name));
    }
    let _ = writeln!(out, "{}\n);\n", ports.join(",\n"));

    let ii = n.initiation_interval;
    if ii > 1 {
        let pw = phase_width(ii);
        let _ = writeln!(out, "reg [{}:0] phase;", pw - 1);
    }
    for d in &e.decls {
        let _ = writeln!(out, "{d}");
    }
    out.push('\n');
    if ii > 1 {
        let pw = phase_width(ii);
        let _ = writeln!(
            out,
            "always @(posedge clk) begin\n    if (rst || phase == {pw}'d{}) phase <= {pw}'d0;\n    else phase <= phase + {pw}'d1;\nend\n",
            ii - 1
        );
    }
    for s in &e.body {
        let _ = writeln!(out, "{s}");
    }
    let regs: Vec<_> = n.cells.iter().filter(|c| c.kind.is_register()).collect();
    if !regs.is_empty() {
        out.push_str("\nalways @(posedge clk) begin\n    if (rst) begin\n");
        for c in &regs {
            let ty = n.wires[c.output].ty;
            let zero = match ty {
                WireType::Bit => "1'b0".to_string(),
                WireType::Fixed(_) => lit(0, ty.width()),
            };
            let _ = writeln!(out, "        {} <= {zero};", n.wires[c.output].name);
        }
        out.push_str("    end else begin\n");
        let pw = phase_width(ii);
        for c in &regs {
            let (q, d) = (&n.wires[c.output].name, &n.wires[c.inputs[0]].name);
            match c.kind {
                CellKind::Register {
                    capture_phase: Some(p),
                } if ii > 1 => {
                    let _ = writeln!(out, "        if (phase == {pw}'d{p}) {q} <= {d};");
                }
                _ => {
                    let _ = writeln!(out, "        {q} <= {d};");
                }
            }
        }
        out.push_str("    end\nend\n");
    }
    out.push('\n');
    let _ = writeln!(out, "assign out_valid = {};", n.wires[n.valid_out].name);
    for p in &n.outputs {
        let _ = writeln!(out, "assign {} = {};", p.name, n.wires[p.wire].name);
    }
    out.push_str("\nendmodule\n");
    out
}
