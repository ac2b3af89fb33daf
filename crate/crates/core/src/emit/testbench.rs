use std::fmt::Write;

use super::verilog::{decl, lit};
use crate::netlist::NetlistIr;

/// One stimulus with the expected output raws, in port order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestVector {
    pub inputs: Vec<i128>,
    pub outputs: Vec<i128>,
}

/// Self-checking testbench. Vectors are streamed one per initiation
/// interval and each output is compared `latency_cycles` later. Prints
/// `PASS <n> FAIL <m>` at the end.
pub(crate) fn render(n: &NetlistIr, vectors: &[TestVector]) -> String {
    let name = &n.name;
    let count = vectors.len();
    let ii = n.initiation_interval;
    let latency = n.latency_cycles;
    let mut s = String::new();
    let _ = writeln!(s, "`timescale 1ns/1ps\nmodule {name}_tb;\n");
    s.push_str("reg clk;\nreg rst;\nreg in_valid;\nwire out_valid;\n");
    let in_w: Vec<u32> = n
        .inputs
        .iter()
        .map(|p| n.wires[p.wire].ty.width())
        .collect();
    let out_w: Vec<u32> = n
        .outputs
        .iter()
        .map(|p| n.wires[p.wire].ty.width())
        .collect();
    for (p, w) in n.inputs.iter().zip(&in_w) {
        let _ = writeln!(s, "{}", decl("reg", *w, &p.name));
    }
    for (p, w) in n.outputs.iter().zip(&out_w) {
        let _ = writeln!(s, "{}", decl("wire", *w, &p.name));
    }
    s.push_str("integer pass;\ninteger fail;\ninteger c;\ninteger i;\ninteger k;\n");
    if count > 0 {
        for (p, w) in n.inputs.iter().zip(&in_w) {
            let _ = writeln!(
                s,
                "reg signed [{}:0] vec_{} [0:{}];",
                w - 1,
                p.name,
                count - 1
            );
        }
        for (p, w) in n.outputs.iter().zip(&out_w) {
            let _ = writeln!(
                s,
                "reg signed [{}:0] exp_{} [0:{}];",
                w - 1,
                p.name,
                count - 1
            );
        }
    }
    let mut conns = vec![
        ".clk(clk)".to_string(),
        ".rst(rst)".into(),
        ".in_valid(in_valid)".into(),
        ".out_valid(out_valid)".into(),
    ];
    conns.extend(
        n.inputs
            .iter()
            .chain(&n.outputs)
            .map(|p| format!(".{0}({0})", p.name)),
    );
    let _ = writeln!(s, "\n{name} dut (\n    {}\n);\n", conns.join(",\n    "));
    s.push_str(
        "initial begin\n    clk = 1'b0;\n    forever #5 clk = ~clk;\nend\n\ninitial begin\n",
    );
    s.push_str("    rst = 1'b1;\n    in_valid = 1'b0;\n    pass = 0;\n    fail = 0;\n");
    for (p, w) in n.inputs.iter().zip(&in_w) {
        let _ = writeln!(s, "    {} = {};", p.name, lit(0, *w));
    }
    for (k, v) in vectors.iter().enumerate() {
        for ((p, w), raw) in n.inputs.iter().zip(&in_w).zip(&v.inputs) {
            let _ = writeln!(s, "    vec_{}[{k}] = {};", p.name, lit(*raw, *w));
        }
        for ((p, w), raw) in n.outputs.iter().zip(&out_w).zip(&v.outputs) {
            let _ = writeln!(s, "    exp_{}[{k}] = {};", p.name, lit(*raw, *w));
        }
    }
    s.push_str("    @(posedge clk);\n    @(posedge clk);\n    @(negedge clk);\n    rst = 1'b0;\n");
    if count > 0 {
        let total = count as u64 * ii as u64 + latency as u64;
        let _ = writeln!(s, "    for (c = 0; c < {total}; c = c + 1) begin");
        let _ = writeln!(s, "        i = c / {ii};");
        let _ = writeln!(s, "        if (i < {count}) begin");
        for p in &n.inputs {
            let _ = writeln!(s, "            {0} = vec_{0}[i];", p.name);
        }
        let _ = writeln!(s, "            in_valid = (c % {ii}) == 0;");
        s.push_str(
            "        end else begin\n            in_valid = 1'b0;\n        end\n        #4;\n",
        );
        let _ = writeln!(
            s,
            "        if (c >= {latency} && ((c - {latency}) % {ii}) == 0 && ((c - {latency}) / {ii}) < {count}) begin"
        );
        let _ = writeln!(s, "            k = (c - {latency}) / {ii};");
        let mut checks = vec!["out_valid === 1'b1".to_string()];
        for p in &n.outputs {
            checks.push(format!("{0} === exp_{0}[k]", p.name));
        }
        let _ = writeln!(s, "            if ({}) begin", checks.join(" && "));
        s.push_str("                pass = pass + 1;\n            end else begin\n                fail = fail + 1;\n");
        s.push_str(
            "                $display(\"MISMATCH vector %0d\", k);\n            end\n        end\n",
        );
        s.push_str("        @(negedge clk);\n    end\n");
    }
    s.push_str(
        "    $display(\"PASS %0d FAIL %0d\", pass, fail);\n    $finish;\nend\n\nendmodule\n",
    );
    s
}
