//! Verilog-2001 emission, self-checking testbenches and a structural lint.

mod lint;
mod testbench;
mod verilog;

use std::path::{Path, PathBuf};
use std::process::Command;

pub use lint::{lint_verilog, register_depths, Finding};
pub use testbench::TestVector;

use crate::netlist::{run_stream, InterpretError};
use crate::netlist::{verify, NetlistError, NetlistIr};

/// Environment variable naming an external HDL simulator binary.
pub const SIMULATOR_ENV: &str = "FXHLS_HDL_SIM";

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("netlist failed verification: {0}")]
    UnverifiedNetlist(NetlistError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl EmitError {
    pub fn code(&self) -> &'static str {
        match self {
            EmitError::UnverifiedNetlist(_) => "UnverifiedNetlist",
            EmitError::Interpret(_) => "Interpret",
            EmitError::Io { .. } => "Io",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One synthesizable module for a verified netlist.
pub fn emit_verilog(n: &NetlistIr) -> Result<String, EmitError> {
    verify(n).map_err(EmitError::UnverifiedNetlist)?;
    Ok(verilog::render(n))
}

/// Testbench module `<name>_tb` instantiating `<name>` and checking every
/// vector. With no vectors it only exercises reset.
pub fn emit_testbench(n: &NetlistIr, vectors: &[TestVector]) -> Result<String, EmitError> {
    verify(n).map_err(EmitError::UnverifiedNetlist)?;
    Ok(testbench::render(n, vectors))
}

/// Expected outputs for input raws, computed by streaming them through
/// the netlist interpreter the way the testbench drives them.
pub fn interpreter_vectors(
    n: &NetlistIr,
    inputs: &[Vec<i128>],
) -> Result<Vec<TestVector>, EmitError> {
    let outputs = run_stream(n, inputs)?;
    Ok(inputs
        .iter()
        .zip(outputs)
        .map(|(i, o)| TestVector {
            inputs: i.clone(),
            outputs: o,
        })
        .collect())
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub verilog: PathBuf,
    pub testbench: PathBuf,
    pub netlist: PathBuf,
}

/// Writes `<name>.v`, `<name>_tb.v` and `<name>.netlist.json` into `dir`.
pub fn write_outputs(
    n: &NetlistIr,
    vectors: &[TestVector],
    dir: &Path,
) -> Result<EmittedFiles, EmitError> {
    let rtl = emit_verilog(n)?;
    let tb = emit_testbench(n, vectors)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = EmittedFiles {
        verilog: dir.join(format!("{}.v", n.name)),
        testbench: dir.join(format!("{}_tb.v", n.name)),
        netlist: dir.join(format!("{}.netlist.json", n.name)),
    };
    std::fs::write(&files.verilog, rtl).map_err(io_err(&files.verilog))?;
    std::fs::write(&files.testbench, tb).map_err(io_err(&files.testbench))?;
    std::fs::write(&files.netlist, n.to_json()).map_err(io_err(&files.netlist))?;
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationReport {
    pub pass: usize,
    pub fail: usize,
    pub log: String,
}

/// Simulator binary from the environment, if set and non-empty.
pub fn simulator_from_env() -> Option<PathBuf> {
    std::env::var_os(SIMULATOR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Runs a written testbench under an external simulator. Binaries whose
/// name contains `iverilog` are driven as Icarus (`iverilog` then `vvp`
/// next to it); anything else is treated as a Verilator wrapper.
pub fn run_simulator(
    sim: &Path,
    files: &EmittedFiles,
    work: &Path,
) -> Result<SimulationReport, EmitError> {
    std::fs::create_dir_all(work).map_err(io_err(work))?;
    let name = sim
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tb_top = files
        .testbench
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let run = |cmd: &mut Command| -> Result<std::process::Output, EmitError> {
        cmd.current_dir(work).output().map_err(io_err(sim))
    };
    let output = if name.contains("iverilog") {
        let exe = work.join("tb.vvp");
        let compile = run(Command::new(sim)
            .arg("-g2001")
            .arg("-o")
            .arg(&exe)
            .arg(&files.verilog)
            .arg(&files.testbench))?;
        if !compile.status.success() {
            return Ok(failed(compile));
        }
        let vvp = sim.with_file_name("vvp");
        let vvp = if vvp.exists() {
            vvp
        } else {
            PathBuf::from("vvp")
        };
        run(Command::new(vvp).arg(&exe))?
    } else {
        let compile = run(Command::new(sim)
            .args([
                "--binary",
                "-Wno-fatal",
                "-MAKEFLAGS",
                "PYTHON3=python3",
                "--top-module",
            ])
            .arg(&tb_top)
            .arg(&files.verilog)
            .arg(&files.testbench))?;
        if !compile.status.success() {
            return Ok(failed(compile));
        }
        run(&mut Command::new(
            work.join("obj_dir").join(format!("V{tb_top}")),
        ))?
    };
    let log = String::from_utf8_lossy(&output.stdout).into_owned()
        + &String::from_utf8_lossy(&output.stderr);
    Ok(parse_report(&log).unwrap_or(SimulationReport {
        pass: 0,
        fail: 1,
        log,
    }))
}

fn failed(out: std::process::Output) -> SimulationReport {
    SimulationReport {
        pass: 0,
        fail: 1,
        log: String::from_utf8_lossy(&out.stdout).into_owned()
            + &String::from_utf8_lossy(&out.stderr),
    }
}

/// Reads the `PASS <n> FAIL <m>` summary line a testbench prints.
pub fn parse_report(log: &str) -> Option<SimulationReport> {
    log.lines().rev().find_map(|line| {
        let mut it = line.split_whitespace();
        let (Some("PASS"), Some(p), Some("FAIL"), Some(f)) =
            (it.next(), it.next(), it.next(), it.next())
        else {
            return None;
        };
        Some(SimulationReport {
            pass: p.parse().ok()?,
            fail: f.parse().ok()?,
            log: log.to_string(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{Builder, WireType};

    fn fx(s: &str) -> WireType {
        WireType::Fixed(s.parse().unwrap())
    }

    #[test]
    fn const_only_module() {
        let mut b = Builder::new("k");
        let c = b.constant(-5, fx("fixed<8,4,s>"));
        b.output("y", c);
        let n = b.finish(0, 1);
        let v = emit_verilog(&n).unwrap();
        assert!(v.contains("module k"));
        assert!(v.contains("8'shfb"), "{v}");
        assert_eq!(lint_verilog(&v), vec![]);
        let tb = emit_testbench(&n, &[]).unwrap();
        assert_eq!(lint_verilog(&format!("{v}{tb}")), vec![]);
    }

    #[test]
    fn unverified_netlist_rejected() {
        let mut b = Builder::new("bad");
        let x = b.input("x", fx("fixed<8,4,s>"));
        b.output("y", x);
        // Claims one cycle of latency but the path is combinational.
        let mut n = b.finish(0, 1);
        n.latency_cycles = 1;
        assert!(matches!(
            emit_verilog(&n),
            Err(EmitError::UnverifiedNetlist(_))
        ));
    }

    #[test]
    fn report_parsing() {
        let r = parse_report("noise\nPASS 3 FAIL 0\n- done").unwrap();
        assert_eq!((r.pass, r.fail), (3, 0));
        assert!(parse_report("nothing here").is_none());
    }
}

#[cfg(test)]
mod design_tests {
    use super::*;
    use crate::lower::lower;
    use crate::lower::tests::{bdt, dense, fcnn};
    use crate::model::{Activation, Tree};
    use std::collections::BTreeSet;

    fn designs() -> Vec<NetlistIr> {
        let mut out = vec![
            lower(&bdt(vec![Tree::stump(0, 0.5, -1.0, 1.0)]), 1, "stump").unwrap(),
            lower(
                &bdt((0..5)
                    .map(|i| Tree::stump(i % 2, 0.1 * i as f64, -0.5, 0.25))
                    .collect()),
                1,
                "five",
            )
            .unwrap(),
        ];
        let q = fcnn(vec![
            dense(
                vec![
                    vec![0.5, -0.25, 0.75],
                    vec![0.0, 0.0, 0.0],
                    vec![-1.0, 0.5, 0.25],
                ],
                Activation::Relu,
            ),
            dense(
                vec![vec![0.5, 1.0, -0.5], vec![0.25, 0.0, 0.5]],
                Activation::Sigmoid,
            ),
            dense(vec![vec![1.5, -1.0]], Activation::Linear),
        ]);
        for r in 1..=3 {
            out.push(lower(&q, r, &format!("deep_r{r}")).unwrap());
        }
        out
    }

    fn sample_inputs(n: &NetlistIr, count: usize) -> Vec<Vec<i128>> {
        (0..count)
            .map(|k| {
                n.inputs
                    .iter()
                    .enumerate()
                    .map(|(j, _)| {
                        let f = n.input_format(j).unwrap();
                        let span = f.max_raw() - f.min_raw() + 1;
                        f.min_raw() + ((k as i128 * 7919 + j as i128 * 104_729) % span)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn emitted_designs_lint_clean_with_exact_depth() {
        for n in designs() {
            let v = emit_verilog(&n).unwrap();
            assert_eq!(lint_verilog(&v), vec![], "{}", n.name);
            let vectors = interpreter_vectors(&n, &sample_inputs(&n, 4)).unwrap();
            let tb = emit_testbench(&n, &vectors).unwrap();
            assert_eq!(
                lint_verilog(&format!("{v}{tb}")),
                vec![],
                "{} testbench",
                n.name
            );
            let depths = register_depths(&v).unwrap();
            for p in &n.outputs {
                let d = &depths[&p.name];
                if n.initiation_interval == 1 {
                    assert_eq!(
                        d,
                        &BTreeSet::from([n.latency_cycles]),
                        "{} {}",
                        n.name,
                        p.name
                    );
                } else {
                    // Phase-enabled registers hold a value for several cycles.
                    assert!(
                        !d.is_empty() && d.iter().all(|x| *x <= n.latency_cycles),
                        "{} {}",
                        n.name,
                        p.name
                    );
                }
            }
            assert_eq!(v, emit_verilog(&n).unwrap());
        }
    }

    #[test]
    fn external_simulator_when_configured() {
        let Some(sim) = simulator_from_env() else {
            eprintln!("{SIMULATOR_ENV} not set; skipping external simulation");
            return;
        };
        for n in designs() {
            let dir =
                std::env::temp_dir().join(format!("fxhls_sim_{}_{}", std::process::id(), n.name));
            let vectors = interpreter_vectors(&n, &sample_inputs(&n, 16)).unwrap();
            let files = write_outputs(&n, &vectors, &dir).unwrap();
            let report = run_simulator(&sim, &files, &dir.join("work")).unwrap();
            assert_eq!(
                (report.pass, report.fail),
                (16, 0),
                "{}: {}",
                n.name,
                report.log
            );
            // Negative control: a corrupted expectation must be caught.
            let mut bad = vectors.clone();
            bad[3].outputs[0] ^= 1;
            let files = write_outputs(&n, &bad, &dir.join("bad")).unwrap();
            let report = run_simulator(&sim, &files, &dir.join("bad_work")).unwrap();
            assert_eq!(
                (report.pass, report.fail),
                (15, 1),
                "{}: {}",
                n.name,
                report.log
            );
            let _ = std::fs::remove_dir_all(&dir);
        }
    }
}
