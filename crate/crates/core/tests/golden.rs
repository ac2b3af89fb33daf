//! Byte-stable emission against checked-in golden files.
//! Regenerate with `FXHLS_BLESS=1 cargo test -p fxhls --test golden`.

mod common;

use common::{golden_path, golden_stump};
use fxhls::emit::{emit_verilog, lint_verilog};
use fxhls::lower::lower;

fn check_golden(file: &str, text: &str) {
    let path = golden_path(file);
    if std::env::var_os("FXHLS_BLESS").is_some() {
        std::fs::write(&path, text).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(want == text, "{file} differs from golden copy:\n{text}");
}

#[test]
fn single_stump_verilog_matches_golden() {
    let n = lower(&golden_stump(), 1, "stump").unwrap();
    let first = emit_verilog(&n).unwrap();
    let again = emit_verilog(&lower(&golden_stump(), 1, "stump").unwrap()).unwrap();
    assert_eq!(first, again);
    assert_eq!(lint_verilog(&first), vec![]);
    check_golden("stump.v", &first);
}

#[test]
fn single_stump_netlist_json_matches_golden() {
    let n = lower(&golden_stump(), 1, "stump").unwrap();
    check_golden("stump.netlist.json", &n.to_json());
}
