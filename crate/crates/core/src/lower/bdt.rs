use super::{adder_tree, module_name, LowerError, Operand};
use crate::emulate::tree_levels;
use crate::netlist::{Builder, CellKind, NetlistIr, WireType};
use crate::quantize::{QNode, QuantizedBdt};

/// Stage 1 compares every split, stage 2 AND-reduces each leaf's path,
/// stage 3 OR-reduces the masked leaf constants per tree and the
/// remaining stages sum trees and base score per class.
/// Latency is `3 + ceil(log2(T_c + 1))` for the largest class.
pub fn lower_bdt(q: &QuantizedBdt, name: &str) -> Result<NetlistIr, LowerError> {
    if q.trees.is_empty() {
        return Err(LowerError::EmptyEnsemble);
    }
    let f = q.formats();
    let x_ty = WireType::Fixed(q.config.input_fmt);
    let thr_ty = WireType::Fixed(f.threshold_fmt);
    let leaf_ty = WireType::Fixed(f.leaf_fmt);
    let acc_ty = WireType::Fixed(f.accum_fmt);
    let mut b = Builder::new(&module_name(name));
    let x: Vec<_> = (0..q.n_features)
        .map(|i| b.input(&format!("x{i}"), x_ty))
        .collect();
    let zero = b.constant(0, leaf_ty);

    let mut per_class: Vec<Vec<Operand>> = vec![Vec::new(); q.n_classes];
    for tree in &q.trees {
        let score = if let [QNode::Leaf { leaf }] = tree.nodes[..] {
            Operand {
                wire: b.constant(leaf, leaf_ty),
                timed: false,
            }
        } else {
            let mut bit = vec![None; tree.nodes.len()];
            for (id, node) in tree.nodes.iter().enumerate() {
                if let QNode::Split {
                    feature, threshold, ..
                } = *node
                {
                    let t = b.constant(threshold, thr_ty);
                    let lt = b.cell(
                        CellKind::Comparator,
                        vec![x[feature], t],
                        WireType::Bit,
                        0,
                        "cmp",
                    );
                    bit[id] = Some(b.register(lt, 1, None));
                }
            }
            let mut selected = Vec::new();
            for (leaf_id, path) in QuantizedBdt::leaf_paths(tree) {
                let inputs = path
                    .iter()
                    .map(|(n, _)| bit[*n].expect("split node"))
                    .collect();
                let invert = path.iter().map(|(_, left)| !left).collect();
                let hit = b.cell(
                    CellKind::AndReduce { invert },
                    inputs,
                    WireType::Bit,
                    1,
                    "path",
                );
                let hit = b.register(hit, 2, None);
                let QNode::Leaf { leaf } = tree.nodes[leaf_id] else {
                    unreachable!("leaf_paths yields leaves")
                };
                let value = b.constant(leaf, leaf_ty);
                selected.push(b.cell(CellKind::Mux, vec![hit, value, zero], leaf_ty, 2, "sel"));
            }
            let or = b.cell(CellKind::OrReduce, selected, leaf_ty, 2, "tree");
            Operand {
                wire: b.register(or, 3, None),
                timed: true,
            }
        };
        per_class[tree.class_index].push(score);
    }

    let depth = tree_levels(per_class.iter().map(Vec::len).max().unwrap_or(0) + 1);
    for (c, mut ops) in per_class.into_iter().enumerate() {
        ops.push(Operand {
            wire: b.constant(q.base_scores[c], leaf_ty),
            timed: false,
        });
        let score = adder_tree(&mut b, ops, acc_ty, 3, depth);
        b.output(&format!("score{c}"), score.wire);
    }
    Ok(b.finish(3 + depth as u32, 1))
}
