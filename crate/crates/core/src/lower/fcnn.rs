use super::{adder_tree, module_name, stage_register, LowerError, Operand};
use crate::emulate::{tree_levels, SigmoidLut};
use crate::model::Activation;
use crate::netlist::{Builder, CellKind, NetlistIr, WireType};
use crate::quantize::{product_format, QLayer, QuantizedFcnn};

/// Effective reuse of a layer: `reuse` clamped to `[1, max nonzero fan-in]`.
pub fn layer_reuse(layer: &QLayer, reuse: u32) -> u32 {
    reuse.min(layer.max_fan_in() as u32).max(1)
}

/// Per layer: `R` multiply cycles, `ceil(log2(fan_in + 1))` adder levels
/// (bias included) and one activation stage. With `R > 1` each multiplier
/// serves `R` products in consecutive phases; the pipeline accepts a new
/// input every `max R` cycles.
pub fn lower_fcnn(q: &QuantizedFcnn, reuse: u32, name: &str) -> Result<NetlistIr, LowerError> {
    if q.layers.is_empty() {
        return Err(LowerError::EmptyModel);
    }
    if reuse == 0 {
        return Err(LowerError::InvalidReuse);
    }
    let ii = q
        .layers
        .iter()
        .map(|l| layer_reuse(l, reuse))
        .max()
        .unwrap_or(1);
    let mut b = Builder::new(&module_name(name));
    let x_ty = WireType::Fixed(q.config.input_fmt);
    let mut h: Vec<Operand> = (0..q.n_inputs())
        .map(|i| Operand {
            wire: b.input(&format!("x{i}"), x_ty),
            timed: true,
        })
        .collect();
    let mut t = 0u32;
    for (k, layer) in q.layers.iter().enumerate() {
        let lf = q.config.fcnn[k];
        let r = layer_reuse(layer, reuse);
        if r < reuse {
            b.note(format!(
                "layer {k}: reuse {reuse} clamped to {r} (largest nonzero fan-in)"
            ));
        }
        let prod_ty = WireType::Fixed(
            product_format(q.layer_input_fmt(k), lf.weight_fmt)
                .map_err(|e| LowerError::Format(e.to_string()))?,
        );
        let w_ty = WireType::Fixed(lf.weight_fmt);
        let acc_ty = WireType::Fixed(lf.accum_fmt);
        let act_ty = WireType::Fixed(lf.activation_fmt);

        // Products in neuron-major, input order.
        let terms: Vec<(usize, usize)> = (0..layer.n_out())
            .flat_map(|n| layer.nonzero_inputs(n).into_iter().map(move |i| (n, i)))
            .collect();
        let mut products: Vec<Vec<Operand>> = vec![Vec::new(); layer.n_out()];
        let offset = t % ii;
        for chunk in terms.chunks(r as usize) {
            let mut inputs = Vec::with_capacity(2 * chunk.len());
            for &(n, i) in chunk {
                inputs.push(h[i].wire);
                inputs.push(b.constant(layer.weights[n][i], w_ty));
            }
            let timed = chunk.iter().any(|&(_, i)| h[i].timed);
            let mul = b.cell(
                CellKind::Mul {
                    phase_offset: offset,
                },
                inputs,
                prod_ty,
                t,
                "mul",
            );
            for (j, &(n, _)) in chunk.iter().enumerate() {
                let j = j as u32;
                let p = if r == 1 {
                    stage_register(&mut b, Operand { wire: mul, timed }, t + 1)
                } else {
                    let last = (t + r - 1) % ii;
                    let src = if j + 1 < r {
                        b.register(mul, t + j + 1, Some((t + j) % ii))
                    } else {
                        mul
                    };
                    Operand {
                        wire: b.register(src, t + r, Some(last)),
                        timed,
                    }
                };
                products[n].push(p);
            }
        }

        let depth = tree_levels(layer.max_fan_in() + 1);
        let t_act = t + r + depth as u32;
        let lut = (layer.activation == Activation::Sigmoid)
            .then(|| SigmoidLut::new(q.config.sigmoid, lf.activation_fmt));
        h = products
            .into_iter()
            .enumerate()
            .map(|(n, mut ops)| {
                ops.push(Operand {
                    wire: b.constant(layer.bias[n], WireType::Fixed(lf.bias_fmt)),
                    timed: false,
                });
                let acc = adder_tree(&mut b, ops, acc_ty, t + r, depth);
                let act = match layer.activation {
                    Activation::Linear | Activation::Softmax => {
                        b.cell(CellKind::SatCast, vec![acc.wire], act_ty, t_act, "act")
                    }
                    Activation::Relu => {
                        let clamped =
                            b.cell(CellKind::ReluClamp, vec![acc.wire], acc_ty, t_act, "relu");
                        b.cell(CellKind::SatCast, vec![clamped], act_ty, t_act, "act")
                    }
                    Activation::Sigmoid => {
                        let lut = lut.as_ref().expect("sigmoid table");
                        let e = lut.table.entries_log2() as i32;
                        let rr = lut.table.half_range_log2();
                        let shift = e - rr - 1 - lf.accum_fmt.fractional_bits() as i32;
                        b.cell(
                            CellKind::LutRom {
                                shift,
                                contents: lut.contents.clone(),
                                below: lut.below,
                                above: lut.above,
                            },
                            vec![acc.wire],
                            act_ty,
                            t_act,
                            "sigmoid",
                        )
                    }
                };
                stage_register(
                    &mut b,
                    Operand {
                        wire: act,
                        timed: acc.timed,
                    },
                    t_act + 1,
                )
            })
            .collect();
        t = t_act + 1;
    }
    for (c, v) in h.iter().enumerate() {
        b.output(&format!("score{c}"), v.wire);
    }
    Ok(b.finish(t, ii))
}
