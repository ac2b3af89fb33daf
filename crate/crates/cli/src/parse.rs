//! Flag value parsers shared by several subcommands.

use fxhls::quantize::Widths;

/// A comma list or range given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

/// `a..b` (inclusive), `a..b:step`, or a comma list.
pub fn u32_list(s: &str) -> Result<List<u32>, String> {
    u32_values(s).map(List)
}

fn u32_values(s: &str) -> Result<Vec<u32>, String> {
    let s = s.trim();
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (hi, step),
            None => (rest, "1"),
        };
        let lo: u32 = lo
            .trim()
            .parse()
            .map_err(|_| format!("bad range start in `{s}`"))?;
        let hi: u32 = hi
            .trim()
            .parse()
            .map_err(|_| format!("bad range end in `{s}`"))?;
        let step: u32 = step
            .trim()
            .parse()
            .map_err(|_| format!("bad range step in `{s}`"))?;
        if step == 0 || hi < lo {
            return Err(format!("empty range `{s}`"));
        }
        return Ok((lo..=hi).step_by(step as usize).collect());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format!("`{v}` is not a non-negative integer"))
        })
        .collect()
}

pub fn f64_list(s: &str) -> Result<List<f64>, String> {
    s.split(',')
        .map(|v| {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("`{v}` is not a number"))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{v}` is not finite"))
            }
        })
        .collect::<Result<_, _>>()
        .map(List)
}

/// A single width for every role, or `role=W` pairs where `all` sets the
/// default and `accum` fixes the accumulator width.
pub fn widths(s: &str) -> Result<Widths, String> {
    if let Ok(w) = s.trim().parse::<u32>() {
        return Ok(Widths::uniform(w));
    }
    let mut out = Widths::uniform(16);
    let pairs: Vec<(&str, u32)> = s
        .split(',')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected role=width, got `{kv}`"))?;
            let v = v
                .trim()
                .parse()
                .map_err(|_| format!("bad width in `{kv}`"))?;
            Ok((k.trim(), v))
        })
        .collect::<Result<_, String>>()?;
    if let Some((_, w)) = pairs.iter().find(|(k, _)| *k == "all") {
        out = Widths::uniform(*w);
    }
    for (k, v) in pairs {
        match k {
            "all" => {}
            "input" => out.input = v,
            "threshold" => out.threshold = v,
            "leaf" => out.leaf = v,
            "weight" => out.weight = v,
            "bias" => out.bias = v,
            "activation" => out.activation = v,
            "accum" => out.accum = Some(v),
            other => return Err(format!("unknown role `{other}`")),
        }
    }
    Ok(out)
}
