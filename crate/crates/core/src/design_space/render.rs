use std::fmt::Write as _;
use std::sync::Arc;

use super::{validate_config, DesignPoint, KernelDescriptor, PartitionKind, PragmaConfig};
use crate::error::Result;

fn c_type(bits: u32) -> &'static str {
    match bits {
        8 => "int8_t",
        16 => "int16_t",
        32 => "int32_t",
        _ => "int64_t",
    }
}

/// Render a design as pseudo-HLS C. The output is a pure function of
/// `(kernel, config)` and carries one `#pragma HLS` line per non-default choice.
pub fn render_design(kernel: &Arc<KernelDescriptor>, config: &PragmaConfig) -> Result<DesignPoint> {
    validate_config(kernel, config)?;
    let mut out = String::new();
    let params: Vec<String> = kernel
        .arrays
        .iter()
        .map(|a| format!("{} {}[{}]", c_type(a.word_bits), a.name, a.num_words))
        .collect();
    let _ = writeln!(out, "void {}({}) {{", kernel.name, params.join(", "));
    for (a, p) in kernel.arrays.iter().zip(&config.arrays) {
        if p.kind != PartitionKind::None {
            let _ = writeln!(
                out,
                "#pragma HLS ARRAY_PARTITION variable={} {} factor={}",
                a.name,
                p.kind.as_str(),
                p.factor
            );
        }
    }
    for root in kernel.roots() {
        render_loop(kernel, config, root, 1, &mut out);
    }
    out.push_str("}\n");
    Ok(DesignPoint {
        kernel: Arc::clone(kernel),
        config: config.clone(),
        rendered_code: out,
        dynamic_alloc_flag: false,
    })
}

fn render_loop(kernel: &KernelDescriptor, config: &PragmaConfig, idx: usize, depth: usize, out: &mut String) {
    let l = &kernel.loops[idx];
    let p = &config.loops[idx];
    let pad = "  ".repeat(depth);
    let var = format!("i_{}", l.id);
    let _ = writeln!(out, "{pad}{}: for (int {var} = 0; {var} < {}; {var}++) {{", l.id, l.trip_count);
    if let Some(ii) = p.pipeline_ii {
        let _ = writeln!(out, "#pragma HLS PIPELINE II={ii}");
    }
    if p.unroll > 1 {
        let _ = writeln!(out, "#pragma HLS UNROLL factor={}", p.unroll);
    }
    let inner = "  ".repeat(depth + 1);
    if l.ops_add + l.ops_mul > 0 || !l.arrays.is_empty() {
        let mut expr = format!("acc_{}", l.id);
        for (k, a) in l.arrays.iter().enumerate() {
            let op = if (k as u64) < l.ops_mul { '*' } else { '+' };
            let _ = write!(expr, " {op} {a}[{var}]");
        }
        let used = l.arrays.len() as u64;
        for m in used.min(l.ops_mul)..l.ops_mul {
            let _ = write!(expr, " * c{m}");
        }
        for a in 0..l.ops_add {
            let _ = write!(expr, " + d{a}");
        }
        let _ = writeln!(out, "{inner}acc_{} = {expr};", l.id);
    }
    for child in kernel.children(idx) {
        render_loop(kernel, config, child, depth + 1, out);
    }
    let _ = writeln!(out, "{pad}}}");
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::design_space::{enumerate_space, parse_kernel_descriptor, ArrayPragma, LoopPragma};

    fn kernel() -> Arc<KernelDescriptor> {
        Arc::new(
            parse_kernel_descriptor(
                "kernel mv\narray A words=16 bits=32\narray x words=4 bits=16\nloop r trip=4\nloop c trip=4 parent=r add=1 mul=1 arrays=A,x\n",
            )
            .unwrap(),
        )
    }

    fn pragma_lines(text: &str) -> usize {
        text.lines().filter(|l| l.starts_with("#pragma HLS")).count()
    }

    #[test]
    fn all_default_has_no_pragmas() {
        let k = kernel();
        let d = render_design(&k, &PragmaConfig::all_default(&k)).unwrap();
        assert_eq!(pragma_lines(&d.rendered_code), 0);
        assert!(!d.dynamic_alloc_flag);
    }

    #[test]
    fn pragma_lines_follow_the_format() {
        let k = kernel();
        let mut c = PragmaConfig::all_default(&k);
        c.loops[0] = LoopPragma { unroll: 4, pipeline_ii: None };
        c.loops[1] = LoopPragma { unroll: 2, pipeline_ii: Some(1) };
        c.arrays[0] = ArrayPragma { kind: PartitionKind::Cyclic, factor: 4 };
        let text = render_design(&k, &c).unwrap().rendered_code;
        assert!(text.contains("#pragma HLS UNROLL factor=4"));
        assert!(text.contains("#pragma HLS UNROLL factor=2"));
        assert!(text.contains("#pragma HLS PIPELINE II=1"));
        assert!(text.contains("#pragma HLS ARRAY_PARTITION variable=A cyclic factor=4"));
        assert_eq!(pragma_lines(&text), 4);
        assert_eq!(text, render_design(&k, &c).unwrap().rendered_code);
    }

    #[test]
    fn illegal_config_is_rejected() {
        let k = kernel();
        let mut c = PragmaConfig::all_default(&k);
        c.loops[1].unroll = 3;
        assert!(render_design(&k, &c).is_err());
    }

    #[test]
    fn rendering_is_injective() {
        let k = kernel();
        let configs = enumerate_space(&k).unwrap();
        let texts: HashSet<String> = configs
            .iter()
            .map(|c| render_design(&k, c).unwrap().rendered_code)
            .collect();
        assert_eq!(texts.len(), configs.len());
    }
}
