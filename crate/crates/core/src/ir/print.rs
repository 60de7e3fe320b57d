//! Canonical text form. Parsing what was printed yields a structurally
//! identical function, so the printed form doubles as a hash key.

use super::{Function, Instruction, Opcode};
use std::fmt::Write;

pub(crate) fn write_instruction(out: &mut String, inst: &Instruction) {
    write!(out, "%{} = {}", inst.result, inst.opcode).unwrap();
    if !inst.flags.is_empty() {
        write!(out, " {}", inst.flags).unwrap();
    }
    write!(out, " {}", inst.width).unwrap();
    for (k, op) in inst.operands.iter().enumerate() {
        if k == 0 {
            write!(out, " {op}").unwrap();
        } else {
            write!(out, ", {op}").unwrap();
        }
    }
    // icmp annotates its operand width; the result is always i1.
    debug_assert!(!matches!(inst.opcode, Opcode::Icmp(_)) || inst.operands.len() == 2);
}

pub fn print_function(f: &Function) -> String {
    let mut out = String::new();
    write!(out, "func @{}(", f.name).unwrap();
    for (k, p) in f.params.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        write!(out, "%{}:{}", p.name, p.width).unwrap();
    }
    out.push_str(") {\n");
    for inst in &f.body {
        out.push_str("  ");
        write_instruction(&mut out, inst);
        out.push('\n');
    }
    out.push_str("  ret ");
    for (k, r) in f.returns.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        write!(out, "%{r}").unwrap();
    }
    out.push_str("\n}\n");
    out
}

pub fn print_functions(fs: &[Function]) -> String {
    fs.iter().map(print_function).collect::<Vec<_>>().join("\n")
}
