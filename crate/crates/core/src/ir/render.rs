use std::fmt::Write;

use super::value::ArgValue;
use super::{Instruction, ProtocolProgram, DEFAULT_ENV};

/// Canonical text: named args in parameter order, one call per line.
pub fn render_program(program: &ProtocolProgram) -> String {
    let mut out = String::new();
    if !program.title.is_empty() {
        let _ = writeln!(out, "# @title {}", program.title.replace('\n', " "));
    }
    if program.env_ref != DEFAULT_ENV {
        let _ = writeln!(out, "# @env {}", program.env_ref);
    }
    for instr in &program.instructions {
        out.push_str(&render_instruction(instr));
        out.push('\n');
    }
    out
}

pub fn render_instruction(instr: &Instruction) -> String {
    let mut out = String::with_capacity(48);
    out.push_str(&instr.function);
    out.push('(');
    for (i, (name, value)) in instr.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(name);
        out.push('=');
        render_value(&mut out, value);
    }
    out.push(')');
    out
}

fn render_value(out: &mut String, value: &ArgValue) {
    match value {
        ArgValue::Text(s) => quote(out, s),
        ArgValue::Quantity(q) => {
            let _ = write!(out, "{}", q.value());
        }
        ArgValue::Integer(i) => {
            let _ = write!(out, "{i}");
        }
        ArgValue::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        ArgValue::TextList(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                quote(out, item);
            }
            out.push(']');
        }
    }
}

fn quote(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, FunctionRegistry};

    #[test]
    fn empty_program_renders_empty() {
        assert_eq!(render_program(&ProtocolProgram::default()), "");
    }

    #[test]
    fn shake_renders_canonically() {
        let reg = FunctionRegistry::builtin();
        let i = Instruction::build(
            &reg,
            "shake",
            vec![("container", ArgValue::text("ContainerB"))],
        )
        .unwrap();
        assert_eq!(render_instruction(&i), r#"shake(container="ContainerB")"#);
    }

    #[test]
    fn defaults_are_rendered_and_numbers_normalized() {
        let reg = FunctionRegistry::builtin();
        let p = parse_program("add_liquid(10.50, TubeA)", &reg).unwrap();
        assert_eq!(
            render_program(&p),
            "add_liquid(liquid_type=\"PBS\", volume=10.5, container=\"TubeA\")\n"
        );
    }

    #[test]
    fn metadata_and_escapes_round_trip() {
        let reg = FunctionRegistry::builtin();
        let i = Instruction::build(
            &reg,
            "add_liquid",
            vec![
                ("liquid_type", ArgValue::text("a \"b\"\\ c\td\ne # f")),
                ("volume", ArgValue::ml(0.1)),
                ("container", ArgValue::text("TubeA")),
            ],
        )
        .unwrap();
        let p = ProtocolProgram::new(vec![i])
            .with_title("Wash")
            .with_env("bench-2");
        assert_eq!(parse_program(&render_program(&p), &reg).unwrap(), p);
    }
}
