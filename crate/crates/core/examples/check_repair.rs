//! Checks one program from each seeded fault class and prints the findings and repair.

use labrun_core::checker::{check_program, findings_to_jsonl};
use labrun_core::corpus::fault_corpus;
use labrun_core::env::EnvConfig;
use labrun_core::fixtures;
use labrun_core::ir::{parse_program, render_program, FunctionRegistry};

fn main() {
    let env = EnvConfig::default_lab();
    let registry = FunctionRegistry::builtin();
    for seeded in fault_corpus(1, 7) {
        let program = parse_program(&seeded.source, &registry).expect("corpus parses");
        let checked = check_program(&program, &env).expect("repairable");
        println!("== seeded {} at #{}", seeded.kind, seeded.fault_index);
        print!("{}", findings_to_jsonl(&checked.findings));
        println!("-- repaired");
        print!("{}", render_program(&checked.program));
    }
    println!("== HUVEC transcript");
    match check_program(&fixtures::freeze_huvec(), &env) {
        Ok(c) => print!("{}", findings_to_jsonl(&c.findings)),
        Err(e) => println!("rejected: {e}"),
    }
}
