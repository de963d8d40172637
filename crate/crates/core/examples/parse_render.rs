//! Parses a protocol file (or the bundled passaging run) and prints its canonical form.

use labrun_core::fixtures;
use labrun_core::ir::{parse_program, render_program, FunctionRegistry};

fn main() {
    let source = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).expect("readable protocol file"),
        None => fixtures::PASSAGING.to_string(),
    };
    let registry = FunctionRegistry::builtin();
    match parse_program(&source, &registry) {
        Ok(program) => {
            print!("{}", render_program(&program));
            eprintln!("{} instructions", program.len());
        }
        Err(e) => {
            eprintln!("parse error: {e}");
            std::process::exit(1);
        }
    }
}
