//! Emits the 70-query benchmark as JSON lines, then the scoring rubric.

use labrun_core::orchestrator::{generate_benchmark, rubric};

fn main() {
    for q in generate_benchmark() {
        println!("{}", serde_json::to_string(&q).expect("serializable"));
    }
    for level in rubric() {
        println!("{}: {}", level.score, level.standard);
    }
}
