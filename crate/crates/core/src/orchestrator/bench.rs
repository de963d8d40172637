use serde::{Deserialize, Serialize};

pub const CELL_LINES: [&str; 7] = ["HeLa", "HUVEC", "HepG2", "DC2.4", "Y79", "K562", "CHO"];

const PLACEHOLDER: &str = "[Cell Type]";

pub const TEMPLATES: [&str; 10] = [
    "How to resuscitate [Cell Type] cells in detail?",
    "How to perform passaging of [Cell Type] cells in detail?",
    "How to change the medium for [Cell Type] cells in detail?",
    "How to freeze and store [Cell Type] cells in detail?",
    "What is the recommended seeding density for the [Cell Type] cell line?",
    "How to detect the metabolic activity of the [Cell Type] cell line in detail?",
    "How to evaluate the apoptotic level of the [Cell Type] cell line in detail?",
    "What is the cryopreservation solution formula for the [Cell Type] cell line?",
    "How to detect the proliferation of the [Cell Type] cell line in detail?",
    "How to culture 3D cell spheres using the [Cell Type] cell line in detail?",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchmarkQuery {
    /// 1-based template number.
    pub template: u8,
    pub cell_line: String,
    pub text: String,
}

pub fn render_query(template: u8, cell_line: &str) -> Option<String> {
    let t = TEMPLATES.get(usize::from(template).checked_sub(1)?)?;
    Some(t.replace(PLACEHOLDER, cell_line))
}

/// Template-major cross product of templates and cell lines.
pub fn generate_benchmark() -> Vec<BenchmarkQuery> {
    (1..=TEMPLATES.len() as u8)
        .flat_map(|template| {
            CELL_LINES.iter().map(move |cell| BenchmarkQuery {
                template,
                cell_line: cell.to_string(),
                text: render_query(template, cell).expect("template in range"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RubricLevel {
    pub score: u8,
    pub standard: &'static str,
    pub notes: &'static str,
}

/// Five grading levels, best first. Data only; nothing here grades a protocol.
pub fn rubric() -> [RubricLevel; 5] {
    [
        RubricLevel {
            score: 5,
            standard: "Very detailed and biologically accurate cell culture procedure description",
            notes: "volumes, reagent composition, temperatures and handling motions all given",
        },
        RubricLevel {
            score: 4,
            standard: "Detailed and biologically accurate but lacks reagent quantities or parameter anomalies",
            notes: "workable steps; reagent identity or a parameter left open",
        },
        RubricLevel {
            score: 3,
            standard: "The correct biological cell culture is carried out, but there are logical errors in the steps",
            notes: "right overall procedure, wrong ordering or impossible step such as spinning an empty tube",
        },
        RubricLevel {
            score: 2,
            standard: "Extremely vague or infeasible description",
            notes: "steps that belong to another procedure or cannot be executed",
        },
        RubricLevel {
            score: 1,
            standard: "Incorrect answers or failure to follow instructions",
            notes: "does not answer the question asked",
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn seventy_unique_queries_ten_per_line() {
        let b = generate_benchmark();
        assert_eq!(b.len(), 70);
        assert_eq!(b.iter().map(|q| &q.text).collect::<HashSet<_>>().len(), 70);
        for cell in CELL_LINES {
            assert_eq!(b.iter().filter(|q| q.cell_line == cell).count(), 10);
        }
        assert!(b.iter().all(|q| !q.text.contains('[')));
    }

    #[test]
    fn first_template_for_hela() {
        assert_eq!(
            render_query(1, "HeLa").unwrap(),
            "How to resuscitate HeLa cells in detail?"
        );
        assert_eq!(
            generate_benchmark()[0].text,
            "How to resuscitate HeLa cells in detail?"
        );
        assert!(render_query(0, "HeLa").is_none());
        assert!(render_query(11, "HeLa").is_none());
    }

    #[test]
    fn rubric_levels_descend() {
        let r = rubric();
        assert_eq!(r.map(|l| l.score), [5, 4, 3, 2, 1]);
        assert_eq!(
            r[0].standard,
            "Very detailed and biologically accurate cell culture procedure description"
        );
        assert_eq!(
            r[4].standard,
            "Incorrect answers or failure to follow instructions"
        );
    }
}
