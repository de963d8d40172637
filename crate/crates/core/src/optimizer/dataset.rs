use std::io::Read;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{Dl, ParamPoint, ParamSpace};
use super::OptimizerError;

pub const HEADER: [&str; 8] = ["PC", "PP", "DP", "DS", "DL", "KP", "P3", "pigment_score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Dataset,
    Oracle,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub point: ParamPoint,
    pub pigment_score: f64,
    pub source: RecordSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ExperimentRecord>,
}

#[derive(Debug, Deserialize)]
struct Row {
    #[serde(rename = "PC")]
    pc: f64,
    #[serde(rename = "PP")]
    pp: f64,
    #[serde(rename = "DP")]
    dp: f64,
    #[serde(rename = "DS")]
    ds: f64,
    #[serde(rename = "DL")]
    dl: String,
    #[serde(rename = "KP")]
    kp: f64,
    #[serde(rename = "P3")]
    p3: f64,
    pigment_score: f64,
}

fn integral(row: usize, field: &str, v: f64) -> Result<i64, OptimizerError> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(OptimizerError::MalformedRow {
            row,
            message: format!("{field} must be a whole number, got {v}"),
        });
    }
    Ok(v as i64)
}

impl Dataset {
    pub fn new(records: Vec<ExperimentRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parses a comma-delimited table with the standard header. Row numbers count the header as row 1.
    pub fn from_reader(reader: impl Read) -> Result<Self, OptimizerError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| OptimizerError::MalformedRow {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(OptimizerError::MalformedRow {
                row: 1,
                message: format!("header must be `{}`", HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, result) in rdr.deserialize::<Row>().enumerate() {
            let row = i + 2;
            let r = result.map_err(|e| OptimizerError::MalformedRow {
                row,
                message: e.to_string(),
            })?;
            let dl: Dl =
                r.dl.parse()
                    .map_err(|message| OptimizerError::MalformedRow { row, message })?;
            let point = ParamPoint {
                pc: r.pc,
                pp: integral(row, "PP", r.pp)?,
                dp: integral(row, "DP", r.dp)?,
                ds: r.ds,
                dl,
                kp: integral(row, "KP", r.kp)?,
                p3: integral(row, "P3", r.p3)?,
            };
            ParamSpace.check(&point).map_err(|e| e.at_row(row))?;
            if !(0.0..=1.0).contains(&r.pigment_score) {
                return Err(OptimizerError::BoundViolation {
                    row: Some(row),
                    field: "pigment_score".into(),
                    value: r.pigment_score,
                });
            }
            records.push(ExperimentRecord {
                point,
                pigment_score: r.pigment_score,
                source: RecordSource::Dataset,
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OptimizerError> {
        let file =
            std::fs::File::open(path.as_ref()).map_err(|e| OptimizerError::Io(e.to_string()))?;
        Self::from_reader(file)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.records {
            let p = r.point;
            w.write_record([
                p.pc.to_string(),
                p.pp.to_string(),
                p.dp.to_string(),
                p.ds.to_string(),
                p.dl.name().to_string(),
                p.kp.to_string(),
                p.p3.to_string(),
                r.pigment_score.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// FNV-1a over the canonical CSV rendering; identifies the dataset in campaign metadata.
    pub fn content_hash(&self) -> String {
        format!("{:016x}", crate::detector::fnv1a(self.to_csv().as_bytes()))
    }
}

/// Dataset loader entry point.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, OptimizerError> {
    Dataset::load(path)
}

/// Seeded uniform sample without replacement of `n` records scoring below `max_score`.
pub fn select_init(
    dataset: &Dataset,
    n: usize,
    max_score: f64,
    seed: u64,
) -> Result<Vec<ExperimentRecord>, OptimizerError> {
    let qualifying: Vec<_> = dataset
        .records
        .iter()
        .filter(|r| r.pigment_score < max_score)
        .copied()
        .collect();
    if qualifying.len() < n {
        return Err(OptimizerError::InsufficientLowPerformers {
            needed: n,
            available: qualifying.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(qualifying.choose_multiple(&mut rng, n).copied().collect())
}

/// Uniform random points scored by `score`, for demos and tests.
pub fn synthetic_dataset(n: usize, seed: u64, score: impl Fn(&ParamPoint) -> f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let point = ParamSpace.sample(&mut rng);
            ExperimentRecord {
                pigment_score: score(&point).clamp(0.0, 1.0),
                point,
                source: RecordSource::Dataset,
            }
        })
        .collect();
    Dataset { records }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Surrogate;

    const HEAD: &str = "PC,PP,DP,DS,DL,KP,P3,pigment_score\n";

    #[test]
    fn accepts_reference_row() {
        let d =
            Dataset::from_reader(format!("{HEAD}220,3,10,25,long,18,10,0.8\n").as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        let r = d.records[0];
        assert_eq!(
            (r.point.pc, r.point.ds, r.point.kp, r.point.dl),
            (220.0, 25.0, 18, Dl::Long)
        );
        assert_eq!(r.pigment_score, 0.8);
    }

    #[test]
    fn rejects_out_of_bounds_with_row() {
        let e = Dataset::from_reader(
            format!("{HEAD}220,3,10,25,long,18,10,0.8\n600,3,10,25,long,18,10,0.8\n").as_bytes(),
        )
        .unwrap_err();
        assert_eq!(
            e,
            OptimizerError::BoundViolation {
                row: Some(3),
                field: "PC".into(),
                value: 600.0
            }
        );
    }

    #[test]
    fn header_only_is_empty_and_bad_rows_are_malformed() {
        assert!(Dataset::from_reader(HEAD.as_bytes()).unwrap().is_empty());
        let e = Dataset::from_reader(format!("{HEAD}220,3,10,25,medium,18,10,0.8\n").as_bytes())
            .unwrap_err();
        assert!(matches!(e, OptimizerError::MalformedRow { row: 2, .. }));
        let e = Dataset::from_reader(format!("{HEAD}220,3.5,10,25,long,18,10,0.8\n").as_bytes())
            .unwrap_err();
        assert!(matches!(e, OptimizerError::MalformedRow { row: 2, .. }));
        assert!(Dataset::from_reader("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = synthetic_dataset(25, 1, |p| Surrogate::new(ParamSpace.lower()).eval(p));
        assert_eq!(Dataset::from_reader(d.to_csv().as_bytes()).unwrap(), d);
        assert_eq!(d.content_hash(), d.clone().content_hash());
    }

    #[test]
    fn init_selection() {
        let d = synthetic_dataset(40, 2, |p| p.pc / 1000.0);
        let low: Vec<_> = d.records.iter().filter(|r| r.pigment_score < 0.6).collect();
        assert_eq!(low.len(), 40);
        let a = select_init(&d, 10, 0.6, 9).unwrap();
        assert_eq!(a, select_init(&d, 10, 0.6, 9).unwrap());
        assert_eq!(a.len(), 10);
        assert!(select_init(&d, 0, 0.6, 9).unwrap().is_empty());
        assert!(matches!(
            select_init(&d, 41, 0.6, 9),
            Err(OptimizerError::InsufficientLowPerformers {
                needed: 41,
                available: 40
            })
        ));
    }

    #[test]
    fn exactly_n_qualifying_are_all_selected() {
        let mut d = synthetic_dataset(10, 4, |_| 0.1);
        d.records.extend(synthetic_dataset(5, 5, |_| 0.9).records);
        let mut got = select_init(&d, 10, 0.6, 1).unwrap();
        let mut want = d.records[..10].to_vec();
        let key = |r: &ExperimentRecord| r.point.values().map(f64::to_bits);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want);
    }
}
