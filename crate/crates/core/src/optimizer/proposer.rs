use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::dataset::ExperimentRecord;
use super::space::{DimKind, ParamPoint, ParamSpace, DIMS};
use super::OptimizerError;

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub point: ParamPoint,
    pub warnings: Vec<String>,
}

impl From<ParamPoint> for Proposal {
    fn from(point: ParamPoint) -> Self {
        Self {
            point,
            warnings: Vec::new(),
        }
    }
}

/// Suggests the next condition from everything observed so far (init records first).
pub trait Proposer: Send {
    fn id(&self) -> &str;

    fn propose(
        &mut self,
        history: &[ExperimentRecord],
        iteration: usize,
        seed: u64,
    ) -> Result<Proposal, OptimizerError>;
}

/// Per-iteration RNG so a proposal depends only on (seed, iteration).
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomProposer;

impl Proposer for RandomProposer {
    fn id(&self) -> &str {
        "random"
    }

    fn propose(
        &mut self,
        _: &[ExperimentRecord],
        iteration: usize,
        seed: u64,
    ) -> Result<Proposal, OptimizerError> {
        Ok(ParamSpace
            .sample(&mut iteration_rng(seed, iteration))
            .into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    pub length_scale: f64,
    pub noise: f64,
    pub candidates: usize,
    /// Lower bound on the signal variance.
    pub min_variance: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.2,
            noise: 1e-4,
            candidates: 2048,
            min_variance: 1e-6,
        }
    }
}

/// GP posterior over normalized points with a constant mean.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<[f64; 7]>,
    alpha: Vec<f64>,
    /// Lower Cholesky factor of the noisy Gram matrix.
    l: DMatrix<f64>,
    pub mean: f64,
    pub signal_variance: f64,
    pub length_scale: f64,
}

impl GaussianProcess {
    pub fn fit(x: Vec<[f64; 7]>, y: &[f64], cfg: &GpConfig) -> Option<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return None;
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let signal_variance = var.max(cfg.min_variance);
        let k = |a: &[f64; 7], b: &[f64; 7]| se_kernel(a, b, signal_variance, cfg.length_scale);
        let gram = DMatrix::from_fn(n, n, |i, j| {
            k(&x[i], &x[j]) + if i == j { cfg.noise } else { 0.0 }
        });
        let chol = gram.cholesky()?;
        let resid = DVector::from_iterator(n, y.iter().map(|v| v - mean));
        let alpha = chol.solve(&resid).iter().copied().collect();
        Some(Self {
            x,
            alpha,
            l: chol.unpack(),
            mean,
            signal_variance,
            length_scale: cfg.length_scale,
        })
    }

    /// Posterior mean and standard deviation.
    pub fn predict(&self, q: &[f64; 7]) -> (f64, f64) {
        let n = self.x.len();
        let ks: Vec<f64> = self
            .x
            .iter()
            .map(|p| se_kernel(p, q, self.signal_variance, self.length_scale))
            .collect();
        let mu = self.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = ks;
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.l[(i, j)] * v[j]).sum();
            v[i] = (v[i] - s) / self.l[(i, i)];
        }
        let var = (self.signal_variance - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (mu, var.sqrt())
    }
}

pub fn se_kernel(a: &[f64; 7], b: &[f64; 7], variance: f64, length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    variance * (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// Expected improvement of a maximization target over `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = mu - best;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    gain * cdf + sigma * pdf
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BayesProposer {
    pub config: GpConfig,
}

impl BayesProposer {
    /// Seeded uniform candidate pool for one iteration.
    pub fn candidates(&self, iteration: usize, seed: u64) -> Vec<ParamPoint> {
        let mut rng = iteration_rng(seed, iteration);
        (0..self.config.candidates)
            .map(|_| ParamSpace.sample(&mut rng))
            .collect()
    }

    /// EI for each candidate, or `None` when there is nothing to fit.
    pub fn acquisition(
        &self,
        history: &[ExperimentRecord],
        candidates: &[ParamPoint],
    ) -> Option<Vec<f64>> {
        let x: Vec<_> = history
            .iter()
            .map(|r| ParamSpace.normalize(&r.point))
            .collect();
        let y: Vec<_> = history.iter().map(|r| r.pigment_score).collect();
        let gp = GaussianProcess::fit(x, &y, &self.config)?;
        let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(
            candidates
                .iter()
                .map(|c| {
                    let (mu, sd) = gp.predict(&ParamSpace.normalize(c));
                    expected_improvement(mu, sd, best)
                })
                .collect(),
        )
    }
}

impl Proposer for BayesProposer {
    fn id(&self) -> &str {
        "bayes"
    }

    fn propose(
        &mut self,
        history: &[ExperimentRecord],
        iteration: usize,
        seed: u64,
    ) -> Result<Proposal, OptimizerError> {
        let candidates = self.candidates(iteration, seed);
        let Some(ei) = self.acquisition(history, &candidates) else {
            return Ok(candidates[0].into());
        };
        let mut best = 0;
        for (i, v) in ei.iter().enumerate() {
            if *v > ei[best] {
                best = i;
            }
        }
        Ok(candidates[best].into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimBounds {
    pub kind: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub point: ParamPoint,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub space: BTreeMap<String, DimBounds>,
    pub history: Vec<HistoryEntry>,
    pub iteration: usize,
}

impl RemoteRequest {
    pub fn new(history: &[ExperimentRecord], iteration: usize) -> Self {
        let space = DIMS
            .iter()
            .map(|d| {
                let (kind, values) = match d.kind {
                    DimKind::Decimal => ("decimal", vec![]),
                    DimKind::Integer => ("integer", vec![]),
                    DimKind::Categorical => ("categorical", vec!["short".into(), "long".into()]),
                };
                (
                    d.name.to_string(),
                    DimBounds {
                        kind: kind.into(),
                        lo: d.lo,
                        hi: d.hi,
                        values,
                    },
                )
            })
            .collect();
        Self {
            space,
            history: history
                .iter()
                .map(|r| HistoryEntry {
                    point: r.point,
                    score: r.pigment_score,
                })
                .collect(),
            iteration,
        }
    }
}

/// Carries one request to a remote generator and returns its raw JSON reply.
pub trait RemoteTransport: Send + Sync {
    fn call(&self, request: &RemoteRequest) -> Result<Value, OptimizerError>;
}

impl<F> RemoteTransport for F
where
    F: Fn(&RemoteRequest) -> Result<Value, OptimizerError> + Send + Sync,
{
    fn call(&self, request: &RemoteRequest) -> Result<Value, OptimizerError> {
        self(request)
    }
}

/// Parses a `{"point": {...}}` reply, clamping out-of-range values.
pub fn parse_remote_reply(reply: &Value) -> Result<Proposal, OptimizerError> {
    let bad = |m: String| OptimizerError::MalformedRemoteReply(m);
    let point = reply
        .get("point")
        .and_then(Value::as_object)
        .ok_or_else(|| bad("expected an object with a `point` object".into()))?;
    let mut raw = [0.0; 7];
    let mut warnings = Vec::new();
    for (i, d) in DIMS.iter().enumerate() {
        let v = point
            .get(d.name)
            .ok_or_else(|| bad(format!("missing `{}`", d.name)))?;
        raw[i] = match (d.kind, v) {
            (DimKind::Categorical, Value::String(s)) => {
                match s.trim().to_ascii_lowercase().as_str() {
                    "short" => 0.0,
                    "long" => 1.0,
                    other => return Err(bad(format!("DL must be short or long, got `{other}`"))),
                }
            }
            (_, Value::Number(n)) => n
                .as_f64()
                .ok_or_else(|| bad(format!("`{}` is not a number", d.name)))?,
            _ => return Err(bad(format!("`{}` has the wrong type", d.name))),
        };
        if d.kind == DimKind::Integer && raw[i].fract() != 0.0 {
            warnings.push(format!(
                "{} = {} rounded to {}",
                d.name,
                raw[i],
                raw[i].round()
            ));
            raw[i] = raw[i].round();
        }
    }
    let (point, clamp) = ParamSpace.clamp_values(raw);
    warnings.extend(clamp);
    Ok(Proposal { point, warnings })
}

pub struct RemoteProposer {
    pub id: String,
    transport: Box<dyn RemoteTransport>,
}

impl RemoteProposer {
    pub fn new(id: impl Into<String>, transport: impl RemoteTransport + 'static) -> Self {
        Self {
            id: id.into(),
            transport: Box::new(transport),
        }
    }
}

impl Proposer for RemoteProposer {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(
        &mut self,
        history: &[ExperimentRecord],
        iteration: usize,
        _: u64,
    ) -> Result<Proposal, OptimizerError> {
        let reply = self
            .transport
            .call(&RemoteRequest::new(history, iteration))?;
        parse_remote_reply(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn random_is_reproducible() {
        let mut p = RandomProposer;
        let a = p.propose(&[], 3, 9).unwrap();
        assert_eq!(a, p.propose(&[], 3, 9).unwrap());
        assert_ne!(a, p.propose(&[], 4, 9).unwrap());
        assert!(ParamSpace.contains(&a.point));
    }

    #[test]
    fn ei_reference_values() {
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((expected_improvement(0.0, 1.0, 0.0) - phi0).abs() < 1e-15);
        assert_eq!(expected_improvement(0.5, 0.0, 0.2), 0.5 - 0.2);
        assert_eq!(expected_improvement(0.1, 0.0, 0.2), 0.0);
        assert!((expected_improvement(1.0, 1.0, 0.0) - 1.0833154705876864).abs() < 1e-12);
    }

    #[test]
    fn gp_interpolates_training_points() {
        let x = vec![[0.1; 7], [0.9; 7]];
        let y = [0.2, 0.8];
        let gp = GaussianProcess::fit(x.clone(), &y, &GpConfig::default()).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            let (mu, sd) = gp.predict(xi);
            assert!((mu - yi).abs() < 1e-2, "{mu}");
            assert!(sd < 0.02);
        }
        let (mu, _) = gp.predict(&[0.5; 7]);
        assert!((mu - 0.5).abs() < 1e-9);
    }

    #[test]
    fn remote_reply_clamps_and_rejects() {
        let reply = json!({"point": {"PC": 700, "PP": 3, "DP": 10, "DS": 25.0, "DL": "long", "KP": 18, "P3": 10}});
        let p = parse_remote_reply(&reply).unwrap();
        assert_eq!(p.point.pc, 505.0);
        assert_eq!(p.warnings, ["PC = 700 clamped to 505"]);
        assert!(matches!(
            parse_remote_reply(&json!({"point": {"PC": 1}})),
            Err(OptimizerError::MalformedRemoteReply(_))
        ));
        assert!(parse_remote_reply(&json!("nope")).is_err());
    }

    #[test]
    fn remote_request_shape() {
        let mut prop = RemoteProposer::new("stub", |req: &RemoteRequest| {
            assert_eq!(req.space["PC"].hi, 505.0);
            assert_eq!(req.space["DL"].values, ["short", "long"]);
            assert_eq!(req.iteration, 2);
            Err(OptimizerError::RemoteUnavailable("offline".into()))
        });
        assert_eq!(
            prop.propose(&[], 2, 0),
            Err(OptimizerError::RemoteUnavailable("offline".into()))
        );
        let v = serde_json::to_value(RemoteRequest::new(&[], 0)).unwrap();
        assert_eq!(v["space"]["P3"]["lo"], json!(3.0));
        assert!(v["history"].as_array().unwrap().is_empty());
    }
}
