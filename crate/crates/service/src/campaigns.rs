//! Asynchronous optimization campaigns over registered datasets.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::Utc;
use indexmap::IndexMap;
use labrun_core::optimizer::{
    load_dataset, run_campaign_observed, select_init, synthetic_dataset, BayesProposer, Campaign,
    Dataset, Dl, GpConfig, NearestOracle, ParamPoint, Proposer, RandomProposer, Surrogate,
    DEFAULT_BUDGET, DEFAULT_INIT, INIT_MAX_SCORE,
};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::envelope::timestamp;
use crate::error::ApiError;
use crate::remote::remote_proposer;
use crate::store::Store;

/// Name of the always-registered synthetic dataset.
pub const SYNTHETIC: &str = "synthetic";

/// Optimum of the builtin synthetic surface.
pub fn synthetic_optimum() -> ParamPoint {
    ParamPoint {
        pc: 220.0,
        pp: 3,
        dp: 10,
        ds: 25.0,
        dl: Dl::Long,
        kp: 18,
        p3: 10,
    }
}

pub fn synthetic() -> Dataset {
    let s = Surrogate::new(synthetic_optimum());
    synthetic_dataset(4000, 1, |p| s.eval(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignStatus {
    Running,
    Completed,
    Failed,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResource {
    pub id: Uuid,
    pub status: CampaignStatus,
    pub dataset: String,
    pub created_at: String,
    pub updated_at: String,
    pub campaign: Campaign,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

fn default_dataset() -> String {
    SYNTHETIC.into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignRequest {
    pub proposer: String,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Low performers drawn from the dataset as prior history; defaults to the standard size.
    #[serde(default)]
    pub init: Option<usize>,
}

pub struct CampaignHub {
    store: Store,
    datasets: BTreeMap<String, PathBuf>,
    oracles: Mutex<HashMap<String, Arc<NearestOracle>>>,
    entries: RwLock<IndexMap<Uuid, Arc<Mutex<CampaignResource>>>>,
    gp: GpConfig,
    proposer_url: Option<String>,
    step_delay: Duration,
}

impl CampaignHub {
    /// Loads persisted campaigns; any left running by a crash is marked interrupted.
    pub fn open(
        store: Store,
        datasets: BTreeMap<String, PathBuf>,
        gp: GpConfig,
        proposer_url: Option<String>,
        step_delay: Duration,
    ) -> std::io::Result<Self> {
        let mut entries = IndexMap::new();
        let mut loaded: Vec<CampaignResource> = store.read_campaigns()?;
        loaded.sort_by(|a, b| a.created_at.cmp(&b.created_at));
        for mut c in loaded {
            if c.status == CampaignStatus::Running {
                c.status = CampaignStatus::Interrupted;
                store.write_campaign(c.id, &c)?;
            }
            entries.insert(c.id, Arc::new(Mutex::new(c)));
        }
        Ok(Self {
            store,
            datasets,
            oracles: Mutex::new(HashMap::new()),
            entries: RwLock::new(entries),
            gp,
            proposer_url,
            step_delay,
        })
    }

    pub fn knows_dataset(&self, name: &str) -> bool {
        name == SYNTHETIC || self.datasets.contains_key(name)
    }

    /// Blocking: may read and index a dataset file.
    pub fn oracle(&self, name: &str) -> Result<Arc<NearestOracle>, ApiError> {
        if let Some(o) = self.oracles.lock().expect("oracle lock").get(name) {
            return Ok(o.clone());
        }
        let dataset = if name == SYNTHETIC {
            synthetic()
        } else {
            let path = self.datasets.get(name).ok_or_else(|| {
                ApiError::not_found("unknown_dataset", format!("no dataset `{name}`"))
            })?;
            load_dataset(path).map_err(|e| ApiError::internal(e.to_string()))?
        };
        let oracle =
            Arc::new(NearestOracle::new(dataset).map_err(|e| ApiError::internal(e.to_string()))?);
        self.oracles
            .lock()
            .expect("oracle lock")
            .insert(name.to_string(), oracle.clone());
        Ok(oracle)
    }

    pub fn proposer(&self, name: &str) -> Result<Box<dyn Proposer>, ApiError> {
        match name {
            "random" => Ok(Box::new(RandomProposer)),
            "bayes" => Ok(Box::new(BayesProposer {
                config: self.gp,
            })),
            "remote" => match &self.proposer_url {
                Some(url) => Ok(Box::new(remote_proposer(url))),
                None => Err(ApiError::not_found(
                    "unknown_proposer",
                    "no remote proposer is configured",
                )),
            },
            other => Err(ApiError::not_found(
                "unknown_proposer",
                format!("no proposer `{other}`"),
            )),
        }
    }

    pub fn get(&self, id: Uuid) -> Option<CampaignResource> {
        let entries = self.entries.read().expect("campaign lock");
        entries
            .get(&id)
            .map(|c| c.lock().expect("campaign lock").clone())
    }

    pub fn list(&self) -> Vec<CampaignResource> {
        let entries = self.entries.read().expect("campaign lock");
        entries
            .values()
            .map(|c| c.lock().expect("campaign lock").clone())
            .collect()
    }

    /// Validates, registers and launches a campaign on a blocking worker. Blocking.
    pub fn create(self: &Arc<Self>, req: CampaignRequest) -> Result<CampaignResource, ApiError> {
        if req.budget == 0 {
            return Err(ApiError::bad_request("budget must be positive"));
        }
        if !self.knows_dataset(&req.dataset) {
            return Err(ApiError::not_found(
                "unknown_dataset",
                format!("no dataset `{}`", req.dataset),
            ));
        }
        let mut proposer = self.proposer(&req.proposer)?;
        let oracle = self.oracle(&req.dataset)?;
        let n = req.init.unwrap_or(DEFAULT_INIT);
        let init = if n == 0 {
            Vec::new()
        } else {
            select_init(oracle.dataset(), n, INIT_MAX_SCORE, req.seed)
                .map_err(|e| ApiError::bad_request(e.to_string()))?
        };
        let now = timestamp(Utc::now());
        let mut campaign = Campaign::new(proposer.id(), req.budget, req.seed, init.clone());
        campaign.dataset_hash = Some(oracle.dataset().content_hash());
        let resource = CampaignResource {
            id: Uuid::new_v4(),
            status: CampaignStatus::Running,
            dataset: req.dataset.clone(),
            created_at: now.clone(),
            updated_at: now,
            campaign,
        };
        let id = resource.id;
        let slot = Arc::new(Mutex::new(resource.clone()));
        self.entries
            .write()
            .expect("campaign lock")
            .insert(id, slot.clone());
        let _ = self.store.write_campaign(id, &resource);

        let hub = self.clone();
        let hash = resource.campaign.dataset_hash.clone();
        std::thread::spawn(move || {
            let delay = hub.step_delay;
            let mut observe = |c: &Campaign| {
                let mut r = slot.lock().expect("campaign lock");
                r.campaign = c.clone();
                r.campaign.dataset_hash = hash.clone();
                r.updated_at = timestamp(Utc::now());
                drop(r);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            };
            let out = run_campaign_observed(
                proposer.as_mut(),
                oracle.as_ref(),
                req.budget,
                init,
                req.seed,
                &mut observe,
            );
            let mut r = slot.lock().expect("campaign lock");
            match out {
                Ok(mut c) => {
                    c.dataset_hash = hash;
                    r.status = if c.error.is_some() {
                        CampaignStatus::Failed
                    } else {
                        CampaignStatus::Completed
                    };
                    r.campaign = c;
                }
                Err(e) => {
                    r.status = CampaignStatus::Failed;
                    r.campaign.error = Some(e.to_string());
                }
            }
            r.updated_at = timestamp(Utc::now());
            if let Err(e) = hub.store.write_campaign(r.id, &*r) {
                tracing::error!("campaign {} not persisted: {e}", r.id);
            }
        });
        Ok(resource)
    }
}
