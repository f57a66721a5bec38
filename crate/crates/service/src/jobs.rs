//! Analysis jobs: request validation, a job table and a worker pool.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use ponzilens_core::bytecode::parse_hex;
use ponzilens_core::pipeline::{analyze, AnalysisConfig};
use ponzilens_core::report::{build_report, to_json, AnalysisReport, ReportError};
use ponzilens_core::strategy::{StrategyError, StrategyOptions};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{report_key, DiskCache};
use crate::input::{Address, InputError, InputRef};

pub type JobId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed { reason: String },
}

impl JobStatus {
    pub fn can_become(&self, next: &JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running) | (JobStatus::Running, JobStatus::Done | JobStatus::Failed { .. })
        )
    }

    pub fn is_final(&self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed { .. })
    }
}

/// A finished report, serialized once.
#[derive(Debug)]
pub struct Finished {
    pub json: String,
    pub report: AnalysisReport,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Runs the pipeline on `bytes`, consulting and filling the disk cache.
pub fn run_analysis(
    bytes: &[u8],
    address: Option<&str>,
    config: &AnalysisConfig,
    cache: Option<&DiskCache>,
) -> Result<Finished, AnalysisError> {
    let key = report_key(bytes, config, address);
    if let Some(json) = cache.and_then(|c| c.get_report(&key)) {
        if let Ok(report) = serde_json::from_str(&json) {
            log::info!("report {key} served from cache");
            return Ok(Finished { json, report });
        }
    }
    let started = Instant::now();
    let analysis = analyze(bytes, config)?;
    let report = build_report(&analysis, address)?;
    let json = to_json(&report);
    log::info!(
        "analyzed {} bytes: {} paths, {} feasible, {:.2?}",
        bytes.len(),
        report.summary.enumerated_paths,
        report.summary.feasible_paths,
        started.elapsed()
    );
    if let Some(c) = cache {
        if let Err(e) = c.put_report(&key, &json) {
            log::warn!("could not cache report {key}: {e}");
        }
    }
    Ok(Finished { json, report })
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestInput {
    pub hex: Option<String>,
    pub address: Option<String>,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestLimits {
    pub max_paths: Option<usize>,
    pub max_blocks_per_path: Option<usize>,
}

/// Body of `POST /analyses`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    pub input: RequestInput,
    #[serde(default)]
    pub limits: RequestLimits,
    pub solver: Option<String>,
    #[serde(default)]
    pub solver_options: StrategyOptions,
    pub investing_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct BadRequest(pub String);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    pub cache: Option<DiskCache>,
    pub default_endpoint: Option<String>,
    /// Lets requests name the external-command solver, which runs a program.
    pub allow_solver_command: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            cache: None,
            default_endpoint: None,
            allow_solver_command: false,
        }
    }
}

impl ServiceConfig {
    /// Validates a request down to an input and a buildable configuration.
    pub fn admit(&self, req: AnalysisRequest) -> Result<(InputRef, AnalysisConfig), BadRequest> {
        let bad = |m: String| BadRequest(m);
        let input = match (req.input.hex, req.input.address) {
            (Some(hex), None) => {
                if req.input.endpoint.is_some() {
                    return Err(bad("`endpoint` only applies to `address` input".into()));
                }
                parse_hex(&hex).map_err(|e| bad(format!("invalid hex: {e}")))?;
                InputRef::Hex(hex)
            }
            (None, Some(address)) => {
                let address: Address =
                    address.parse().map_err(|e: crate::input::MalformedAddress| bad(e.to_string()))?;
                let endpoint = req
                    .input
                    .endpoint
                    .or_else(|| self.default_endpoint.clone())
                    .ok_or_else(|| bad("no `endpoint` given and no default RPC endpoint configured".into()))?;
                InputRef::Chain { address, endpoint }
            }
            _ => return Err(bad("`input` needs exactly one of `hex` or `address`".into())),
        };
        let mut config = AnalysisConfig::default();
        if let Some(n) = req.limits.max_paths {
            config.limits.max_paths = n;
        }
        if let Some(n) = req.limits.max_blocks_per_path {
            config.limits.max_blocks_per_path = n;
        }
        if !config.limits.is_valid() {
            return Err(bad("limits must be positive".into()));
        }
        if let Some(s) = req.solver {
            config.solver = s;
        }
        config.solver_options = req.solver_options;
        if let Some(r) = req.investing_rule {
            config.investing_rule = r;
        }
        if config.solver == "smtlib-command" && !self.allow_solver_command {
            return Err(bad("the smtlib-command solver is disabled on this server".into()));
        }
        config.strategies().map_err(|e| bad(e.to_string()))?;
        Ok((input, config))
    }
}

struct Job {
    input: InputRef,
    config: AnalysisConfig,
    status: JobStatus,
    result: Option<Arc<Finished>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobSnapshot {
    pub id: JobId,
    pub status: JobStatus,
    pub input: InputRef,
    pub config: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Unknown,
    NotReady(JobStatus),
}

#[derive(Default)]
struct Table {
    jobs: BTreeMap<JobId, Job>,
    next: JobId,
}

struct Shared {
    table: Mutex<Table>,
    changed: Condvar,
    memo: Mutex<HashMap<String, Arc<Finished>>>,
    config: ServiceConfig,
}

impl Shared {
    /// The only place job status changes.
    fn transition(&self, id: JobId, next: JobStatus, result: Option<Arc<Finished>>) {
        let mut t = self.table.lock().unwrap();
        let job = t.jobs.get_mut(&id).expect("transition of a known job");
        assert!(job.status.can_become(&next), "illegal job transition {:?} -> {next:?}", job.status);
        log::info!("job {id}: {:?} -> {next:?}", job.status);
        job.status = next;
        job.result = result;
        self.changed.notify_all();
    }

    fn execute(&self, id: JobId) {
        let (input, config) = {
            let t = self.table.lock().unwrap();
            let job = &t.jobs[&id];
            (job.input.clone(), job.config.clone())
        };
        self.transition(id, JobStatus::Running, None);
        match self.compute(&input, &config) {
            Ok(done) => self.transition(id, JobStatus::Done, Some(done)),
            Err(e) => self.transition(id, JobStatus::Failed { reason: e.to_string() }, None),
        }
    }

    fn compute(&self, input: &InputRef, config: &AnalysisConfig) -> Result<Arc<Finished>, AnalysisError> {
        let cache = self.config.cache.as_ref();
        let resolved = input.resolve(cache)?;
        let key = report_key(&resolved.bytes, config, resolved.address.as_deref());
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let done = Arc::new(run_analysis(&resolved.bytes, resolved.address.as_deref(), config, cache)?);
        self.memo.lock().unwrap().insert(key, done.clone());
        Ok(done)
    }
}

/// Job table plus worker pool. Dropping it stops the workers once the queue drains.
pub struct Service {
    shared: Arc<Shared>,
    queue: Mutex<mpsc::Sender<JobId>>,
}

impl Service {
    pub fn start(config: ServiceConfig) -> Service {
        let (tx, rx) = mpsc::channel::<JobId>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = config.workers.max(1);
        let shared = Arc::new(Shared {
            table: Mutex::new(Table::default()),
            changed: Condvar::new(),
            memo: Mutex::new(HashMap::new()),
            config,
        });
        for n in 0..workers {
            let (rx, shared) = (rx.clone(), shared.clone());
            thread::Builder::new()
                .name(format!("analysis-{n}"))
                .spawn(move || loop {
                    let next = rx.lock().unwrap().recv();
                    match next {
                        Ok(id) => shared.execute(id),
                        Err(_) => break,
                    }
                })
                .expect("spawn analysis worker");
        }
        Service { shared, queue: Mutex::new(tx) }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn submit(&self, req: AnalysisRequest) -> Result<JobId, BadRequest> {
        let (input, config) = self.shared.config.admit(req)?;
        Ok(self.enqueue(input, config))
    }

    pub fn enqueue(&self, input: InputRef, config: AnalysisConfig) -> JobId {
        let id = {
            let mut t = self.shared.table.lock().unwrap();
            t.next += 1;
            let id = t.next;
            t.jobs.insert(id, Job { input, config, status: JobStatus::Queued, result: None });
            id
        };
        self.queue.lock().unwrap().send(id).expect("workers outlive the service");
        id
    }

    pub fn snapshot(&self, id: JobId) -> Option<JobSnapshot> {
        let t = self.shared.table.lock().unwrap();
        t.jobs.get(&id).map(|j| JobSnapshot {
            id,
            status: j.status.clone(),
            input: j.input.clone(),
            config: j.config.clone(),
        })
    }

    pub fn result(&self, id: JobId) -> Result<Arc<Finished>, Lookup> {
        let t = self.shared.table.lock().unwrap();
        let job = t.jobs.get(&id).ok_or(Lookup::Unknown)?;
        job.result.clone().ok_or_else(|| Lookup::NotReady(job.status.clone()))
    }

    /// Blocks until the job finishes or `timeout` passes; returns the last status seen.
    pub fn wait(&self, id: JobId, timeout: Duration) -> Option<JobStatus> {
        let deadline = Instant::now() + timeout;
        let mut t = self.shared.table.lock().unwrap();
        loop {
            let status = t.jobs.get(&id)?.status.clone();
            let now = Instant::now();
            if status.is_final() || now >= deadline {
                return Some(status);
            }
            t = self.shared.changed.wait_timeout(t, deadline - now).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(v: serde_json::Value) -> AnalysisRequest {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn transitions_only_move_forward() {
        use JobStatus::*;
        let failed = Failed { reason: "x".into() };
        assert!(Queued.can_become(&Running));
        assert!(Running.can_become(&Done));
        assert!(Running.can_become(&failed));
        assert!(!Queued.can_become(&Done));
        assert!(!Done.can_become(&Running));
        assert!(!failed.can_become(&Queued));
    }

    #[test]
    fn admission_rejects_bad_requests() {
        let c = ServiceConfig::default();
        let msg = |v| c.admit(request(v)).unwrap_err().0;
        assert!(msg(serde_json::json!({"input": {}})).contains("exactly one"));
        assert!(msg(serde_json::json!({"input": {"hex": "0xzz"}})).contains("invalid hex"));
        assert!(msg(serde_json::json!({"input": {"address": "0x12", "endpoint": "http://x"}}))
            .contains("malformed address"));
        assert!(msg(serde_json::json!({"input": {"address": "0x0000000000000000000000000000000000000001"}}))
            .contains("endpoint"));
        assert!(msg(serde_json::json!({"input": {"hex": "00"}, "limits": {"max_paths": 0}})).contains("positive"));
        assert!(msg(serde_json::json!({"input": {"hex": "00"}, "solver": "nope"})).contains("unknown solver"));
        assert!(msg(serde_json::json!({"input": {"hex": "00"}, "solver": "smtlib-command", "solver_options": {"command": "z3 -in"}})).contains("disabled"));
    }

    #[test]
    fn jobs_run_to_done() {
        let svc = Service::start(ServiceConfig { workers: 2, ..ServiceConfig::default() });
        let id = svc.submit(request(serde_json::json!({"input": {"hex": "0x600160020160005500"}}))).unwrap();
        assert_eq!(svc.wait(id, Duration::from_secs(30)), Some(JobStatus::Done));
        let r = svc.result(id).unwrap();
        assert_eq!(r.report.summary.feasible_paths, 1);
        assert_eq!(svc.result(999).unwrap_err(), Lookup::Unknown);
    }
}
