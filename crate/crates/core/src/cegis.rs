//! Counterexample-guided synthesis: alternate the analytic-center learner
//! and the branch-and-bound verifier until a candidate certifies, the cut
//! set provably empties, or budgets expire.
//!
//! Each verifier counterexample becomes a linear cut on the candidate
//! matrix, so the learner's feasible set shrinks monotonically; every
//! appended cut is asserted to be violated by the candidate it was
//! generated against, and appending the same state-disturbance pair twice
//! is reported as an error rather than looping.  A successful run emits a
//! certificate binding the candidate to content hashes of the network, the
//! error bound, and the region, plus the two level constants that turn the
//! function into a region-of-attraction estimate; certificates can later be
//! replayed against a system to re-establish the claim independently.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::dynamics::UncertainSystem;
use crate::errmodel::Provenance;
use crate::learner::{self, LearnerConfig, Proposal};
use crate::lyapunov::{self, LyapCandidate, SampleSet};
use crate::roa;
use crate::verifier::{self, Counterexample, Verdict, VerifierConfig};
use crate::{Error, Matrix, Result, Vector};

/// Knobs of the synthesis loop.
#[derive(Debug, Clone)]
pub struct CegisConfig {
    /// Basis order of the candidate function.
    pub k: usize,
    pub max_iterations: usize,
    /// Cuts to start from; empty by default.
    pub initial_samples: SampleSet,
    pub learner: LearnerConfig,
    pub verifier: VerifierConfig,
    /// Run seed; fans out to stages that sample.
    pub seed: u64,
    /// Also cut every deterministic probe point the current candidate
    /// fails on, instead of only the verifier's counterexample.
    pub batch_cuts: bool,
}

impl Default for CegisConfig {
    fn default() -> Self {
        CegisConfig {
            k: 1,
            max_iterations: 100,
            initial_samples: SampleSet::new(),
            learner: LearnerConfig::default(),
            verifier: VerifierConfig::default(),
            seed: 0,
            batch_cuts: false,
        }
    }
}

impl CegisConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("need at least one iteration"));
        }
        Ok(())
    }
}

/// Content hashes binding a certificate to the exact system it certifies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDigest {
    pub net: String,
    pub error_bound: String,
    pub roi: String,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl SystemDigest {
    pub fn of(sys: &UncertainSystem) -> SystemDigest {
        SystemDigest {
            net: sha256_hex(&sys.net().to_json()),
            error_bound: sha256_hex(&sys.error_bound().to_json()),
            roi: sha256_hex(&sys.roi().to_json()),
        }
    }

    /// Errors on the first field whose hash disagrees with `sys`.
    pub fn check(&self, sys: &UncertainSystem) -> Result<()> {
        let fresh = SystemDigest::of(sys);
        for (field, stored, got) in [
            ("net", &self.net, &fresh.net),
            ("error_bound", &self.error_bound, &fresh.error_bound),
            ("roi", &self.roi, &fresh.roi),
        ] {
            if stored != got {
                return Err(Error::DigestMismatch {
                    field: field.to_string(),
                    expected: stored.clone(),
                    got: got.clone(),
                });
            }
        }
        Ok(())
    }
}

/// A successful synthesis result: the candidate, what it was proven on, and
/// the level constants of the induced region-of-attraction estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    pub k: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub digest: SystemDigest,
    /// Certified upper bound on the one-step difference; negative.
    pub verifier_ub: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub provenance: Provenance,
    pub iterations: usize,
    pub counterexamples: Vec<Counterexample>,
}

fn schema_one() -> u32 {
    1
}

impl Certificate {
    /// Rebuilds the candidate function from the stored matrix.
    pub fn candidate(&self) -> Result<LyapCandidate> {
        let d = self.p.len();
        if self.p.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("certificate matrix is not square"));
        }
        let p = Matrix::from_row_iterator(d, d, self.p.iter().flatten().copied());
        LyapCandidate::new(self.k, p)
    }

    /// True when the level constants do not delimit a nonempty claim.
    pub fn degenerate(&self) -> bool {
        !(self.c_min < self.c_max) || !(self.c_max > 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cert: Certificate = serde_json::from_str(text).map_err(|e| Error::MalformedFile {
            path: "<inline json>".into(),
            reason: e.to_string(),
        })?;
        if cert.schema_version != 1 {
            return Err(Error::invalid(format!(
                "unsupported certificate schema version {}",
                cert.schema_version
            )));
        }
        Ok(cert)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::MalformedFile { reason, .. } => Error::MalformedFile {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}

/// How a synthesis run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CegisStatus {
    Certified,
    /// The cut set excludes every admissible candidate.
    Infeasible,
    /// The learner found no strictly feasible candidate within its budget;
    /// emptiness was not proven either.
    FeasibilityUnknown,
    /// Iteration cap reached, or the verifier could not resolve a
    /// candidate within its node budget.
    BudgetExceeded,
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub enum IterationVerdict {
    Certified { ub: f64 },
    Counterexample { dv: f64 },
    Indeterminate { ub: f64, best: f64 },
    LearnerInfeasible,
    LearnerUnknown,
}

/// Per-iteration diagnostics, one record per loop pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cut count when the learner ran.
    pub samples: usize,
    pub newton_steps: usize,
    pub verifier_nodes: u64,
    pub verdict: IterationVerdict,
}

impl IterationRecord {
    /// Single-line rendering for logs.
    pub fn line(&self) -> String {
        let head = format!(
            "iteration={} samples={} newton_steps={} nodes={}",
            self.iteration, self.samples, self.newton_steps, self.verifier_nodes
        );
        match &self.verdict {
            IterationVerdict::Certified { ub } => format!("{head} verdict=certified ub={ub}"),
            IterationVerdict::Counterexample { dv } => {
                format!("{head} verdict=counterexample dv={dv}")
            }
            IterationVerdict::Indeterminate { ub, best } => {
                format!("{head} verdict=indeterminate ub={ub} best={best}")
            }
            IterationVerdict::LearnerInfeasible => format!("{head} verdict=infeasible"),
            IterationVerdict::LearnerUnknown => format!("{head} verdict=feasibility-unknown"),
        }
    }
}

/// Full synthesis outcome.  `certificate` is present exactly when `status`
/// is [`CegisStatus::Certified`].
#[derive(Debug)]
pub struct CegisRun {
    pub status: CegisStatus,
    pub certificate: Option<Certificate>,
    /// Loop passes executed.
    pub iterations: usize,
    pub log: Vec<IterationRecord>,
    /// Every counterexample appended, in order.
    pub counterexamples: Vec<Counterexample>,
}

/// Appends the cut for a counterexample, rejecting repeats and asserting
/// the cut is violated by the candidate it was generated against.
fn append_cut(
    samples: &mut SampleSet,
    sys: &UncertainSystem,
    k: usize,
    cand: &LyapCandidate,
    cex: &Counterexample,
    iteration: usize,
) -> Result<()> {
    let x = cex.state();
    let w = cex.disturbance();
    if samples.contains_pair(&x, &w, 1e-9) {
        return Err(Error::RepeatedCounterexample { iteration });
    }
    let cut = lyapunov::cut_matrix(sys, k, &x, &w)?;
    let pairing = cut.pairing(cand.p());
    assert!(
        pairing >= -1e-9,
        "iteration {iteration}: appended cut is not violated by its candidate (pairing {pairing})"
    );
    samples.push(cut)
}

/// Deterministic probe points for batch cutting: region vertices plus
/// excluded-box corners and face midpoints, each with the zero and the
/// outward extreme disturbance.
fn probe_pool(sys: &UncertainSystem) -> Vec<(Vector, Vector)> {
    let n = sys.dim();
    let mut states: Vec<Vector> = sys.roi().vertices().to_vec();
    let bx = sys.excluded();
    states.extend(bx.corners());
    let center = bx.center();
    for c in 0..n {
        for val in [bx.lo()[c], bx.hi()[c]] {
            let mut x = center.clone();
            x[c] = val;
            states.push(x);
        }
    }
    let mut out = Vec::new();
    for x in states {
        let r = sys.disturbance_radius(&x);
        out.push((x.clone(), Vector::zeros(n)));
        if r > 0.0 {
            let w = Vector::from_fn(n, |c, _| r * x[c].signum());
            out.push((x, w));
        }
    }
    out
}

/// Runs the synthesis loop.
pub fn run(sys: &UncertainSystem, cfg: &CegisConfig) -> Result<CegisRun> {
    cfg.validate()?;
    let n_x = sys.dim();
    let mut samples = cfg.initial_samples.clone();
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut history: Vec<Counterexample> = Vec::new();

    for iteration in 1..=cfg.max_iterations {
        let learned = learner::analytic_center(&samples, cfg.k, n_x, &cfg.learner)?;
        let mut record = IterationRecord {
            iteration,
            samples: samples.len(),
            newton_steps: learned.newton_steps,
            verifier_nodes: 0,
            verdict: IterationVerdict::LearnerUnknown,
        };
        let cand = match &learned.proposal {
            Proposal::Infeasible => {
                record.verdict = IterationVerdict::LearnerInfeasible;
                log.push(record);
                return Ok(CegisRun {
                    status: CegisStatus::Infeasible,
                    certificate: None,
                    iterations: iteration,
                    log,
                    counterexamples: history,
                });
            }
            Proposal::FeasibilityUnknown => {
                record.verdict = IterationVerdict::LearnerUnknown;
                log.push(record);
                return Ok(CegisRun {
                    status: CegisStatus::FeasibilityUnknown,
                    certificate: None,
                    iterations: iteration,
                    log,
                    counterexamples: history,
                });
            }
            Proposal::Candidate(cand) => cand,
        };
        let outcome = verifier::max_dv(sys, cand, &cfg.verifier)?;
        record.verifier_nodes = outcome.nodes;
        match outcome.verdict {
            Verdict::Certified { ub } => {
                record.verdict = IterationVerdict::Certified { ub };
                log.push(record);
                let (c_max, c_min) = roa::levels(sys, cand, &cfg.verifier)?;
                let cert = Certificate {
                    schema_version: 1,
                    k: cfg.k,
                    p: (0..cand.dim())
                        .map(|i| cand.p().row(i).iter().copied().collect())
                        .collect(),
                    digest: SystemDigest::of(sys),
                    verifier_ub: ub,
                    c_max,
                    c_min,
                    provenance: sys.error_bound().provenance(),
                    iterations: iteration,
                    counterexamples: history.clone(),
                };
                if cert.degenerate() {
                    log::warn!(
                        "certificate is degenerate: c_min {c_min} does not sit below c_max {c_max}"
                    );
                }
                return Ok(CegisRun {
                    status: CegisStatus::Certified,
                    certificate: Some(cert),
                    iterations: iteration,
                    log,
                    counterexamples: history,
                });
            }
            Verdict::Counterexample(cex) => {
                record.verdict = IterationVerdict::Counterexample { dv: cex.dv };
                log.push(record);
                append_cut(&mut samples, sys, cfg.k, cand, &cex, iteration)?;
                history.push(cex);
                if cfg.batch_cuts {
                    for (x, w) in probe_pool(sys) {
                        if samples.contains_pair(&x, &w, 1e-9) {
                            continue;
                        }
                        let dv = lyapunov::eval_dv(cand, sys, &x, &w)?;
                        if dv >= 0.0 {
                            let extra = Counterexample {
                                x: x.iter().copied().collect(),
                                w: w.iter().copied().collect(),
                                dv,
                            };
                            append_cut(&mut samples, sys, cfg.k, cand, &extra, iteration)?;
                            history.push(extra);
                        }
                    }
                }
            }
            Verdict::Indeterminate { ub, best } => {
                record.verdict = IterationVerdict::Indeterminate { ub, best };
                log.push(record);
                return Ok(CegisRun {
                    status: CegisStatus::BudgetExceeded,
                    certificate: None,
                    iterations: iteration,
                    log,
                    counterexamples: history,
                });
            }
        }
    }
    Ok(CegisRun {
        status: CegisStatus::BudgetExceeded,
        certificate: None,
        iterations: cfg.max_iterations,
        log,
        counterexamples: history,
    })
}

/// Re-establishes a certificate against a system: the digests must match,
/// the stored candidate must certify again, and the level constants must
/// reproduce within `1e-6`.
pub fn replay(cert: &Certificate, sys: &UncertainSystem, vcfg: &VerifierConfig) -> Result<bool> {
    cert.digest.check(sys)?;
    let cand = cert.candidate()?;
    match verifier::max_dv(sys, &cand, vcfg)?.verdict {
        Verdict::Certified { .. } => {
            let (c_max, c_min) = roa::levels(sys, &cand, vcfg)?;
            Ok((c_max - cert.c_max).abs() <= 1e-6 && (c_min - cert.c_min).abs() <= 1e-6)
        }
        _ => Ok(false),
    }
}
