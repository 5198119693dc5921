//! Seeded mutation fuzzing with liveness monitoring, crash localization by
//! window bisection, reproduction on a restored baseline and delta-debugging
//! minimization.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sut_sim::{EcuState, Frame, LinkError, SimConfig, SimLink, SimServer, StateError, MAX_DATA};

/// Generator pinned into campaign metadata for replay.
pub const PRNG: &str = "chacha8";

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("probe_every must be at least 1")]
    ZeroProbeInterval,
    #[error("session fault: {0}")]
    Link(#[from] LinkError),
    #[error("state fault: {0}")]
    State(#[from] StateError),
    #[error("cannot start simulator: {0}")]
    Spawn(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    BitFlip,
    ByteRandom,
    LengthFieldCorrupt,
    Truncate,
    Extend,
}

impl MutationOp {
    pub const ALL: [MutationOp; 5] = [
        MutationOp::BitFlip,
        MutationOp::ByteRandom,
        MutationOp::LengthFieldCorrupt,
        MutationOp::Truncate,
        MutationOp::Extend,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub seed: u64,
    pub budget: u64,
    pub corpus: Vec<Frame>,
    pub mutation_ops: BTreeSet<MutationOp>,
    pub probe_every: u64,
    /// Stop once this many distinct findings are recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_findings: Option<usize>,
}

impl FuzzConfig {
    /// All mutation ops, a probe every 16 frames.
    pub fn new(seed: u64, budget: u64, corpus: Vec<Frame>) -> Self {
        Self {
            seed,
            budget,
            corpus,
            mutation_ops: MutationOp::ALL.into_iter().collect(),
            probe_every: 16,
            max_findings: None,
        }
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        if self.budget == 0 {
            return Err(FuzzError::ZeroBudget);
        }
        if self.corpus.is_empty() {
            return Err(FuzzError::EmptyCorpus);
        }
        if self.probe_every == 0 {
            return Err(FuzzError::ZeroProbeInterval);
        }
        Ok(())
    }
}

/// Whatever the campaign delivers frames to.
pub trait FuzzTarget {
    /// Delivers frames in order and returns how many responses came back.
    fn deliver(&mut self, frames: &[Frame]) -> Result<u64, FuzzError>;
    fn alive(&mut self) -> Result<bool, FuzzError>;
    fn snapshot(&mut self) -> Result<String, FuzzError>;
    fn restore(&mut self, snapshot: &str) -> Result<(), FuzzError>;
}

impl FuzzTarget for SimLink {
    fn deliver(&mut self, frames: &[Frame]) -> Result<u64, FuzzError> {
        for f in frames {
            self.send(f)?;
        }
        Ok(self.settle()?.len() as u64)
    }

    fn alive(&mut self) -> Result<bool, FuzzError> {
        Ok(self.probe_alive()?)
    }

    fn snapshot(&mut self) -> Result<String, FuzzError> {
        Ok(self.dump()?)
    }

    fn restore(&mut self, snapshot: &str) -> Result<(), FuzzError> {
        Ok(self.load(snapshot)?)
    }
}

/// In-process target without sockets.
impl FuzzTarget for EcuState {
    fn deliver(&mut self, frames: &[Frame]) -> Result<u64, FuzzError> {
        Ok(frames.iter().map(|f| self.handle(f).len() as u64).sum())
    }

    fn alive(&mut self) -> Result<bool, FuzzError> {
        let probe = Frame::new(crate::sut_sim::FUNCTIONAL_ID, vec![0x01, 0x3E]).expect("valid probe");
        Ok(!self.handle(&probe).is_empty())
    }

    fn snapshot(&mut self) -> Result<String, FuzzError> {
        Ok(self.dump())
    }

    fn restore(&mut self, snapshot: &str) -> Result<(), FuzzError> {
        *self = EcuState::load(snapshot)?;
        Ok(())
    }
}

/// Applies exactly one op chosen by `rng` to the frame data. The frame id is
/// kept. With no ops the frame is returned unchanged, as is a bit flip on an
/// empty frame.
pub fn mutate(frame: &Frame, rng: &mut ChaCha8Rng, ops: &BTreeSet<MutationOp>) -> Frame {
    if ops.is_empty() {
        return frame.clone();
    }
    let ops: Vec<MutationOp> = ops.iter().copied().collect();
    let op = ops[rng.gen_range(0..ops.len())];
    let mut data = frame.data().to_vec();
    match op {
        MutationOp::BitFlip => {
            if !data.is_empty() {
                let bit = rng.gen_range(0..data.len() * 8);
                data[bit / 8] ^= 1 << (bit % 8);
            }
        }
        MutationOp::ByteRandom => {
            if data.is_empty() {
                data.push(rng.gen());
            } else {
                let i = rng.gen_range(0..data.len());
                data[i] ^= rng.gen_range(1..=255u8);
            }
        }
        MutationOp::LengthFieldCorrupt => {
            if data.is_empty() {
                data.push(rng.gen_range(1..=255u8));
            } else {
                data[0] ^= rng.gen_range(1..=255u8);
            }
        }
        MutationOp::Truncate => {
            if !data.is_empty() {
                let keep = rng.gen_range(0..data.len());
                data.truncate(keep);
            }
        }
        MutationOp::Extend => {
            if data.len() < MAX_DATA {
                let n = rng.gen_range(1..=MAX_DATA - data.len());
                data.extend((0..n).map(|_| rng.gen::<u8>()));
            } else {
                let last = data.len() - 1;
                data[last] ^= rng.gen_range(1..=255u8);
            }
        }
    }
    Frame::new(frame.id(), data).expect("mutation keeps the frame valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub missed_probes: u32,
    /// Campaign index of the first frame after the last good probe.
    pub window_start: u64,
    pub window_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzFinding {
    pub trigger_input: Frame,
    /// Corpus frame the trigger was derived from.
    pub origin: Frame,
    pub position: u64,
    pub verdict_evidence: Evidence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimized_input: Option<Frame>,
    pub reproduced: bool,
}

impl FuzzFinding {
    fn signature(&self) -> &Frame {
        self.minimized_input.as_ref().unwrap_or(&self.trigger_input)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzStats {
    pub frames_sent: u64,
    pub probes: u64,
    pub responses: u64,
    /// Frames sent while localizing, reproducing and minimizing.
    pub replay_frames: u64,
    /// Crashes whose trigger did not crash a restored baseline on its own.
    pub unreproduced: u64,
    pub duplicates: u64,
    pub prng: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub findings: Vec<FuzzFinding>,
    pub stats: FuzzStats,
}

#[derive(Debug, Error)]
#[error("campaign aborted after {} frames: {error}", partial.frames_sent)]
pub struct CampaignError {
    pub error: FuzzError,
    pub partial: FuzzStats,
}

struct Runner<'a, T: FuzzTarget + ?Sized> {
    target: &'a mut T,
    stats: FuzzStats,
}

impl<T: FuzzTarget + ?Sized> Runner<'_, T> {
    /// Whether `frames` sent from `snapshot` leave the target dead.
    fn crashes(&mut self, snapshot: &str, frames: &[Frame]) -> Result<bool, FuzzError> {
        self.target.restore(snapshot)?;
        self.stats.replay_frames += frames.len() as u64;
        self.target.deliver(frames)?;
        self.stats.probes += 1;
        Ok(!self.target.alive()?)
    }

    /// Index of the first frame whose prefix crashes.
    fn bisect(&mut self, checkpoint: &str, window: &[Frame]) -> Result<Option<usize>, FuzzError> {
        if !self.crashes(checkpoint, window)? {
            return Ok(None);
        }
        let (mut lo, mut hi) = (1, window.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.crashes(checkpoint, &window[..mid])? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(Some(lo - 1))
    }

    fn minimize(&mut self, baseline: &str, trigger: &Frame, origin: &Frame) -> Result<Frame, FuzzError> {
        let mut cur = trigger.data().to_vec();
        let frame = |d: &[u8]| Frame::new(trigger.id(), d.to_vec()).expect("never longer than the trigger");
        'outer: loop {
            for i in 0..cur.len() {
                let mut cand = cur.clone();
                cand.remove(i);
                if self.crashes(baseline, &[frame(&cand)])? {
                    cur = cand;
                    continue 'outer;
                }
            }
            for (i, &o) in origin.data().iter().enumerate().take(cur.len()) {
                if cur[i] != o {
                    let mut cand = cur.clone();
                    cand[i] = o;
                    if self.crashes(baseline, &[frame(&cand)])? {
                        cur = cand;
                        continue 'outer;
                    }
                }
            }
            return Ok(frame(&cur));
        }
    }
}

/// Reduces a reproduced finding to a 1-minimal frame: removing any single
/// byte, or restoring any single byte to the origin, stops the crash. A
/// trigger that does not crash `baseline` on its own is flagged instead.
pub fn minimize<T: FuzzTarget + ?Sized>(finding: &mut FuzzFinding, target: &mut T, baseline: &str) -> Result<(), FuzzError> {
    let mut r = Runner {
        target,
        stats: FuzzStats::default(),
    };
    if !r.crashes(baseline, std::slice::from_ref(&finding.trigger_input))? {
        finding.reproduced = false;
        finding.minimized_input = None;
        return Ok(());
    }
    finding.reproduced = true;
    finding.minimized_input = Some(r.minimize(baseline, &finding.trigger_input, &finding.origin)?);
    r.target.restore(baseline)?;
    Ok(())
}

/// Sends `budget` frames, probing liveness after every `probe_every`. A
/// missed probe is localized within the window, replayed alone on the
/// baseline, minimized and recorded; the target is then restored to the last
/// good checkpoint and the campaign continues after the window.
pub fn run_campaign<T: FuzzTarget + ?Sized>(config: &FuzzConfig, target: &mut T) -> Result<CampaignResult, CampaignError> {
    let mut runner = Runner {
        target,
        stats: FuzzStats {
            prng: PRNG.into(),
            seed: config.seed,
            ..FuzzStats::default()
        },
    };
    match campaign(config, &mut runner) {
        Ok(findings) => Ok(CampaignResult {
            findings,
            stats: runner.stats,
        }),
        Err(error) => Err(CampaignError {
            error,
            partial: runner.stats,
        }),
    }
}

fn campaign<T: FuzzTarget + ?Sized>(config: &FuzzConfig, r: &mut Runner<'_, T>) -> Result<Vec<FuzzFinding>, FuzzError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let baseline = r.target.snapshot()?;
    let mut checkpoint = baseline.clone();
    let mut findings: Vec<FuzzFinding> = Vec::new();
    let mut seen = BTreeSet::new();
    while r.stats.frames_sent < config.budget {
        if config.max_findings.is_some_and(|m| findings.len() >= m) {
            break;
        }
        let n = config.probe_every.min(config.budget - r.stats.frames_sent);
        let window_start = r.stats.frames_sent;
        let (window, origins): (Vec<Frame>, Vec<Frame>) = (0..n)
            .map(|_| {
                let origin = &config.corpus[rng.gen_range(0..config.corpus.len())];
                let verbatim = config.mutation_ops.is_empty() || rng.gen_ratio(1, 4);
                let frame = if verbatim {
                    origin.clone()
                } else {
                    mutate(origin, &mut rng, &config.mutation_ops)
                };
                (frame, origin.clone())
            })
            .unzip();
        r.stats.responses += r.target.deliver(&window)?;
        r.stats.frames_sent += n;
        r.stats.probes += 1;
        if r.target.alive()? {
            checkpoint = r.target.snapshot()?;
            continue;
        }
        if let Some(i) = r.bisect(&checkpoint, &window)? {
            let mut finding = FuzzFinding {
                trigger_input: window[i].clone(),
                origin: origins[i].clone(),
                position: window_start + i as u64,
                verdict_evidence: Evidence {
                    missed_probes: 1,
                    window_start,
                    window_len: n,
                },
                minimized_input: None,
                reproduced: false,
            };
            if r.crashes(&baseline, std::slice::from_ref(&finding.trigger_input))? {
                finding.reproduced = true;
                finding.minimized_input = Some(r.minimize(&baseline, &finding.trigger_input, &finding.origin)?);
                if seen.insert(finding.signature().clone()) {
                    findings.push(finding);
                } else {
                    r.stats.duplicates += 1;
                }
            } else {
                r.stats.unreproduced += 1;
            }
        } else {
            r.stats.unreproduced += 1;
        }
        r.target.restore(&checkpoint)?;
    }
    Ok(findings)
}

/// Independent campaigns, each on its own simulator, merged by
/// `(seed, position)`.
pub fn run_parallel(configs: &[FuzzConfig], sim: &SimConfig) -> Result<Vec<CampaignResult>, FuzzError> {
    let results: Vec<Result<CampaignResult, FuzzError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                s.spawn(move || {
                    let server = SimServer::spawn(sim.clone())?;
                    let mut link = SimLink::connect(server.endpoint())?;
                    run_campaign(cfg, &mut link).map_err(|e| e.error)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("campaign thread panicked")).collect()
    });
    let mut out = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|r| r.stats.seed);
    Ok(out)
}

/// All findings of several campaigns ordered by `(seed, position)`.
pub fn merge_findings(results: &[CampaignResult]) -> Vec<(u64, FuzzFinding)> {
    let mut all: Vec<(u64, FuzzFinding)> = results
        .iter()
        .flat_map(|r| r.findings.iter().map(|f| (r.stats.seed, f.clone())))
        .collect();
    all.sort_by_key(|(seed, f)| (*seed, f.position));
    all
}

/// Parses wire-form corpus lines.
pub fn corpus_from_wire(lines: &[String]) -> Result<Vec<Frame>, crate::sut_sim::FrameError> {
    lines.iter().map(|l| Frame::parse_wire(l)).collect()
}
