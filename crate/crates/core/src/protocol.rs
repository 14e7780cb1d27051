//! The decentralized training loop: alternating phase schedule, local block
//! updates, per-method mixing and the multi-round simulation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::lora::{
    compose, generate_tasks, init_factors, local_objective, stochastic_grad_blocks, ClientTask, GlobalQuadratic,
    HeterogeneityProfile, LoraFactors, ModelDims,
};
use crate::metrics::{self, RoundRecord};
use crate::numerics::{spectral_norm, Matrix, RngStream};
use crate::scalar::Scalar;
use crate::topology::{mixing_for_round, BaseGraph, GraphKind, MixingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
}

impl Phase {
    pub fn other(self) -> Self {
        match self {
            Self::A => Self::B,
            Self::B => Self::A,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
        })
    }
}

/// B-phase iff `⌊t/T⌋` is even.
pub fn phase_at(t: u64, t_interval: u64) -> Phase {
    phase_from(t, t_interval, Phase::B)
}

/// Same schedule with a configurable first phase.
pub fn phase_from(t: u64, t_interval: u64, start: Phase) -> Phase {
    assert!(t_interval >= 1, "switching interval must be at least 1");
    if (t / t_interval).is_multiple_of(2) {
        start
    } else {
        start.other()
    }
}

/// Which of the two LoRA blocks an operation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocks {
    Both,
    AOnly,
    BOnly,
    None,
}

impl Blocks {
    pub fn has_a(self) -> bool {
        matches!(self, Self::Both | Self::AOnly)
    }

    pub fn has_b(self) -> bool {
        matches!(self, Self::Both | Self::BOnly)
    }

    fn of_phase(phase: Phase) -> Self {
        match phase {
            Phase::A => Self::AOnly,
            Phase::B => Self::BOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    TadLora,
    RoloraDfl,
    FfaLora,
    VanillaLora,
    CentralizedAlt,
}

impl MethodVariant {
    pub const ALL: [Self; 5] = [
        Self::TadLora,
        Self::RoloraDfl,
        Self::FfaLora,
        Self::VanillaLora,
        Self::CentralizedAlt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TadLora => "tad_lora",
            Self::RoloraDfl => "rolora_dfl",
            Self::FfaLora => "ffa_lora",
            Self::VanillaLora => "vanilla_lora",
            Self::CentralizedAlt => "centralized_alt",
        }
    }

    pub fn is_alternating(self) -> bool {
        matches!(self, Self::TadLora | Self::RoloraDfl | Self::CentralizedAlt)
    }

    /// Blocks receiving gradient steps in `phase`.
    pub fn updates(self, phase: Phase) -> Blocks {
        match self {
            Self::TadLora | Self::RoloraDfl | Self::CentralizedAlt => Blocks::of_phase(phase),
            Self::FfaLora => Blocks::BOnly,
            Self::VanillaLora => Blocks::Both,
        }
    }

    /// Blocks exchanged with neighbours in `phase`.
    pub fn mixes(self, phase: Phase) -> Blocks {
        match self {
            Self::TadLora | Self::VanillaLora | Self::CentralizedAlt => Blocks::Both,
            Self::RoloraDfl => Blocks::of_phase(phase),
            Self::FfaLora => Blocks::BOnly,
        }
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}'")))
    }
}

/// A client's adapter together with its data.
#[derive(Debug, Clone)]
pub struct ClientState<S: Scalar = f64> {
    pub id: usize,
    pub factors: LoraFactors<S>,
    pub task: Arc<ClientTask<S>>,
}

impl<S: Scalar> AsRef<LoraFactors<S>> for ClientState<S> {
    fn as_ref(&self) -> &LoraFactors<S> {
        &self.factors
    }
}

impl<S: Scalar> AsRef<LoraFactors<S>> for LoraFactors<S> {
    fn as_ref(&self) -> &LoraFactors<S> {
        self
    }
}

/// Step size, number of local steps and minibatch size (`None` = full batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub eta: f64,
    pub local_steps: usize,
    pub batch_size: Option<usize>,
}

/// Runs `local_steps` gradient steps on the blocks `method` updates in `phase`.
/// Step `k` samples its minibatch from `rng.child("step", k)`. Blocks that are not
/// updated are left bitwise untouched; vanilla LoRA steps both blocks from the
/// same pre-step gradients.
pub fn local_update_in_place<S: Scalar>(
    state: &mut ClientState<S>,
    theta0: &Matrix<S>,
    phase: Phase,
    method: MethodVariant,
    step: &StepConfig,
    rng: &RngStream,
) -> Result<()> {
    let which = method.updates(phase);
    let batch = step.batch_size.unwrap_or(state.task.n());
    let eta = S::of(step.eta);
    for k in 0..step.local_steps {
        let mut stream = rng.child("step", k as u64);
        let (ga, gb) = stochastic_grad_blocks(&state.task, theta0, &state.factors, batch, &mut stream)?;
        if which.has_a() {
            state.factors.a.axpy(-eta, &ga);
        }
        if which.has_b() {
            state.factors.b.axpy(-eta, &gb);
        }
    }
    Ok(())
}

pub fn local_update<S: Scalar>(
    state: &ClientState<S>,
    theta0: &Matrix<S>,
    phase: Phase,
    method: MethodVariant,
    step: &StepConfig,
    rng: &RngStream,
) -> Result<ClientState<S>> {
    let mut next = state.clone();
    local_update_in_place(&mut next, theta0, phase, method, step, rng)?;
    Ok(next)
}

fn mix_one<S: Scalar>(blocks: &[&Matrix<S>], w: &Matrix<S>) -> Vec<Matrix<S>> {
    let m = blocks.len();
    (0..m)
        .map(|i| {
            let mut acc = Matrix::zeros(blocks[0].rows(), blocks[0].cols());
            for (j, x) in blocks.iter().enumerate() {
                let wij = w[(i, j)];
                if wij != S::zero() {
                    acc.axpy(wij, x);
                }
            }
            acc
        })
        .collect()
}

/// Replaces the selected blocks by `X_i ← Σ_j W_ij X_j`; the rest stay bitwise unchanged.
pub fn mix_blocks_in_place<S: Scalar>(states: &mut [ClientState<S>], w: &Matrix<S>, which: Blocks) -> Result<()> {
    if w.shape() != (states.len(), states.len()) {
        return Err(invalid_input(format!(
            "mixing matrix is {}x{} for {} clients",
            w.rows(),
            w.cols(),
            states.len()
        )));
    }
    if which.has_a() {
        let mixed = mix_one(&states.iter().map(|s| &s.factors.a).collect::<Vec<_>>(), w);
        for (s, a) in states.iter_mut().zip(mixed) {
            s.factors.a = a;
        }
    }
    if which.has_b() {
        let mixed = mix_one(&states.iter().map(|s| &s.factors.b).collect::<Vec<_>>(), w);
        for (s, b) in states.iter_mut().zip(mixed) {
            s.factors.b = b;
        }
    }
    Ok(())
}

pub fn mix_blocks<S: Scalar>(states: &[ClientState<S>], w: &Matrix<S>, which: Blocks) -> Result<Vec<ClientState<S>>> {
    let mut next = states.to_vec();
    mix_blocks_in_place(&mut next, w, which)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LaplacianStep,
    PairwiseGossip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TopologyDoc")]
pub struct TopologyConfig {
    pub kind: GraphKind,
    /// Per-round edge activation probability; when omitted, 1 on a ring and 0.5 otherwise.
    pub p: f64,
    pub policy: PolicyKind,
    /// Laplacian step size; defaults to `1/(d_max + 1)`.
    pub alpha: Option<f64>,
    /// Edge list for `kind = custom`.
    pub edges: Option<Vec<(usize, usize)>>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: GraphKind::Complete,
            p: 0.5,
            policy: PolicyKind::LaplacianStep,
            alpha: None,
            edges: None,
        }
    }
}

/// On-disk form of [`TopologyConfig`], where `p` may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    #[serde(default = "default_kind")]
    kind: GraphKind,
    p: Option<f64>,
    #[serde(default = "default_policy")]
    policy: PolicyKind,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    edges: Option<Vec<(usize, usize)>>,
}

fn default_kind() -> GraphKind {
    GraphKind::Complete
}

fn default_policy() -> PolicyKind {
    PolicyKind::LaplacianStep
}

impl From<TopologyDoc> for TopologyConfig {
    fn from(d: TopologyDoc) -> Self {
        let p = d.p.unwrap_or(match d.kind {
            GraphKind::Ring => 1.0,
            _ => 0.5,
        });
        Self {
            kind: d.kind,
            p,
            policy: d.policy,
            alpha: d.alpha,
            edges: d.edges,
        }
    }
}

impl TopologyConfig {
    pub fn graph(&self, m: usize) -> Result<BaseGraph> {
        match (self.kind, &self.edges) {
            (GraphKind::Custom, Some(edges)) => BaseGraph::custom(m, edges),
            (GraphKind::Custom, None) => Err(invalid_config("topology.kind=custom requires topology.edges")),
            (_, Some(_)) => Err(invalid_config("topology.edges is only allowed with kind=custom")),
            (kind, None) => BaseGraph::build(kind, m),
        }
    }

    pub fn policy(&self, graph: &BaseGraph) -> Result<MixingPolicy> {
        let policy = match (self.policy, self.alpha) {
            (PolicyKind::LaplacianStep, None) => MixingPolicy::default_laplacian(graph),
            (PolicyKind::LaplacianStep, Some(alpha)) => MixingPolicy::LaplacianStep { alpha },
            (PolicyKind::PairwiseGossip, None) => MixingPolicy::PairwiseGossip,
            (PolicyKind::PairwiseGossip, Some(_)) => {
                return Err(invalid_config("topology.alpha only applies to policy=laplacian_step"))
            }
        };
        policy.validate(graph)?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityPreset {
    Binary,
    ThreeWay,
    Uniform,
}

/// Either a named preset or an explicit per-client `skew` table, plus `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterogeneityConfig {
    pub preset: Option<HeterogeneityPreset>,
    pub skew: Option<Vec<Vec<f64>>>,
    pub delta: f64,
}

impl Default for HeterogeneityConfig {
    fn default() -> Self {
        Self {
            preset: None,
            skew: None,
            delta: 1.0,
        }
    }
}

impl HeterogeneityConfig {
    pub fn resolve(&self, m: usize) -> Result<HeterogeneityProfile> {
        let profile = match (&self.skew, self.preset) {
            (Some(_), Some(_)) => return Err(invalid_config("heterogeneity: give either preset or skew, not both")),
            (Some(skew), None) => HeterogeneityProfile {
                skew: skew.clone(),
                delta: self.delta,
            },
            (None, preset) => match preset.unwrap_or(HeterogeneityPreset::Binary) {
                HeterogeneityPreset::Binary => HeterogeneityProfile::binary(m, self.delta),
                HeterogeneityPreset::ThreeWay => HeterogeneityProfile::three_way(m, self.delta),
                HeterogeneityPreset::Uniform => HeterogeneityProfile::uniform(m, self.delta),
            },
        };
        profile.validate()?;
        if profile.skew.len() != m {
            return Err(invalid_config(format!(
                "heterogeneity.skew has {} rows but m={m}",
                profile.skew.len()
            )));
        }
        Ok(profile)
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dims: ModelDims,
    pub m: usize,
    pub method: MethodVariant,
    /// Switching interval.
    #[serde(rename = "T")]
    pub t_interval: u64,
    /// Total rounds.
    #[serde(rename = "R")]
    pub rounds: u64,
    pub eta: f64,
    pub local_steps: usize,
    /// Minibatch size per local step; `None` uses the full local dataset.
    pub batch_size: Option<usize>,
    pub n_per_client: usize,
    pub topology: TopologyConfig,
    pub heterogeneity: HeterogeneityConfig,
    pub root_seed: u64,
    pub scale: f64,
    pub record_every: u64,
    /// Accept a switching interval that does not divide `R`.
    pub allow_ragged: bool,
    pub start_phase: Phase,
    /// Fraction of rounds at the end treated as steady state.
    pub late_window: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            m: 10,
            method: MethodVariant::TadLora,
            t_interval: 1,
            rounds: 150,
            eta: 0.1,
            local_steps: 1,
            batch_size: None,
            n_per_client: 64,
            topology: TopologyConfig::default(),
            heterogeneity: HeterogeneityConfig::default(),
            root_seed: 0,
            scale: 1.0,
            record_every: 1,
            allow_ragged: false,
            start_phase: Phase::B,
            late_window: 0.4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.m == 0 {
            return Err(invalid_config("m must be at least 1"));
        }
        if self.t_interval == 0 {
            return Err(invalid_config("T must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid_config("R must be at least 1"));
        }
        if !self.allow_ragged && !self.rounds.is_multiple_of(self.t_interval) {
            return Err(invalid_config(format!(
                "T={} does not divide R={}; switching intervals must divide the horizon (set allow_ragged to override)",
                self.t_interval, self.rounds
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid_config(format!("eta={} must be positive and finite", self.eta)));
        }
        if self.local_steps == 0 {
            return Err(invalid_config("local_steps must be at least 1"));
        }
        if self.n_per_client == 0 {
            return Err(invalid_config("n_per_client must be at least 1"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > self.n_per_client {
                return Err(invalid_config(format!(
                    "batch_size={b} must lie in [1, n_per_client={}]",
                    self.n_per_client
                )));
            }
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(invalid_config(format!(
                "scale={} must be positive and finite",
                self.scale
            )));
        }
        if self.record_every == 0 {
            return Err(invalid_config("record_every must be at least 1"));
        }
        if !(self.late_window > 0.0 && self.late_window <= 1.0) {
            return Err(invalid_config(format!(
                "late_window={} must lie in (0, 1]",
                self.late_window
            )));
        }
        if !(0.0..=1.0).contains(&self.topology.p) {
            return Err(invalid_config(format!(
                "topology.p={} must lie in [0, 1]",
                self.topology.p
            )));
        }
        self.heterogeneity.resolve(self.m)?;
        if self.m >= 2 {
            let graph = self.topology.graph(self.m)?;
            self.topology.policy(&graph)?;
        }
        Ok(())
    }

    pub fn step(&self) -> StepConfig {
        StepConfig {
            eta: self.eta,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
        }
    }

    /// Index of the first round inside the late window.
    pub fn late_start(&self) -> u64 {
        let skip = ((1.0 - self.late_window) * self.rounds as f64).floor() as u64;
        skip.min(self.rounds - 1)
    }
}

/// Per-round check of `‖Δ^{t+1}‖ ≤ ‖W_t − J‖₂ ‖Δ^t‖` for a block that was mixed but not updated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub round: u64,
    pub block: Phase,
    pub before: f64,
    pub after: f64,
    pub rho: f64,
    /// `‖X̄‖_F`, used to scale the round-off allowance.
    pub mean_norm: f64,
}

impl ContractionCheck {
    pub fn holds(&self) -> bool {
        self.after <= self.rho * self.before + 1e-12 * (self.before + self.mean_norm)
    }
}

/// Output of [`run_training`].
#[derive(Debug, Clone)]
pub struct Trajectory<S: Scalar = f64> {
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
    pub contraction: Vec<ContractionCheck>,
    pub final_states: Vec<ClientState<S>>,
    pub theta0: Matrix<S>,
    pub quadratic: GlobalQuadratic<S>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("a run records at least its final round")
    }

    /// Records with `round >= config.late_start()`.
    pub fn late_records(&self) -> &[RoundRecord] {
        let start = self.config.late_start();
        let idx = self.records.partition_point(|r| r.round < start);
        &self.records[idx..]
    }
}

fn block_spread<S: Scalar>(states: &[ClientState<S>], block: Phase) -> Result<(f64, f64)> {
    fn pick<S: Scalar>(s: &ClientState<S>, block: Phase) -> &Matrix<S> {
        match block {
            Phase::A => &s.factors.a,
            Phase::B => &s.factors.b,
        }
    }
    let mean = Matrix::mean_of(states.iter().map(|s| pick(s, block)))?;
    let mut dev = S::zero();
    for s in states {
        dev += pick(s, block).try_sub(&mean)?.frobenius_sq();
    }
    Ok((dev.sqrt().as_f64(), mean.frobenius().as_f64()))
}

/// Client states, `θ₀` and the global objective.
pub type Setup<S> = (Vec<ClientState<S>>, Matrix<S>, GlobalQuadratic<S>);

/// Initial states and data for `cfg`. Tasks come from `("tasks", 0)` and the
/// shared initialisation from `("init", 0)` under the root stream.
pub fn setup<S: Scalar>(cfg: &RunConfig) -> Result<Setup<S>> {
    let root = RngStream::new(cfg.root_seed);
    let profile = cfg.heterogeneity.resolve(cfg.m)?;
    let set = generate_tasks::<S>(cfg.dims, cfg.m, &profile, cfg.n_per_client, &root.child("tasks", 0))?;
    let quad = GlobalQuadratic::from_tasks(&set.tasks)?;
    let init = init_factors::<S>(cfg.dims, cfg.scale, &root);
    let states = set
        .tasks
        .into_iter()
        .map(|task| ClientState {
            id: task.client_id,
            factors: init.clone(),
            task: Arc::new(task),
        })
        .collect();
    Ok((states, set.theta0, quad))
}

/// Simulates `cfg.rounds` rounds: local updates, then mixing, then recording.
///
/// Round `t` draws client `i`'s minibatches from `("data", t) / ("client", i)` and its
/// topology from `("topology", t)`, so runs that differ only in `R` share a prefix.
pub fn run_training<S: Scalar>(cfg: &RunConfig) -> Result<Trajectory<S>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.root_seed);
    let (mut states, theta0, quad) = setup::<S>(cfg)?;
    let graph_policy = if cfg.m >= 2 {
        let graph = cfg.topology.graph(cfg.m)?;
        let policy = match cfg.method {
            MethodVariant::CentralizedAlt => MixingPolicy::ExactAverage,
            _ => cfg.topology.policy(&graph)?,
        };
        Some((graph, policy))
    } else {
        None
    };
    let step = cfg.step();
    let j = Matrix::<S>::averaging(cfg.m);
    let mut records = Vec::with_capacity((cfg.rounds / cfg.record_every + 1) as usize);
    let mut contraction = Vec::new();

    for t in 0..cfg.rounds {
        let phase = phase_from(t, cfg.t_interval, cfg.start_phase);
        let data = root.child("data", t);
        for s in states.iter_mut() {
            local_update_in_place(s, &theta0, phase, cfg.method, &step, &data.child("client", s.id as u64))?;
        }

        let w = match &graph_policy {
            Some((graph, policy)) => mixing_for_round::<S>(graph, cfg.topology.p, *policy, t, &root)?.w,
            None => Matrix::identity(1),
        };
        let rho = spectral_norm(&w.try_sub(&j)?)?.as_f64();
        let mixed = cfg.method.mixes(phase);
        let updated = cfg.method.updates(phase);
        let frozen: Vec<Phase> = [
            (Phase::A, mixed.has_a() && !updated.has_a()),
            (Phase::B, mixed.has_b() && !updated.has_b()),
        ]
        .into_iter()
        .filter_map(|(b, f)| f.then_some(b))
        .collect();
        let before = frozen
            .iter()
            .map(|&b| block_spread(&states, b))
            .collect::<Result<Vec<_>>>()?;
        mix_blocks_in_place(&mut states, &w, mixed)?;
        if !states
            .iter()
            .all(|s| s.factors.a.is_finite() && s.factors.b.is_finite())
        {
            return Err(Error::Diverged { round: t });
        }
        for (&block, (dev_before, _)) in frozen.iter().zip(before) {
            let (after, mean_norm) = block_spread(&states, block)?;
            contraction.push(ContractionCheck {
                round: t,
                block,
                before: dev_before,
                after,
                rho,
                mean_norm,
            });
        }

        if (t + 1) % cfg.record_every == 0 || t + 1 == cfg.rounds {
            records.push(round_record(&states, &theta0, &quad, t, phase, rho)?);
        }
    }

    Ok(Trajectory {
        config: cfg.clone(),
        records,
        contraction,
        final_states: states,
        theta0,
        quadratic: quad,
    })
}

fn round_record<S: Scalar>(
    states: &[ClientState<S>],
    theta0: &Matrix<S>,
    quad: &GlobalQuadratic<S>,
    round: u64,
    phase: Phase,
    rho: f64,
) -> Result<RoundRecord> {
    let snapshot = metrics::snapshot(states, round)?;
    let (f_avg, grad) = metrics::avg_model_stats(states, theta0, quad)?;
    let client_loss = metrics::mean_client_loss(states, theta0, quad)?;
    let mut local = S::zero();
    for s in states {
        local += local_objective(&s.task, &compose(theta0, &s.factors)?)?;
    }
    Ok(RoundRecord {
        round,
        phase,
        snapshot,
        f_avg_model: f_avg.as_f64(),
        grad_norm_sq: grad.as_f64(),
        mean_client_loss: client_loss.as_f64(),
        mean_local_loss: (local / S::of_usize(states.len())).as_f64(),
        rho_realized: rho,
    })
}

/// Result of [`estimate_phi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub t_interval: u64,
    /// `F_end(T) − F_end(1)`, reported raw (it may dip below zero by about `tol`).
    pub phi: f64,
    pub tol: f64,
    pub f_end_t: f64,
    pub f_end_1: f64,
    pub rounds_t: u64,
    pub rounds_1: u64,
}

/// Final objective of centralized alternating training with interval `t_interval`,
/// stopped at the first phase boundary where the factor gradient
/// `‖∇_A F‖² + ‖∇_B F‖²` of the averaged model is at most `tol`.
pub fn centralized_until_converged<S: Scalar>(
    cfg_base: &RunConfig,
    t_interval: u64,
    tol: f64,
    max_rounds: u64,
) -> Result<(f64, u64)> {
    let mut cfg = cfg_base.clone();
    cfg.method = MethodVariant::CentralizedAlt;
    cfg.t_interval = t_interval;
    cfg.rounds = max_rounds;
    cfg.allow_ragged = true;
    cfg.validate()?;
    let (mut states, theta0, quad) = setup::<S>(&cfg)?;
    let j = Matrix::<S>::averaging(cfg.m);
    let step = cfg.step();
    let root = RngStream::new(cfg.root_seed);
    let mut grad_sq = f64::INFINITY;
    for t in 0..max_rounds {
        let phase = phase_from(t, t_interval, cfg.start_phase);
        let data = root.child("data", t);
        for s in states.iter_mut() {
            local_update_in_place(s, &theta0, phase, cfg.method, &step, &data.child("client", s.id as u64))?;
        }
        mix_blocks_in_place(&mut states, &j, Blocks::Both)?;
        if (t + 1) % t_interval == 0 {
            let f = &states[0].factors;
            let g = quad.grad(&compose(&theta0, f)?);
            let ga = f.b.tr_matmul(&g)?.scale(f.scale);
            let gb = g.matmul(&f.a.transpose())?.scale(f.scale);
            grad_sq = (ga.frobenius_sq() + gb.frobenius_sq()).as_f64();
            if !grad_sq.is_finite() {
                break;
            }
            if grad_sq <= tol {
                return Ok((quad.value(&compose(&theta0, f)?).as_f64(), t + 1));
            }
        }
    }
    Err(Error::NotConverged {
        rounds: max_rounds,
        grad_norm_sq: grad_sq,
    })
}

/// `φ(T) = F_end(T) − F_end(1)` from two centralized alternating runs sharing
/// data, initialisation and step size.
pub fn estimate_phi<S: Scalar>(
    cfg_base: &RunConfig,
    t_interval: u64,
    tol: f64,
    max_rounds: u64,
) -> Result<PhiEstimate> {
    if t_interval == 0 {
        return Err(invalid_config("T must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(invalid_config("convergence tolerance must be positive"));
    }
    let (f_end_1, rounds_1) = centralized_until_converged::<S>(cfg_base, 1, tol, max_rounds)?;
    let (f_end_t, rounds_t) = if t_interval == 1 {
        (f_end_1, rounds_1)
    } else {
        centralized_until_converged::<S>(cfg_base, t_interval, tol, max_rounds)?
    };
    Ok(PhiEstimate {
        t_interval,
        phi: f_end_t - f_end_1,
        tol,
        f_end_t,
        f_end_1,
        rounds_t,
        rounds_1,
    })
}
