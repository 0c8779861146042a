//! The co-training state machine: InfoNCE initialization, alternating
//! optimization with the other view frozen, and the simultaneous variant.
//!
//! Every training step has the same shape — a read-only *prepare* phase
//! (augment, forward, assemble logits and mask, compute loss and gradients)
//! followed by an *apply* phase (SGD on the query encoder, momentum update of
//! the key encoder, queue pushes). A cycle step prepares and applies one view
//! and additionally pushes the frozen view's raw-input key features to keep
//! the queues lockstep-aligned; a simultaneous step prepares both views from
//! the same pre-step snapshot and then applies both.
//!
//! RNG discipline: each view owns an augmentation stream, and a step consumes
//! draws only from its active view's stream. This makes a simultaneous step
//! bit-identical to the two per-view steps run from the same snapshot.

use crate::checkpoint::encode_params;
use crate::encoder::{EncoderPair, Grads, MlpParams, ScaleRule};
use crate::error::{CoclrError, Result};
use crate::eval::{linear_probe, retrieval, ProbeHyper, ProbeResult, RetrievalResult};
use crate::losses::{build_logits, cmc_cross_view, info_nce, mil_nce, uber_nce_mask};
use crate::mining::{build_mask, mask_quality};
use crate::numerics::{Matrix, Rng};
use crate::queue::QueueState;
use crate::synthdata::{augment, AugmentSpec, TwoViewDataset};
use std::fmt;

/// Which contrastive objective a stage optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTag {
    /// Self-augmentation positive only.
    InfoNce,
    /// Oracle: all same-class queue entries are positives (reads labels).
    UberNce,
    /// Positives mined as cross-view topK nearest neighbours.
    Coclr,
    /// Cross-view positive: the same sample's other-view embedding.
    Cmc,
}

impl LossTag {
    pub fn as_str(self) -> &'static str {
        match self {
            LossTag::InfoNce => "infonce",
            LossTag::UberNce => "ubernce",
            LossTag::Coclr => "coclr",
            LossTag::Cmc => "cmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "infonce" => Ok(LossTag::InfoNce),
            "ubernce" => Ok(LossTag::UberNce),
            "coclr" => Ok(LossTag::Coclr),
            "cmc" => Ok(LossTag::Cmc),
            other => Err(CoclrError::InvalidPlan(format!(
                "unknown loss tag {other:?} (expected infonce|ubernce|coclr|cmc)"
            ))),
        }
    }
}

impl fmt::Display for LossTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the two views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewSide {
    One,
    Two,
}

impl ViewSide {
    pub fn other(self) -> Self {
        match self {
            ViewSide::One => ViewSide::Two,
            ViewSide::Two => ViewSide::One,
        }
    }

    /// 1-based index for display.
    pub fn index(self) -> usize {
        match self {
            ViewSide::One => 1,
            ViewSide::Two => 2,
        }
    }
}

/// Which view(s) a stage optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActiveView {
    One,
    Two,
    Both,
}

impl ActiveView {
    pub fn as_str(self) -> &'static str {
        match self {
            ActiveView::One => "1",
            ActiveView::Two => "2",
            ActiveView::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(ActiveView::One),
            "2" => Ok(ActiveView::Two),
            "both" => Ok(ActiveView::Both),
            other => Err(CoclrError::InvalidPlan(format!(
                "unknown view {other:?} (expected 1|2|both)"
            ))),
        }
    }
}

impl fmt::Display for ActiveView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How co-training alternates between the views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternation {
    /// Optimize one view per stage while the other stays frozen.
    Cycle,
    /// Both views mine from each other's pre-step features and update together.
    Simultaneous,
}

impl Alternation {
    pub fn as_str(self) -> &'static str {
        match self {
            Alternation::Cycle => "cycle",
            Alternation::Simultaneous => "simultaneous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(Alternation::Cycle),
            "simultaneous" => Ok(Alternation::Simultaneous),
            other => Err(CoclrError::InvalidPlan(format!(
                "unknown alternation {other:?} (expected cycle|simultaneous)"
            ))),
        }
    }
}

impl fmt::Display for Alternation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One schedule entry: `epochs` passes over the training split optimizing
/// `view` under `tag`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub tag: LossTag,
    pub view: ActiveView,
    pub epochs: usize,
}

impl Stage {
    pub fn new(tag: LossTag, view: ActiveView, epochs: usize) -> Self {
        Self { tag, view, epochs }
    }
}

/// InfoNCE initialization epochs for view 2. The easy view trains first and
/// longest so that its key encoder is a reliable miner before co-training
/// ever touches view 1.
pub const DEFAULT_INIT_EPOCHS_VIEW2: usize = 30;
/// InfoNCE initialization epochs for view 1. Kept short: prolonged instance
/// discrimination on the hard view entrenches nuisance structure that the
/// slow-moving key encoder preserves long into co-training, and later mined
/// positives cannot fully undo it.
pub const DEFAULT_INIT_EPOCHS_VIEW1: usize = 5;
/// Epoch lengths of the alternating stages that follow initialization:
/// view 1 trains under view-2 mining, view 2 consolidates under the improved
/// view-1 miner (folding its progress into the mining key encoder through the
/// EMA), and view 1 trains once more against the better miner.
pub const DEFAULT_ALT_EPOCHS: [usize; 3] = [30, 20, 30];
/// Total epoch budget of the default co-training schedule
/// (30 + 5 + 30 + 20 + 30). Baselines compared against it must train for the
/// same budget.
pub const DEFAULT_BENCH_EPOCHS: usize = DEFAULT_INIT_EPOCHS_VIEW2
    + DEFAULT_INIT_EPOCHS_VIEW1
    + DEFAULT_ALT_EPOCHS[0]
    + DEFAULT_ALT_EPOCHS[1]
    + DEFAULT_ALT_EPOCHS[2];
/// Queue capacity used by the benchmark constructors. Roughly 30% of the
/// default training split, mirroring the queue-to-dataset ratio of the
/// original recipe; with a queue that holds most of the dataset, large-K
/// mining degenerates into pulling whole classes and the K ablation loses its
/// meaning (see the mining docs).
pub const BENCH_QUEUE_CAPACITY: usize = 100;

/// Complete training recipe for one seeded run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub stages: Vec<Stage>,
    /// Mined positives per query; 0 disables mining (pure InfoNCE behaviour).
    pub k: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// Key-encoder EMA coefficient.
    pub momentum: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub alternation: Alternation,
    /// Backbone widths after the input layer; features for evaluation are the
    /// normalized output of the last backbone layer.
    pub hidden: Vec<usize>,
    /// Projection-head widths; embeddings used by the losses come from here.
    pub projection: Vec<usize>,
    pub aug1: AugmentSpec,
    pub aug2: AugmentSpec,
    /// Run probe/retrieval diagnostics every this many epochs (0 = never).
    pub eval_every: usize,
    /// Hyperparameters for scheduled probe diagnostics.
    pub probe: ProbeHyper,
}

impl TrainPlan {
    /// Hyperparameter defaults with an empty stage list.
    pub fn base(seed: u64) -> Self {
        Self {
            stages: Vec::new(),
            k: 5,
            tau: 0.07,
            momentum: 0.999,
            queue_capacity: 512,
            batch_size: 32,
            lr: 0.15,
            weight_decay: 1e-5,
            seed,
            alternation: Alternation::Cycle,
            hidden: vec![64, 64],
            projection: vec![32, 16],
            // View 1 is augmented hard enough that nuisance fingerprints do
            // not survive into the positive pair; view 2 only mildly, so its
            // class structure stays easy to learn and to mine from.
            aug1: AugmentSpec {
                sigma_aug: 0.75,
                dropout: 0.1,
            },
            aug2: AugmentSpec {
                sigma_aug: 0.15,
                dropout: 0.05,
            },
            eval_every: 0,
            probe: ProbeHyper::default(),
        }
    }

    /// The default co-training schedule: asymmetric InfoNCE initialization
    /// (view 2 long, view 1 short), then alternating co-training stages
    /// starting with view 1 under view-2 mining. Uses the benchmark queue
    /// capacity so that topK mining operates in the regime the defaults were
    /// calibrated for.
    pub fn default_coclr(seed: u64) -> Self {
        let mut plan = Self::base(seed);
        plan.queue_capacity = BENCH_QUEUE_CAPACITY;
        plan.stages = vec![
            Stage::new(LossTag::InfoNce, ActiveView::Two, DEFAULT_INIT_EPOCHS_VIEW2),
            Stage::new(LossTag::InfoNce, ActiveView::One, DEFAULT_INIT_EPOCHS_VIEW1),
            Stage::new(LossTag::Coclr, ActiveView::One, DEFAULT_ALT_EPOCHS[0]),
            Stage::new(LossTag::Coclr, ActiveView::Two, DEFAULT_ALT_EPOCHS[1]),
            Stage::new(LossTag::Coclr, ActiveView::One, DEFAULT_ALT_EPOCHS[2]),
        ];
        plan
    }

    /// Single-loss baseline trained on both views for `epochs`. Uses the
    /// benchmark queue capacity so baseline and co-training comparisons share
    /// every hyperparameter except the loss.
    pub fn single_loss(seed: u64, tag: LossTag, epochs: usize) -> Self {
        let mut plan = Self::base(seed);
        plan.queue_capacity = BENCH_QUEUE_CAPACITY;
        plan.stages.push(Stage::new(tag, ActiveView::Both, epochs));
        plan
    }

    /// The simultaneous variant of the default schedule: InfoNCE
    /// initialization of both views for the same number of epochs the default
    /// schedule spends in initialization, then a single stage where both
    /// views co-train at once for the remaining budget.
    pub fn simultaneous_coclr(seed: u64) -> Self {
        let mut plan = Self::base(seed);
        plan.queue_capacity = BENCH_QUEUE_CAPACITY;
        plan.alternation = Alternation::Simultaneous;
        let init = DEFAULT_INIT_EPOCHS_VIEW2 + DEFAULT_INIT_EPOCHS_VIEW1;
        plan.stages = vec![
            Stage::new(LossTag::InfoNce, ActiveView::Both, init),
            Stage::new(LossTag::Coclr, ActiveView::Both, DEFAULT_BENCH_EPOCHS - init),
        ];
        plan
    }

    /// Number of backbone layers (evaluation features come from here).
    pub fn backbone_layers(&self) -> usize {
        self.hidden.len()
    }

    fn embedding_dim(&self) -> usize {
        self.projection
            .last()
            .or_else(|| self.hidden.last())
            .copied()
            .unwrap_or(0)
    }

    /// Validate the plan against a dataset.
    pub fn validate(&self, data: &TwoViewDataset) -> Result<()> {
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(CoclrError::InvalidPlan(format!("plan.tau = {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(CoclrError::InvalidPlan(format!(
                "plan.momentum = {} outside [0, 1]",
                self.momentum
            )));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(CoclrError::InvalidPlan(format!("plan.lr = {}", self.lr)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(CoclrError::InvalidPlan(format!(
                "plan.weight_decay = {}",
                self.weight_decay
            )));
        }
        if self.queue_capacity == 0 {
            return Err(CoclrError::InvalidPlan("plan.queue_capacity = 0".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.queue_capacity {
            return Err(CoclrError::InvalidPlan(format!(
                "plan.batch_size = {} (queue capacity {})",
                self.batch_size, self.queue_capacity
            )));
        }
        if self.k >= self.queue_capacity {
            return Err(CoclrError::InvalidPlan(format!(
                "plan.k = {} needs at least k+1 = {} queue slots, capacity is {}",
                self.k,
                self.k + 1,
                self.queue_capacity
            )));
        }
        if self.hidden.is_empty() {
            return Err(CoclrError::InvalidPlan("plan.hidden is empty".into()));
        }
        if self.hidden.iter().chain(&self.projection).any(|&w| w == 0) {
            return Err(CoclrError::InvalidPlan(
                "plan.hidden/plan.projection contain a zero width".into(),
            ));
        }
        self.aug1
            .validate()
            .map_err(|e| CoclrError::InvalidPlan(format!("plan.aug1: {e}")))?;
        self.aug2
            .validate()
            .map_err(|e| CoclrError::InvalidPlan(format!("plan.aug2: {e}")))?;
        if data.train_idx.is_empty() {
            return Err(CoclrError::InvalidPlan("dataset has no training rows".into()));
        }

        // Stage-shape rules: mining stages need initialized features for both
        // views, and their active view must match the alternation mode.
        let mut init1 = false;
        let mut init2 = false;
        for (i, stage) in self.stages.iter().enumerate() {
            match stage.tag {
                LossTag::Coclr => {
                    if stage.epochs == 0 {
                        continue;
                    }
                    if !(init1 && init2) {
                        return Err(CoclrError::InvalidPlan(format!(
                            "plan.stages[{i}]: coclr requires completed initialization of both views"
                        )));
                    }
                    match (self.alternation, stage.view) {
                        (Alternation::Cycle, ActiveView::Both) => {
                            return Err(CoclrError::InvalidPlan(format!(
                                "plan.stages[{i}]: cycle alternation needs exactly one active view"
                            )));
                        }
                        (Alternation::Simultaneous, ActiveView::One | ActiveView::Two) => {
                            return Err(CoclrError::InvalidPlan(format!(
                                "plan.stages[{i}]: simultaneous alternation optimizes both views"
                            )));
                        }
                        _ => {}
                    }
                }
                _ => {
                    if stage.epochs > 0 {
                        match stage.view {
                            ActiveView::One => init1 = true,
                            ActiveView::Two => init2 = true,
                            ActiveView::Both => {
                                init1 = true;
                                init2 = true;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Live training state: one encoder pair and one feature queue per view.
#[derive(Clone, Debug)]
pub struct CoTrainState {
    pub pair1: EncoderPair,
    pub pair2: EncoderPair,
    pub queue1: QueueState,
    pub queue2: QueueState,
    /// Completed optimizer steps (a simultaneous step counts once).
    pub step: usize,
    pub backbone_layers: usize,
    rng_aug1: Rng,
    rng_aug2: Rng,
    rng_shuffle: Rng,
    /// Streams for the frozen-view mining augmentations, named by the view
    /// whose data they augment. Kept separate from the active-view streams so
    /// a simultaneous step and two single-view steps consume identical draws.
    rng_mine1: Rng,
    rng_mine2: Rng,
}

impl CoTrainState {
    /// Build the initial state for a plan: seeded Glorot encoders per view,
    /// empty lockstep queues, per-view augmentation streams.
    pub fn init(plan: &TrainPlan, data: &TwoViewDataset) -> Result<Self> {
        let master = Rng::new(plan.seed);
        let mut dims1 = vec![data.spec.d1];
        dims1.extend(&plan.hidden);
        dims1.extend(&plan.projection);
        let mut dims2 = vec![data.spec.d2];
        dims2.extend(&plan.hidden);
        dims2.extend(&plan.projection);
        let mut r1 = master.split(1);
        let mut r2 = master.split(2);
        let params1 = MlpParams::init_params(&dims1, &mut r1, ScaleRule::GlorotUniform)?;
        let params2 = MlpParams::init_params(&dims2, &mut r2, ScaleRule::GlorotUniform)?;
        let dim = plan.embedding_dim();
        Ok(Self {
            pair1: EncoderPair::new(params1, plan.momentum)?,
            pair2: EncoderPair::new(params2, plan.momentum)?,
            queue1: QueueState::new(plan.queue_capacity, dim)?,
            queue2: QueueState::new(plan.queue_capacity, dim)?,
            step: 0,
            backbone_layers: plan.backbone_layers(),
            rng_aug1: master.split(3),
            rng_aug2: master.split(4),
            rng_shuffle: master.split(5),
            rng_mine1: master.split(6),
            rng_mine2: master.split(7),
        })
    }

    pub fn pair(&self, side: ViewSide) -> &EncoderPair {
        match side {
            ViewSide::One => &self.pair1,
            ViewSide::Two => &self.pair2,
        }
    }

    pub fn pair_mut(&mut self, side: ViewSide) -> &mut EncoderPair {
        match side {
            ViewSide::One => &mut self.pair1,
            ViewSide::Two => &mut self.pair2,
        }
    }

    pub fn queue(&self, side: ViewSide) -> &QueueState {
        match side {
            ViewSide::One => &self.queue1,
            ViewSide::Two => &self.queue2,
        }
    }

    pub fn queue_mut(&mut self, side: ViewSide) -> &mut QueueState {
        match side {
            ViewSide::One => &mut self.queue1,
            ViewSide::Two => &mut self.queue2,
        }
    }

    fn rng_aug(&self, side: ViewSide) -> &Rng {
        match side {
            ViewSide::One => &self.rng_aug1,
            ViewSide::Two => &self.rng_aug2,
        }
    }

    fn set_rng_aug(&mut self, side: ViewSide, rng: Rng) {
        match side {
            ViewSide::One => self.rng_aug1 = rng,
            ViewSide::Two => self.rng_aug2 = rng,
        }
    }

    /// Mining-augmentation stream for the view whose data gets augmented.
    fn rng_mine(&self, side: ViewSide) -> &Rng {
        match side {
            ViewSide::One => &self.rng_mine1,
            ViewSide::Two => &self.rng_mine2,
        }
    }

    fn set_rng_mine(&mut self, side: ViewSide, rng: Rng) {
        match side {
            ViewSide::One => self.rng_mine1 = rng,
            ViewSide::Two => self.rng_mine2 = rng,
        }
    }

    /// Normalized backbone features of one view's query encoder for the given
    /// dataset rows.
    pub fn features(&self, data: &TwoViewDataset, side: ViewSide, idx: &[usize]) -> Result<Matrix> {
        let x = TwoViewDataset::gather(view_matrix(data, side), idx);
        self.pair(side).query.forward_features(&x, self.backbone_layers)
    }

    /// All four encoders (query and key per view) in checkpoint encoding,
    /// concatenated — a convenient bit-exact fingerprint of the learned state.
    pub fn encoded_encoders(&self) -> Vec<u8> {
        let mut out = encode_params(&self.pair1.query);
        out.extend(encode_params(&self.pair1.key));
        out.extend(encode_params(&self.pair2.query));
        out.extend(encode_params(&self.pair2.key));
        out
    }
}

/// The raw rows of one view.
pub fn view_matrix(data: &TwoViewDataset, side: ViewSide) -> &Matrix {
    match side {
        ViewSide::One => &data.view1,
        ViewSide::Two => &data.view2,
    }
}

/// Per-step report for one optimized view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Mined-positive precision against ground-truth labels (diagnostic only;
    /// present only when mining actually ran).
    pub mask_precision: Option<f64>,
    /// True when a mining step fell back to InfoNCE (queue still warming up
    /// or k = 0).
    pub fallback: bool,
}

/// Everything a step computes before mutating any state.
struct HalfStep {
    grads: Grads,
    /// Key features of the second augmentation — pushed to the active queue.
    zk: Matrix,
    /// Frozen other-view key features of an independently augmented
    /// other-view input — the mining anchor, pushed to the passive queue in
    /// cycle steps. Augmenting here keeps a sample's own stale queue entry
    /// from always topping the mined set.
    zb: Matrix,
    loss: f64,
    mask_precision: Option<f64>,
    fallback: bool,
}

/// Read-only phase of one view's step: augment, forward, assemble the
/// objective, differentiate. Consumes draws only from `rng` (the active
/// view's augmentation stream) and `rng_mine` (the other view's mining
/// stream).
fn prepare_half(
    state: &CoTrainState,
    data: &TwoViewDataset,
    batch_ids: &[usize],
    active: ViewSide,
    tag: LossTag,
    plan: &TrainPlan,
    rng: &mut Rng,
    rng_mine: &mut Rng,
) -> Result<HalfStep> {
    if batch_ids.is_empty() {
        return Err(CoclrError::InvalidArgument("empty batch".into()));
    }
    let other = active.other();
    let x_active = TwoViewDataset::gather(view_matrix(data, active), batch_ids);
    let aug_spec = match active {
        ViewSide::One => &plan.aug1,
        ViewSide::Two => &plan.aug2,
    };
    // Two independent augmentations: query input, then key input.
    let x_query = augment(&x_active, aug_spec, rng)?;
    let x_key = augment(&x_active, aug_spec, rng)?;
    let pair = state.pair(active);
    let (zq, tape) = pair.query.forward(&x_query, true)?;
    let (zk, _) = pair.key.forward(&x_key, false)?;
    // The frozen view sees its own independent augmentation of the same
    // underlying instance: no gradient, but fresh noise, so mining cannot
    // lock onto a sample's own stale queue entry.
    let aug_other = match other {
        ViewSide::One => &plan.aug1,
        ViewSide::Two => &plan.aug2,
    };
    let x_other_raw = TwoViewDataset::gather(view_matrix(data, other), batch_ids);
    let x_other = augment(&x_other_raw, aug_other, rng_mine)?;
    let (zb, _) = state.pair(other).key.forward(&x_other, false)?;

    let queue_active = state.queue(active);
    let (loss_res, mask_precision, fallback) = match tag {
        LossTag::InfoNce => {
            let block = build_logits(&zq, &zk, queue_active, plan.tau)?;
            (info_nce(&block)?, None, false)
        }
        LossTag::UberNce => {
            let block = build_logits(&zq, &zk, queue_active, plan.tau)?;
            let batch_labels = data.gather_labels(batch_ids);
            let queue_labels = data.gather_labels(queue_active.ids());
            let mask = uber_nce_mask(&batch_labels, &queue_labels)?;
            (mil_nce(&block, &mask)?, None, false)
        }
        LossTag::Coclr => {
            let block = build_logits(&zq, &zk, queue_active, plan.tau)?;
            let queue_other = state.queue(other);
            if plan.k == 0 || queue_other.fill() < plan.k + 1 {
                // Warm-up: not enough history to mine k positives and still
                // keep a guaranteed negative.
                (info_nce(&block)?, None, true)
            } else {
                let sim = queue_other.similarity_to_queue(&zb)?;
                let mask = build_mask(&sim, plan.k)?;
                let batch_labels = data.gather_labels(batch_ids);
                let queue_labels = data.gather_labels(queue_other.ids());
                let (precision, _) = mask_quality(&mask, &batch_labels, &queue_labels)?;
                (mil_nce(&block, &mask)?, Some(precision), false)
            }
        }
        LossTag::Cmc => {
            let res = cmc_cross_view(&zq, &zb, state.queue(other), plan.tau)?;
            (res, None, false)
        }
    };
    let tape = tape.expect("recording forward returns a tape");
    let grads = pair.query.backward(&tape, &loss_res.d_zq)?;
    Ok(HalfStep {
        grads,
        zk,
        zb,
        loss: loss_res.loss,
        mask_precision,
        fallback,
    })
}

/// Write phase: SGD on the query encoder, then the momentum update of the
/// key encoder, then push the active view's key features.
fn apply_half(
    state: &mut CoTrainState,
    active: ViewSide,
    half: &HalfStep,
    batch_ids: &[usize],
    plan: &TrainPlan,
) -> Result<()> {
    let pair = state.pair_mut(active);
    pair.query.sgd_step(&half.grads, plan.lr, plan.weight_decay)?;
    pair.momentum_update();
    state.queue_mut(active).push_batch(&half.zk, batch_ids)?;
    Ok(())
}

/// One optimization step of a single view under any loss tag. The other
/// view's parameters are never touched; its queue receives the frozen
/// key features of the mining augmentation so both queues stay
/// lockstep-aligned.
pub fn view_step(
    state: &mut CoTrainState,
    data: &TwoViewDataset,
    batch_ids: &[usize],
    active: ViewSide,
    tag: LossTag,
    plan: &TrainPlan,
) -> Result<StepOutcome> {
    let other = active.other();
    let mut rng = state.rng_aug(active).clone();
    let mut rng_mine = state.rng_mine(other).clone();
    let half = prepare_half(state, data, batch_ids, active, tag, plan, &mut rng, &mut rng_mine)?;
    state.set_rng_aug(active, rng);
    state.set_rng_mine(other, rng_mine);
    apply_half(state, active, &half, batch_ids, plan)?;
    state
        .queue_mut(active.other())
        .push_batch(&half.zb, batch_ids)?;
    state.step += 1;
    Ok(StepOutcome {
        loss: half.loss,
        mask_precision: half.mask_precision,
        fallback: half.fallback,
    })
}

/// One co-training step (mined positives) of a single view.
pub fn coclr_step(
    state: &mut CoTrainState,
    data: &TwoViewDataset,
    batch_ids: &[usize],
    active: ViewSide,
    plan: &TrainPlan,
) -> Result<StepOutcome> {
    view_step(state, data, batch_ids, active, LossTag::Coclr, plan)
}

/// One step optimizing both views at once. Both halves read the same
/// pre-step snapshot (mining anchors, queues, encoders), then both updates
/// are applied; each queue receives its own view's key features exactly once.
pub fn both_views_step(
    state: &mut CoTrainState,
    data: &TwoViewDataset,
    batch_ids: &[usize],
    tag: LossTag,
    plan: &TrainPlan,
) -> Result<(StepOutcome, StepOutcome)> {
    let mut r1 = state.rng_aug1.clone();
    let mut r2 = state.rng_aug2.clone();
    let mut m1 = state.rng_mine1.clone();
    let mut m2 = state.rng_mine2.clone();
    let h1 = prepare_half(state, data, batch_ids, ViewSide::One, tag, plan, &mut r1, &mut m2)?;
    let h2 = prepare_half(state, data, batch_ids, ViewSide::Two, tag, plan, &mut r2, &mut m1)?;
    state.rng_aug1 = r1;
    state.rng_aug2 = r2;
    state.rng_mine1 = m1;
    state.rng_mine2 = m2;
    apply_half(state, ViewSide::One, &h1, batch_ids, plan)?;
    apply_half(state, ViewSide::Two, &h2, batch_ids, plan)?;
    state.step += 1;
    let out = |h: &HalfStep| StepOutcome {
        loss: h.loss,
        mask_precision: h.mask_precision,
        fallback: h.fallback,
    };
    Ok((out(&h1), out(&h2)))
}

/// One simultaneous co-training step: both views mine from each other's
/// pre-step features and both are updated.
pub fn simultaneous_step(
    state: &mut CoTrainState,
    data: &TwoViewDataset,
    batch_ids: &[usize],
    plan: &TrainPlan,
) -> Result<(StepOutcome, StepOutcome)> {
    both_views_step(state, data, batch_ids, LossTag::Coclr, plan)
}

/// Per-epoch aggregate written to the metrics history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage_idx: usize,
    pub tag: LossTag,
    pub view: ActiveView,
    pub global_epoch: usize,
    pub epoch_in_stage: usize,
    /// Mean step loss per optimized view (None when that view was frozen).
    pub loss1: Option<f64>,
    pub loss2: Option<f64>,
    /// Mean mined-positive precision over the steps that actually mined.
    pub mask_precision: Option<f64>,
    /// Scheduled diagnostics (linear probe per view, view-1 R@1).
    pub probe1: Option<f64>,
    pub probe2: Option<f64>,
    pub retrieval1: Option<f64>,
}

/// Hooks for streaming metrics and stage-boundary checkpoints out of a run.
pub trait RunObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
    fn on_stage_end(&mut self, _stage_idx: usize, _state: &CoTrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoopObserver;

impl RunObserver for NoopObserver {}

#[derive(Default)]
struct EpochAgg {
    loss1: (f64, usize),
    loss2: (f64, usize),
    precision: (f64, usize),
}

impl EpochAgg {
    fn add(&mut self, side: ViewSide, out: &StepOutcome) {
        let slot = match side {
            ViewSide::One => &mut self.loss1,
            ViewSide::Two => &mut self.loss2,
        };
        slot.0 += out.loss;
        slot.1 += 1;
        if let Some(p) = out.mask_precision {
            self.precision.0 += p;
            self.precision.1 += 1;
        }
    }

    fn mean(slot: (f64, usize)) -> Option<f64> {
        (slot.1 > 0).then(|| slot.0 / slot.1 as f64)
    }
}

/// Linear probe of one view's frozen backbone features (train split fits the
/// classifier, test split scores it).
pub fn probe_view(
    state: &CoTrainState,
    data: &TwoViewDataset,
    side: ViewSide,
    hyper: &ProbeHyper,
) -> Result<ProbeResult> {
    let train = state.features(data, side, &data.train_idx)?;
    let test = state.features(data, side, &data.test_idx)?;
    linear_probe(
        &train,
        &data.gather_labels(&data.train_idx),
        &test,
        &data.gather_labels(&data.test_idx),
        hyper,
    )
}

/// Cosine R@k of one view's features: test rows query the train gallery.
pub fn retrieval_view(
    state: &CoTrainState,
    data: &TwoViewDataset,
    side: ViewSide,
    ks: &[usize],
) -> Result<RetrievalResult> {
    let gallery = state.features(data, side, &data.train_idx)?;
    let queries = state.features(data, side, &data.test_idx)?;
    retrieval(
        &queries,
        &data.gather_labels(&data.test_idx),
        &gallery,
        &data.gather_labels(&data.train_idx),
        ks,
    )
}

/// Execute a full plan: stages in order, one shuffled pass over the training
/// split per epoch, per-epoch aggregates in the returned history.
pub fn run_plan(plan: &TrainPlan, data: &TwoViewDataset) -> Result<(CoTrainState, Vec<EpochRecord>)> {
    run_plan_observed(plan, data, &mut NoopObserver)
}

/// [`run_plan`] with streaming hooks.
pub fn run_plan_observed(
    plan: &TrainPlan,
    data: &TwoViewDataset,
    observer: &mut dyn RunObserver,
) -> Result<(CoTrainState, Vec<EpochRecord>)> {
    plan.validate(data)?;
    let mut state = CoTrainState::init(plan, data)?;
    let mut history = Vec::new();
    let mut global_epoch = 0usize;
    for (stage_idx, stage) in plan.stages.iter().enumerate() {
        for epoch_in_stage in 0..stage.epochs {
            let mut order = data.train_idx.clone();
            state.rng_shuffle.shuffle(&mut order);
            // Borrow discipline: take the shuffled order by value so the
            // state can be mutated inside the batch loop.
            let mut agg = EpochAgg::default();
            for chunk in order.chunks(plan.batch_size) {
                match stage.view {
                    ActiveView::One => {
                        let out = view_step(&mut state, data, chunk, ViewSide::One, stage.tag, plan)?;
                        agg.add(ViewSide::One, &out);
                    }
                    ActiveView::Two => {
                        let out = view_step(&mut state, data, chunk, ViewSide::Two, stage.tag, plan)?;
                        agg.add(ViewSide::Two, &out);
                    }
                    ActiveView::Both => {
                        let (o1, o2) = both_views_step(&mut state, data, chunk, stage.tag, plan)?;
                        agg.add(ViewSide::One, &o1);
                        agg.add(ViewSide::Two, &o2);
                    }
                }
            }
            let mut record = EpochRecord {
                stage_idx,
                tag: stage.tag,
                view: stage.view,
                global_epoch,
                epoch_in_stage,
                loss1: EpochAgg::mean(agg.loss1),
                loss2: EpochAgg::mean(agg.loss2),
                mask_precision: EpochAgg::mean(agg.precision),
                probe1: None,
                probe2: None,
                retrieval1: None,
            };
            if plan.eval_every > 0 && (global_epoch + 1) % plan.eval_every == 0 {
                record.probe1 = Some(probe_view(&state, data, ViewSide::One, &plan.probe)?.accuracy);
                record.probe2 = Some(probe_view(&state, data, ViewSide::Two, &plan.probe)?.accuracy);
                record.retrieval1 =
                    retrieval_view(&state, data, ViewSide::One, &[1])?.at(1);
            }
            observer.on_epoch(&record)?;
            history.push(record);
            global_epoch += 1;
        }
        observer.on_stage_end(stage_idx, &state)?;
    }
    Ok((state, history))
}
