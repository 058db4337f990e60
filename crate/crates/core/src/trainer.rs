//! The training loop: per-epoch clustering of target features, mini-batch
//! optimisation of the online network, EMA synchronisation and logging.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::augment::{augment, TransformSpec};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_fit_from, kmeans_fit_with, HardLabels, KMeansFit, DEFAULT_TOL};
use crate::losses::{dcl_loss_terms, spc_loss_with, DclTerms};
use crate::metrics::{evaluate, Scores};
use crate::model::{write_checkpoint, Architecture, OnlineGradients, OnlineNetwork, TargetNetwork};
use crate::numerics::{
    feature_std, gaussian_noise, l2_normalize_backward, l2_normalize_rows, row_norms, FeatureMatrix, RngState,
};
use crate::par::{self, Execution};
use crate::prototypes::{one_hot, PrototypeEstimate, View};
use crate::soft_assign::{compute_weights, soft_assign_with};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoSpc,
    NoDcl,
    NoDcl1,
    NoDcl2,
    NoW,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoSpc,
        Ablation::NoDcl,
        Ablation::NoDcl1,
        Ablation::NoDcl2,
        Ablation::NoW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSpc => "no_spc",
            Ablation::NoDcl => "no_dcl",
            Ablation::NoDcl1 => "no_dcl1",
            Ablation::NoDcl2 => "no_dcl2",
            Ablation::NoW => "no_w",
        }
    }

    pub fn dcl_terms(self) -> DclTerms {
        DclTerms {
            transform: !matches!(self, Ablation::NoDcl | Ablation::NoDcl1),
            neighbourhood: !matches!(self, Ablation::NoDcl | Ablation::NoDcl2),
        }
    }

    pub fn uses_spc(self) -> bool {
        self != Ablation::NoSpc
    }

    pub fn soft_weights(self) -> bool {
        self != Ablation::NoW
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    /// Epochs trained on the consistency loss alone.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub tau: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub momentum: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub arch: Architecture,
    pub transform: TransformSpec,
    pub kmeans_max_iter: usize,
    /// Warm-start each epoch's k-means from the previous centers.
    pub reuse_centers: bool,
    /// Cluster L2-normalized target features instead of raw ones.
    pub normalize_before_assign: bool,
    pub spc_include_positive_in_denominator: bool,
    /// Feed the neighbourhood term from target features instead of the
    /// online projection of the second view.
    pub dcl2_use_target_features: bool,
    pub execution: Execution,
}

impl TrainConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            epochs: 150,
            pretrain_epochs: 50,
            batch_size: 64,
            lr_start: 0.05,
            tau: 0.5,
            lambda: 0.1,
            sigma: 0.001,
            alpha: 1.0,
            momentum: 0.996,
            seed: 0,
            ablation: Ablation::Full,
            arch: Architecture::default(),
            transform: TransformSpec::default(),
            kmeans_max_iter: 100,
            reuse_centers: false,
            normalize_before_assign: true,
            spc_include_positive_in_denominator: false,
            dcl2_use_target_features: false,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if self.pretrain_epochs > self.epochs {
            return bad(format!(
                "pretrain_epochs {} exceeds epochs {}",
                self.pretrain_epochs, self.epochs
            ));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.lr_start >= 0.0 && self.lr_start.is_finite()) {
            return bad(format!("lr must be a finite value >= 0, got {}", self.lr_start));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.kmeans_max_iter == 0 {
            return bad("kmeans_max_iter must be >= 1".into());
        }
        if self.arch.projection_dim == 0
            || self.arch.encoder.contains(&0)
            || self.arch.predictor_hidden.contains(&0)
        {
            return bad("layer widths must be >= 1".into());
        }
        self.transform.validate()
    }

    /// Learning rate during 1-based epoch `e`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.lr_start;
        }
        (self.lr_start * (1.0 - epoch as f64 / self.epochs as f64)).max(0.0)
    }

    /// Weight of the prototype loss in the update during 1-based epoch `e`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch <= self.pretrain_epochs || !self.ablation.uses_spc() {
            0.0
        } else {
            self.lambda
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    /// Absent when no batch had two clusters present in both views.
    pub loss_s: Option<f64>,
    pub nmi: Option<f64>,
    pub acc: Option<f64>,
    pub ari: Option<f64>,
    pub feature_std: f64,
    pub lr: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,loss_d,loss_s,nmi,acc,ari,feature_std,lr";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{},{},{},{},{:?},{:?}",
            self.epoch,
            self.loss_d,
            opt(self.loss_s),
            opt(self.nmi),
            opt(self.acc),
            opt(self.ari),
            self.feature_std,
            self.lr
        )
    }
}

pub fn write_epoch_log<W: Write>(log: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "{EPOCH_LOG_HEADER}")?;
    for row in log {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

/// Everything a single optimisation step needs besides the networks.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub view_t: FeatureMatrix,
    pub view_t2: FeatureMatrix,
    /// Already scaled by sigma; added to the predictor input of the
    /// neighbourhood term.
    pub noise: FeatureMatrix,
    /// Cluster weights of the batch rows, `n x k`.
    pub weights: FeatureMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub tau: f64,
    pub dcl: DclTerms,
    pub spc_include_positive: bool,
    pub dcl2_use_target_features: bool,
}

impl ObjectiveSettings {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            tau: cfg.tau,
            dcl: cfg.ablation.dcl_terms(),
            spc_include_positive: cfg.spc_include_positive_in_denominator,
            dcl2_use_target_features: cfg.dcl2_use_target_features,
        }
    }
}

/// Both losses of one batch with their gradients kept apart.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    pub loss_d: f64,
    pub loss_s: Option<f64>,
    pub grads_d: OnlineGradients,
    pub grads_s: OnlineGradients,
}

impl BatchObjective {
    /// `loss_d + lambda * loss_s`, with an absent prototype loss counting as 0.
    pub fn value(&self, lambda: f64) -> f64 {
        self.loss_d + lambda * self.loss_s.unwrap_or(0.0)
    }

    /// Gradient of [`BatchObjective::value`]. With `lambda == 0` the prototype
    /// gradients are not touched at all.
    pub fn combined(&self, lambda: f64) -> Result<OnlineGradients> {
        let mut g = self.grads_d.clone();
        if lambda != 0.0 {
            let mut s = self.grads_s.clone();
            s.trunk.scale(lambda);
            s.predictor.scale(lambda);
            g.trunk.accumulate(&s.trunk)?;
            g.predictor.accumulate(&s.predictor)?;
        }
        Ok(g)
    }
}

/// Evaluates both losses for one batch and backpropagates them into the
/// online network. The target network only contributes constants.
pub fn batch_objective(
    online: &OnlineNetwork,
    target: &TargetNetwork,
    inputs: &BatchInputs,
    s: &ObjectiveSettings,
) -> Result<BatchObjective> {
    let (h1, cache1) = online.trunk.forward_cached(&inputs.view_t)?;
    let h1_norms = row_norms(&h1)?;
    let z1 = l2_normalize_rows(&h1)?;
    let t1 = l2_normalize_rows(&target.forward(&inputs.view_t)?)?;
    let t2_raw = target.forward(&inputs.view_t2)?;
    let t2 = l2_normalize_rows(&t2_raw)?;

    let mut grads_d = OnlineGradients::zeros_like(online);
    let mut grads_s = OnlineGradients::zeros_like(online);

    // transformation term: predictor on view t against target view t'
    let (r1, pcache1) = online.predictor.forward_cached(&z1)?;
    let r1_norms = row_norms(&r1)?;
    let p1 = l2_normalize_rows(&r1)?;

    // neighbourhood term: predictor on a perturbed view-t' feature against target view t
    let second = if s.dcl.neighbourhood && !s.dcl2_use_target_features {
        let (h2, cache2) = online.trunk.forward_cached(&inputs.view_t2)?;
        let norms = row_norms(&h2)?;
        let z2 = l2_normalize_rows(&h2)?;
        Some((z2, norms, cache2))
    } else {
        None
    };
    let mut noisy = match &second {
        Some((z2, _, _)) => z2.clone(),
        None => t2.clone(),
    };
    noisy.add_scaled(&inputs.noise, 1.0)?;
    let (r2, pcache2) = online.predictor.forward_cached(&noisy)?;
    let r2_norms = row_norms(&r2)?;
    let p2 = l2_normalize_rows(&r2)?;

    let ld = dcl_loss_terms(&p1, &t2, &p2, &t1, s.dcl)?;
    let mut g_h1 = FeatureMatrix::zeros(h1.rows(), h1.cols());
    if s.dcl.transform {
        let g_r1 = l2_normalize_backward(&p1, &r1_norms, &ld.grads[0])?;
        let (gp, g_z1) = online.predictor.backward(&pcache1, &g_r1)?;
        grads_d.predictor.accumulate(&gp)?;
        g_h1 = l2_normalize_backward(&z1, &h1_norms, &g_z1)?;
    }
    if s.dcl.neighbourhood {
        let g_r2 = l2_normalize_backward(&p2, &r2_norms, &ld.grads[1])?;
        let (gp, g_in) = online.predictor.backward(&pcache2, &g_r2)?;
        grads_d.predictor.accumulate(&gp)?;
        if let Some((z2, norms, cache2)) = &second {
            let g_h2 = l2_normalize_backward(z2, norms, &g_in)?;
            let (gt, _) = online.trunk.backward(cache2, &g_h2)?;
            grads_d.trunk.accumulate(&gt)?;
        }
    }
    if s.dcl.transform {
        let (gt, _) = online.trunk.backward(&cache1, &g_h1)?;
        grads_d.trunk.accumulate(&gt)?;
    }

    // prototype term over clusters present in both views
    let est_online = PrototypeEstimate::new(&h1, &inputs.weights)?;
    let est_target = PrototypeEstimate::new(&t2_raw, &inputs.weights)?;
    let clusters: Vec<usize> = (0..est_online.k())
        .filter(|&c| est_online.present()[c] && est_target.present()[c])
        .collect();
    let mut loss_s = None;
    if clusters.len() >= 2 {
        let po = est_online.prototypes_for(&clusters, View::Online)?;
        let pt = est_target.prototypes_for(&clusters, View::Target)?;
        let ls = spc_loss_with(&po, &pt, s.tau, s.spc_include_positive)?;
        let g_h1_s = est_online.backward(&clusters, &ls.grads[0])?;
        let (gt, _) = online.trunk.backward(&cache1, &g_h1_s)?;
        grads_s.trunk.accumulate(&gt)?;
        loss_s = Some(ls.value);
    }

    Ok(BatchObjective {
        loss_d: ld.value,
        loss_s,
        grads_d,
        grads_s,
    })
}

/// Per-epoch state shared by the steps of that epoch.
#[derive(Debug)]
pub struct EpochPlan {
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub weights: FeatureMatrix,
    pub batches: Vec<Vec<usize>>,
    rng: RngState,
    loss_d: Vec<f64>,
    loss_s: Vec<f64>,
}

/// What one step did, for inspection by tests and callers.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub objective: BatchObjective,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub online: OnlineNetwork,
    pub target: TargetNetwork,
    pub labels: HardLabels,
    pub log: Vec<EpochLog>,
    pub scores: Option<Scores>,
}

impl TrainOutput {
    /// Online trunk, online predictor, target trunk.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        write_checkpoint(out, &[&self.online.trunk, &self.online.predictor, self.target.trunk()])
    }
}

/// Target features used for clustering, and the normalized ones.
fn cluster_features(
    cfg: &TrainConfig,
    target: &TargetNetwork,
    data: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let raw = target.forward_with(cfg.execution, data)?;
    let normalized = l2_normalize_rows(&raw)?;
    let features = if cfg.normalize_before_assign {
        normalized.clone()
    } else {
        raw
    };
    Ok((features, normalized))
}

/// Step-by-step driver; [`train`] runs it to completion.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a FeatureMatrix,
    truth: Option<&'a HardLabels>,
    online: OnlineNetwork,
    target: TargetNetwork,
    /// Clustering of the current target features.
    fit: KMeansFit,
    epoch: usize,
    log: Vec<EpochLog>,
}

const STREAM_INIT: u64 = 0;
const STREAM_FINAL: u64 = u64::MAX;

impl<'a> Trainer<'a> {
    pub fn new(data: &'a FeatureMatrix, truth: Option<&'a HardLabels>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(t) = truth {
            if t.len() != data.rows() {
                return Err(Error::LengthMismatch {
                    left: data.rows(),
                    right: t.len(),
                });
            }
        }
        if cfg.epochs > 0 && data.rows() < cfg.batch_size {
            return Err(Error::ConfigInvalid(format!(
                "batch_size {} exceeds the {} available samples",
                cfg.batch_size,
                data.rows()
            )));
        }
        let mut rng = RngState::substream(cfg.seed, STREAM_INIT);
        let online = OnlineNetwork::new(data.cols(), &cfg.arch, &mut rng)?;
        let target = TargetNetwork::from_online(&online);
        // also the warm-up check: collapsed initial features fail here
        let (features, _) = cluster_features(&cfg, &target, data)?;
        let fit = kmeans_fit_with(cfg.execution, &features, cfg.k, &mut rng, cfg.kmeans_max_iter, DEFAULT_TOL)?;
        Ok(Self {
            cfg,
            data,
            truth,
            online,
            target,
            fit,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn online(&self) -> &OnlineNetwork {
        &self.online
    }

    pub fn target(&self) -> &TargetNetwork {
        &self.target
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    /// Current k-means labels of the target features.
    pub fn labels(&self) -> &HardLabels {
        &self.fit.labels
    }

    fn cluster_features(&self) -> Result<(FeatureMatrix, FeatureMatrix)> {
        cluster_features(&self.cfg, &self.target, self.data)
    }

    fn weights(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cfg.ablation.soft_weights() {
            let q = soft_assign_with(self.cfg.execution, features, &self.fit.centers, self.cfg.alpha)?;
            Ok(compute_weights(&q)?.w)
        } else {
            one_hot(self.fit.labels.as_slice(), self.cfg.k)
        }
    }

    /// Starts the next epoch: weights from the current clustering, learning
    /// rate, loss weighting and the batch partition.
    pub fn begin_epoch(&mut self) -> Result<EpochPlan> {
        if self.epoch >= self.cfg.epochs {
            return Err(Error::ConfigInvalid(format!("all {} epochs already ran", self.cfg.epochs)));
        }
        let epoch = self.epoch + 1;
        let (features, _) = self.cluster_features()?;
        let weights = self.weights(&features)?;
        let mut rng = RngState::substream(self.cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..self.data.rows()).collect();
        rng.shuffle(&mut order);
        let batches = order
            .chunks_exact(self.cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        Ok(EpochPlan {
            epoch,
            lr: self.cfg.lr_at(epoch),
            lambda: self.cfg.lambda_at(epoch),
            weights,
            batches,
            rng,
            loss_d: Vec::new(),
            loss_s: Vec::new(),
        })
    }

    /// One optimisation step on batch `b` of the plan: SGD on the online
    /// network, then EMA into the target.
    pub fn step(&mut self, plan: &mut EpochPlan, b: usize) -> Result<StepReport> {
        let idx = plan
            .batches
            .get(b)
            .ok_or_else(|| Error::ConfigInvalid(format!("batch {b} out of range")))?;
        let x = self.data.select_rows(idx);
        let view_t = augment(&x, &self.cfg.transform, &mut plan.rng)?;
        let view_t2 = augment(&x, &self.cfg.transform, &mut plan.rng)?;
        let mut noise = gaussian_noise(&mut plan.rng, idx.len(), self.cfg.arch.projection_dim);
        noise.scale(self.cfg.sigma);
        let inputs = BatchInputs {
            view_t,
            view_t2,
            noise,
            weights: plan.weights.select_rows(idx),
        };
        let objective = batch_objective(
            &self.online,
            &self.target,
            &inputs,
            &ObjectiveSettings::from_config(&self.cfg),
        )?;
        let grads = objective.combined(plan.lambda)?;
        self.online.sgd_step(&grads, plan.lr)?;
        self.target.ema_update(&self.online, self.cfg.momentum)?;
        plan.loss_d.push(objective.loss_d);
        if let Some(ls) = objective.loss_s {
            plan.loss_s.push(ls);
        }
        Ok(StepReport {
            objective,
            lambda: plan.lambda,
            lr: plan.lr,
        })
    }

    /// Re-clusters the updated target features and records the epoch.
    pub fn end_epoch(&mut self, mut plan: EpochPlan) -> Result<&EpochLog> {
        let (features, normalized) = self.cluster_features()?;
        self.fit = if self.cfg.reuse_centers {
            kmeans_fit_from(
                self.cfg.execution,
                &features,
                self.fit.centers.clone(),
                self.cfg.kmeans_max_iter,
                DEFAULT_TOL,
            )?
        } else {
            kmeans_fit_with(
                self.cfg.execution,
                &features,
                self.cfg.k,
                &mut plan.rng,
                self.cfg.kmeans_max_iter,
                DEFAULT_TOL,
            )?
        };
        let scores = self.truth.map(|t| evaluate(&self.fit.labels, t)).transpose()?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let entry = EpochLog {
            epoch: plan.epoch,
            loss_d: if plan.loss_d.is_empty() { 0.0 } else { mean(&plan.loss_d) },
            loss_s: (!plan.loss_s.is_empty()).then(|| mean(&plan.loss_s)),
            nmi: scores.map(|s| s.nmi),
            acc: scores.map(|s| s.acc),
            ari: scores.map(|s| s.ari),
            feature_std: feature_std(&normalized)?,
            lr: plan.lr,
        };
        self.epoch = plan.epoch;
        self.log.push(entry);
        Ok(self.log.last().expect("just pushed"))
    }

    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let mut plan = self.begin_epoch()?;
        for b in 0..plan.batches.len() {
            self.step(&mut plan, b)?;
        }
        self.end_epoch(plan)
    }

    /// Final labels come from a fresh k-means on the last target features.
    pub fn finish(self) -> Result<TrainOutput> {
        let labels = if self.epoch == 0 {
            self.fit.labels
        } else {
            let (features, _) = self.cluster_features()?;
            let mut rng = RngState::substream(self.cfg.seed, STREAM_FINAL);
            kmeans_fit_with(
                self.cfg.execution,
                &features,
                self.cfg.k,
                &mut rng,
                self.cfg.kmeans_max_iter,
                DEFAULT_TOL,
            )?
            .labels
        };
        let scores = self.truth.map(|t| evaluate(&labels, t)).transpose()?;
        Ok(TrainOutput {
            online: self.online,
            target: self.target,
            labels,
            log: self.log,
            scores,
        })
    }
}

pub fn train(data: &FeatureMatrix, truth: Option<&HardLabels>, cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(data, truth, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    trainer.finish()
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub output: TrainOutput,
}

pub const ABLATION_TABLE_HEADER: &str = "variant,nmi,acc,ari";

/// Trains every variant with the same seed; rows follow [`Ablation::ALL`].
pub fn run_ablation_suite(
    data: &FeatureMatrix,
    truth: Option<&HardLabels>,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    par::map_tasks(cfg.execution, Ablation::ALL.len(), |i| {
        let ablation = Ablation::ALL[i];
        let variant = TrainConfig {
            ablation,
            ..cfg.clone()
        };
        train(data, truth, &variant).map(|output| AblationRow { ablation, output })
    })
    .into_iter()
    .collect()
}

pub fn write_ablation_table<W: Write>(rows: &[AblationRow], mut out: W) -> Result<()> {
    writeln!(out, "{ABLATION_TABLE_HEADER}")?;
    for row in rows {
        let s = row.output.scores;
        writeln!(
            out,
            "{},{},{},{}",
            row.ablation,
            opt(s.map(|s| s.nmi)),
            opt(s.map(|s| s.acc)),
            opt(s.map(|s| s.ari))
        )?;
    }
    Ok(())
}
