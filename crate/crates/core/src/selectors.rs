//! Three-stage communication-efficient feature selection and the local
//! lasso ablation.
//!
//! 1. Pre-training: standard VFL exchanges with the configured optimizer.
//! 2. Embedding component selection: parties upload embeddings of every
//!    training sample once; the server runs proximal SGD with a group lasso
//!    over its input columns, locally. Columns left non-zero are the
//!    significant components `K_m`.
//! 3. Local feature selection: each party runs proximal SGD on the squared
//!    distance between its current and frozen embeddings restricted to
//!    `K_m`, with a group lasso over its input columns. No communication.
//!
//! Features whose input column ends exactly zero are removed; training then
//! continues with ordinary VFL exchanges and the removed columns pinned.

use std::thread;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, DenseNetwork, ForwardTrace, Labels, LossKind};
use crate::protocol::{sgd_step, BatchPlan, ComponentMap, Party, Phase, VflSystem, BYTES_PER_SCALAR};
use crate::regularization::{group_norms, prox_group_lasso, surviving_groups};
use crate::seed;

/// Per-party sorted indices of significant embedding components.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificantComponentSet {
    pub per_party: Vec<Vec<usize>>,
}

impl SignificantComponentSet {
    pub fn all(map: &ComponentMap) -> Self {
        SignificantComponentSet {
            per_party: map.dims().iter().map(|&d| (0..d).collect()).collect(),
        }
    }

    /// Components whose server input column is non-zero.
    pub fn from_server(server: &DenseNetwork, map: &ComponentMap) -> Self {
        SignificantComponentSet {
            per_party: map.partition(&surviving_groups(server)),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_party.iter().map(Vec::len).collect()
    }
}

/// Embeddings of every training sample under the pre-trained party
/// networks. Computed once; read-only afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEmbeddings {
    per_party: Vec<Array2<f64>>,
}

impl FrozenEmbeddings {
    pub fn party(&self, m: usize) -> &Array2<f64> {
        &self.per_party[m]
    }

    pub fn parties(&self) -> usize {
        self.per_party.len()
    }

    /// Server input matrix: party embeddings concatenated in party order.
    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = self.per_party.iter().map(|e| e.view()).collect();
        concatenate(Axis(1), &views).expect("row counts agree")
    }
}

/// Per-party feature survival (`true` = kept).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub per_party: Vec<Vec<bool>>,
}

impl FeatureMask {
    pub fn surviving_counts(&self) -> Vec<usize> {
        self.per_party
            .iter()
            .map(|m| m.iter().filter(|&&k| k).count())
            .collect()
    }

    /// Flattens in party order, then local column order.
    pub fn flatten(&self) -> Vec<bool> {
        self.per_party.concat()
    }
}

/// Iteration callback for time-series logging.
pub trait Observer {
    fn observe(&mut self, system: &VflSystem, progress: &Progress) -> Result<()>;
}

impl Observer for () {
    fn observe(&mut self, _: &VflSystem, _: &Progress) -> Result<()> {
        Ok(())
    }
}

/// What just finished when an [`Observer`] is called.
#[derive(Clone, Debug)]
pub struct Progress {
    pub phase: Phase,
    /// 1-based epoch within the phase; 0 for the initial point.
    pub epoch: usize,
    pub train_loss: Option<f64>,
    /// Present once Stage 2 has started.
    pub components: Option<SignificantComponentSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    /// Mini-batch size of the communication-free Stages 2 and 3.
    pub local_batch_size: usize,
    pub pretrain_epochs: usize,
    /// `false` skips Stage 2 and keeps every component (local lasso).
    pub component_selection: bool,
    pub server_lambda: f64,
    pub server_learning_rate: f64,
    pub stage2_epochs: usize,
    pub party_lambdas: Vec<f64>,
    pub party_learning_rate: f64,
    pub stage3_epochs: usize,
    pub refine_epochs: usize,
    /// Drop components outside `K_m` from the wire before refining.
    pub prune_components: bool,
    pub parallel_parties: bool,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn validate(&self, parties: usize) -> Result<()> {
        if self.pretrain_epochs == 0 {
            return Err(Error::config("pretrain_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 || self.local_batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        nonnegative("server_lambda", self.server_lambda)?;
        positive("server_learning_rate", self.server_learning_rate)?;
        positive("party_learning_rate", self.party_learning_rate)?;
        if self.party_lambdas.len() != parties {
            return Err(Error::config(
                "party_lambdas",
                format!("expected {parties} values, got {}", self.party_lambdas.len()),
            ));
        }
        for &l in &self.party_lambdas {
            nonnegative("party_lambdas", l)?;
        }
        Ok(())
    }
}

pub(crate) fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and >= 0, got {v}")))
    }
}

pub(crate) fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectionReport {
    pub mask: FeatureMask,
    pub components: SignificantComponentSet,
    /// True when `components` was forced to "all" (Stage 2 skipped).
    pub components_overridden: bool,
    pub pretrain_losses: Vec<f64>,
    pub stage2_losses: Vec<f64>,
    /// Per epoch, per party.
    pub stage3_losses: Vec<Vec<f64>>,
    pub refine_losses: Vec<f64>,
}

/// Stage 1: `epochs` epochs of unregularized exchanges. Epoch indices of the
/// batch plan start at `first_epoch`.
pub fn pretrain(
    system: &mut VflSystem,
    plan: &BatchPlan,
    epochs: usize,
    loss: LossKind,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Err(Error::Contract("pre-training needs at least one epoch".into()));
    }
    system.set_phase(Phase::Pretrain);
    communicate(system, plan, 0, epochs, loss, Phase::Pretrain, observer, None)
}

#[allow(clippy::too_many_arguments)]
fn communicate(
    system: &mut VflSystem,
    plan: &BatchPlan,
    first_epoch: usize,
    epochs: usize,
    loss: LossKind,
    phase: Phase,
    observer: &mut dyn Observer,
    components: Option<&SignificantComponentSet>,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let l = system.train_epoch(plan, (first_epoch + e) as u64, loss, None)?;
        losses.push(l);
        observer.observe(
            system,
            &Progress {
                phase,
                epoch: e + 1,
                train_loss: Some(l),
                components: components.cloned(),
            },
        )?;
    }
    Ok(losses)
}

/// Every party uploads embeddings of all training rows once.
pub fn freeze_embeddings(system: &mut VflSystem) -> Result<FrozenEmbeddings> {
    system.mark_frozen()?;
    system.set_phase(Phase::Stage2Upload);
    let all: Vec<usize> = (0..system.n_train()).collect();
    let mut per_party = Vec::with_capacity(system.parties().len());
    for m in 0..system.parties().len() {
        let e = system.party_embed(m, &all, false)?;
        system.record_upload(e.len() as u64 * BYTES_PER_SCALAR);
        per_party.push(e);
    }
    system.record_round();
    Ok(FrozenEmbeddings { per_party })
}

/// One epoch of proximal SGD on the server over fixed inputs.
#[allow(clippy::too_many_arguments)]
fn server_psgd_epoch(
    server: &mut DenseNetwork,
    inputs: &Array2<f64>,
    labels: &Labels,
    plan: &BatchPlan,
    epoch: u64,
    lambda: f64,
    eta: f64,
    loss: LossKind,
) -> Result<f64> {
    let batches = plan.epoch(epoch);
    let mut total = 0.0;
    for b in &batches {
        let x = inputs.select(Axis(0), b);
        let (out, trace) = server.forward(x.view())?;
        let (l, g) = loss_and_grad(loss, out.view(), &labels.select(b))?;
        let grads = server.backward(&trace, g.view())?;
        sgd_step(server, &grads, eta)?;
        prox_group_lasso(server, lambda, eta);
        total += l;
    }
    Ok(total / batches.len().max(1) as f64)
}

/// Stage 2 on its own: `epochs` epochs of proximal SGD starting from
/// `server`, then read off the surviving components. Every epoch ends on a
/// prox application, so survival is read from literal zeros.
#[allow(clippy::too_many_arguments)]
pub fn select_components(
    server: &DenseNetwork,
    frozen: &FrozenEmbeddings,
    map: &ComponentMap,
    labels: &Labels,
    lambda: f64,
    eta: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    loss: LossKind,
) -> Result<(DenseNetwork, SignificantComponentSet)> {
    nonnegative("server_lambda", lambda)?;
    positive("server_learning_rate", eta)?;
    let inputs = frozen.concatenated();
    if inputs.ncols() != server.input_dim() {
        return Err(Error::shape("server input", server.input_dim(), inputs.ncols()));
    }
    let plan = BatchPlan::new(inputs.nrows(), batch_size, seed)?;
    let mut net = server.clone();
    for e in 0..epochs {
        server_psgd_epoch(&mut net, &inputs, labels, &plan, e as u64, lambda, eta, loss)?;
    }
    let set = SignificantComponentSet::from_server(&net, map);
    Ok((net, set))
}

fn proxy_trace(
    net: &DenseNetwork,
    data: ArrayView2<f64>,
    frozen: &Array2<f64>,
    components: &[usize],
    batch: &[usize],
) -> Result<(f64, Array2<f64>, ForwardTrace)> {
    let x = data.select(Axis(0), batch);
    let target = frozen.select(Axis(0), batch);
    let (out, trace) = net.forward(x.view())?;
    let mut grad = Array2::zeros(out.raw_dim());
    let n = batch.len();
    let mut loss = 0.0;
    if n > 0 {
        let scale = 2.0 / n as f64;
        for &k in components {
            if k >= out.ncols() {
                return Err(Error::Range {
                    index: k,
                    len: out.ncols(),
                    context: "significant component".into(),
                });
            }
            for i in 0..n {
                let diff = out[[i, k]] - target[[i, k]];
                loss += diff * diff;
                grad[[i, k]] = scale * diff;
            }
        }
        loss /= n as f64;
    }
    Ok((loss, grad, trace))
}

/// Mean over `batch` of `Σ_{k∈K} (h(x)_k − ĥ(x)_k)²` and its gradient with
/// respect to the embedding, which is zero outside `components`.
pub fn proxy_loss(
    net: &DenseNetwork,
    data: ArrayView2<f64>,
    frozen: &Array2<f64>,
    components: &[usize],
    batch: &[usize],
) -> Result<(f64, Array2<f64>)> {
    proxy_trace(net, data, frozen, components, batch).map(|(l, g, _)| (l, g))
}

/// Proxy loss of party `m` over all its training rows.
pub fn party_proxy_risk(
    system: &VflSystem,
    m: usize,
    frozen: &FrozenEmbeddings,
    components: &[usize],
) -> Result<f64> {
    let party = &system.parties()[m];
    let all: Vec<usize> = (0..system.n_train()).collect();
    proxy_loss(party.net(), party.train_data().view(), frozen.party(m), components, &all).map(|r| r.0)
}

fn party_psgd_epoch(
    party: &mut Party,
    frozen: &Array2<f64>,
    components: &[usize],
    plan: &BatchPlan,
    epoch: u64,
    lambda: f64,
    eta: f64,
) -> Result<f64> {
    let batches = plan.epoch(epoch);
    let mut total = 0.0;
    for b in &batches {
        let (l, g, trace) = proxy_trace(party.net(), party.train_data().view(), frozen, components, b)?;
        let grads = party.net().backward(&trace, g.view())?;
        let net = party.net_mut();
        sgd_step(net, &grads, eta)?;
        prox_group_lasso(net, lambda, eta);
        total += l;
    }
    Ok(total / batches.len().max(1) as f64)
}

/// Stage 3 for a single party, run to completion. Communication-free.
#[allow(clippy::too_many_arguments)]
pub fn local_feature_selection(
    net: &DenseNetwork,
    data: ArrayView2<f64>,
    frozen: &Array2<f64>,
    components: &[usize],
    lambda: f64,
    eta: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<DenseNetwork> {
    nonnegative("party_lambda", lambda)?;
    positive("party_learning_rate", eta)?;
    let mut party = Party::new(
        net.clone(),
        crate::nn::OptimizerConfig::sgd(eta),
        data.to_owned(),
        Array2::zeros((0, data.ncols())),
    )?;
    let plan = BatchPlan::new(data.nrows(), batch_size, seed)?;
    for e in 0..epochs {
        party_psgd_epoch(&mut party, frozen, components, &plan, e as u64, lambda, eta)?;
    }
    Ok(party.net().clone())
}

pub fn extract_mask(system: &VflSystem) -> FeatureMask {
    FeatureMask {
        per_party: system
            .parties()
            .iter()
            .map(|p| group_norms(p.net()).into_iter().map(|n| n > 0.0).collect())
            .collect(),
    }
}

/// Post-selection training with removed features pinned at zero.
/// Optimizers restart from fresh state. Batch epochs are numbered from
/// `first_epoch` so they continue the pre-training schedule.
#[allow(clippy::too_many_arguments)]
pub fn refine(
    system: &mut VflSystem,
    mask: &FeatureMask,
    plan: &BatchPlan,
    first_epoch: usize,
    epochs: usize,
    loss: LossKind,
    observer: &mut dyn Observer,
    components: Option<&SignificantComponentSet>,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    for (m, (p, alive)) in system.parties().iter().zip(&mask.per_party).enumerate() {
        let norms = group_norms(p.net());
        if norms.iter().zip(alive).any(|(&n, &a)| !a && n != 0.0) {
            return Err(Error::Contract(format!(
                "party {m}: mask marks a non-zero column as removed"
            )));
        }
    }
    system.pin_features(&mask.per_party)?;
    system.reset_optimizers();
    system.set_phase(Phase::PostFs);
    communicate(system, plan, first_epoch, epochs, loss, Phase::PostFs, observer, components)
}

/// Stages 2 and 3 plus refinement on an already pre-trained system.
fn select_and_refine(
    system: &mut VflSystem,
    cfg: &SelectionConfig,
    plan: &BatchPlan,
    observer: &mut dyn Observer,
    pretrain_losses: Vec<f64>,
) -> Result<FeatureSelectionReport> {
    let map = system.component_map();
    let frozen = freeze_embeddings(system)?;
    let all = SignificantComponentSet::all(&map);
    observer.observe(
        system,
        &Progress {
            phase: Phase::Stage2Upload,
            epoch: 0,
            train_loss: None,
            components: Some(all.clone()),
        },
    )?;

    let mut stage2_losses = Vec::new();
    let components = if cfg.component_selection {
        let inputs = frozen.concatenated();
        let labels = system.train_labels().clone();
        let stage2_plan = BatchPlan::new(
            inputs.nrows(),
            cfg.local_batch_size,
            seed::derive(cfg.seed, seed::Stream::Stage2 as u64),
        )?;
        for e in 0..cfg.stage2_epochs {
            let l = server_psgd_epoch(
                system.server_mut(),
                &inputs,
                &labels,
                &stage2_plan,
                e as u64,
                cfg.server_lambda,
                cfg.server_learning_rate,
                cfg.loss,
            )?;
            stage2_losses.push(l);
            observer.observe(
                system,
                &Progress {
                    phase: Phase::Stage2Upload,
                    epoch: e + 1,
                    train_loss: Some(l),
                    components: Some(SignificantComponentSet::from_server(system.server(), &map)),
                },
            )?;
        }
        SignificantComponentSet::from_server(system.server(), &map)
    } else {
        all
    };

    system.set_phase(Phase::Stage3);
    let stage3_seed = seed::derive(cfg.seed, seed::Stream::Stage3 as u64);
    let plans = (0..system.parties().len())
        .map(|m| BatchPlan::new(system.n_train(), cfg.local_batch_size, seed::derive(stage3_seed, m as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut stage3_losses = Vec::with_capacity(cfg.stage3_epochs);
    for e in 0..cfg.stage3_epochs {
        let losses = stage3_epoch(system, &frozen, &components, &plans, e as u64, cfg)?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        stage3_losses.push(losses);
        observer.observe(
            system,
            &Progress {
                phase: Phase::Stage3,
                epoch: e + 1,
                train_loss: Some(mean),
                components: Some(components.clone()),
            },
        )?;
    }

    let mask = extract_mask(system);
    if cfg.prune_components {
        system.prune_components(&components.per_party)?;
    }
    let refine_losses = refine(
        system,
        &mask,
        plan,
        cfg.pretrain_epochs,
        cfg.refine_epochs,
        cfg.loss,
        observer,
        Some(&components),
    )?;

    Ok(FeatureSelectionReport {
        mask,
        components,
        components_overridden: !cfg.component_selection,
        pretrain_losses,
        stage2_losses,
        stage3_losses,
        refine_losses,
    })
}

fn stage3_epoch(
    system: &mut VflSystem,
    frozen: &FrozenEmbeddings,
    components: &SignificantComponentSet,
    plans: &[BatchPlan],
    epoch: u64,
    cfg: &SelectionConfig,
) -> Result<Vec<f64>> {
    let eta = cfg.party_learning_rate;
    let parties = system.parties_mut();
    if cfg.parallel_parties {
        thread::scope(|scope| {
            let handles: Vec<_> = parties
                .iter_mut()
                .enumerate()
                .map(|(m, party)| {
                    let (f, k, plan, lambda) = (frozen.party(m), &components.per_party[m], &plans[m], cfg.party_lambdas[m]);
                    scope.spawn(move || party_psgd_epoch(party, f, k, plan, epoch, lambda, eta))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("stage-3 worker panicked"))
                .collect()
        })
    } else {
        parties
            .iter_mut()
            .enumerate()
            .map(|(m, party)| {
                party_psgd_epoch(
                    party,
                    frozen.party(m),
                    &components.per_party[m],
                    &plans[m],
                    epoch,
                    cfg.party_lambdas[m],
                    eta,
                )
            })
            .collect()
    }
}

fn run(system: &mut VflSystem, cfg: &SelectionConfig, observer: &mut dyn Observer) -> Result<FeatureSelectionReport> {
    cfg.validate(system.parties().len())?;
    let plan = BatchPlan::new(
        system.n_train(),
        cfg.batch_size,
        seed::derive(cfg.seed, seed::Stream::Batches as u64),
    )?;
    observer.observe(
        system,
        &Progress {
            phase: Phase::Pretrain,
            epoch: 0,
            train_loss: None,
            components: None,
        },
    )?;
    let pretrain_losses = pretrain(system, &plan, cfg.pretrain_epochs, cfg.loss, observer)?;
    select_and_refine(system, cfg, &plan, observer, pretrain_losses)
}

/// Full pipeline: pretrain, freeze, select components, local selection,
/// extract mask, refine.
pub fn less_vfl_run(
    system: &mut VflSystem,
    cfg: &SelectionConfig,
    observer: &mut dyn Observer,
) -> Result<FeatureSelectionReport> {
    if !cfg.component_selection {
        return Err(Error::config("component_selection", "must be enabled for LESS-VFL"));
    }
    run(system, cfg, observer)
}

/// Same pipeline with Stage 2 removed: every component counts as
/// significant.
pub fn local_lasso_run(
    system: &mut VflSystem,
    cfg: &SelectionConfig,
    observer: &mut dyn Observer,
) -> Result<FeatureSelectionReport> {
    let cfg = SelectionConfig {
        component_selection: false,
        ..cfg.clone()
    };
    run(system, &cfg, observer)
}

/// Runs Stages 2–3 and refinement on a system that was pre-trained
/// elsewhere (shared checkpoints in a grid search).
pub fn select_from_pretrained(
    system: &mut VflSystem,
    cfg: &SelectionConfig,
    observer: &mut dyn Observer,
    pretrain_losses: Vec<f64>,
) -> Result<FeatureSelectionReport> {
    cfg.validate(system.parties().len())?;
    let plan = BatchPlan::new(
        system.n_train(),
        cfg.batch_size,
        seed::derive(cfg.seed, seed::Stream::Batches as u64),
    )?;
    select_and_refine(system, cfg, &plan, observer, pretrain_losses)
}

/// Pre-training only, with the same batch schedule [`less_vfl_run`] uses.
pub fn pretrain_with(system: &mut VflSystem, cfg: &SelectionConfig, observer: &mut dyn Observer) -> Result<Vec<f64>> {
    let plan = BatchPlan::new(
        system.n_train(),
        cfg.batch_size,
        seed::derive(cfg.seed, seed::Stream::Batches as u64),
    )?;
    observer.observe(
        system,
        &Progress {
            phase: Phase::Pretrain,
            epoch: 0,
            train_loss: None,
            components: None,
        },
    )?;
    pretrain(system, &plan, cfg.pretrain_epochs, cfg.loss, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, OptimizerConfig};
    use ndarray::array;

    fn system(n: usize, dims: &[(usize, usize)], seed_value: u64) -> VflSystem {
        let mut rng = seed::rng(seed_value);
        let parties = dims
            .iter()
            .map(|&(d, e)| {
                let net = DenseNetwork::init(d, &[6], e, Activation::Tanh, &mut rng).unwrap();
                let x = Array2::from_shape_fn((n, d), |(i, j)| ((i * 13 + j * 5) as f64 * 0.37).sin());
                Party::new(net, OptimizerConfig::adam(0.01), x.clone(), x.slice(ndarray::s![..4, ..]).to_owned()).unwrap()
            })
            .collect();
        let width = dims.iter().map(|d| d.1).sum();
        let server = DenseNetwork::init(width, &[], 1, Activation::Identity, &mut rng).unwrap();
        let y = Labels::Real(Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 * 0.05).cos()));
        let yt = Labels::Real(Array2::zeros((4, 1)));
        VflSystem::new(server, OptimizerConfig::adam(0.01), parties, y, yt, seed_value).unwrap()
    }

    #[test]
    fn freeze_charges_one_upload() {
        let mut sys = system(1000, &[(5, 8)], 1);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        assert_eq!(sys.ledger().phase(Phase::Stage2Upload).bytes_up, 32_000);
        assert_eq!(sys.ledger().total_bytes(), 32_000);
        let all: Vec<usize> = (0..1000).collect();
        assert_eq!(frozen.party(0), &sys.party_embed(0, &all, false).unwrap());
        assert!(matches!(freeze_embeddings(&mut sys), Err(Error::Contract(_))));
    }

    #[test]
    fn proxy_loss_cases() {
        let mut sys = system(30, &[(4, 3)], 2);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        assert_eq!(party_proxy_risk(&sys, 0, &frozen, &[0, 1, 2]).unwrap(), 0.0);
        let p = &sys.parties()[0];
        let (l, g) = proxy_loss(p.net(), p.train_data().view(), frozen.party(0), &[], &[0, 1, 2]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        let net = DenseNetwork::new(vec![Layer::new(array![[1.0]], array![0.0], Activation::Identity)]).unwrap();
        let (l, g) = proxy_loss(&net, array![[3.0]].view(), &array![[1.0]], &[0], &[0]).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g, array![[4.0]]);
    }

    #[test]
    fn proxy_gradient_vanishes_outside_components() {
        let mut sys = system(20, &[(4, 5)], 3);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        let mut perturbed = sys.parties()[0].net().clone();
        let mut w = perturbed.first_layer().weights.clone();
        w.mapv_inplace(|v| v * 1.3 + 0.01);
        perturbed.set_first_layer_weights(w).unwrap();
        let x = sys.parties()[0].train_data().clone();
        let batch: Vec<usize> = (0..20).collect();
        let (l, g) = proxy_loss(&perturbed, x.view(), frozen.party(0), &[1, 3], &batch).unwrap();
        assert!(l > 0.0);
        for (k, col) in g.columns().into_iter().enumerate() {
            if k != 1 && k != 3 {
                assert!(col.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_server_lambda_keeps_all_components() {
        let mut sys = system(200, &[(4, 3), (3, 2)], 4);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        let map = sys.component_map();
        let labels = sys.train_labels().clone();
        let (_, set) = select_components(sys.server(), &frozen, &map, &labels, 0.0, 0.01, 2, 32, 9, LossKind::SquaredError).unwrap();
        assert_eq!(set, SignificantComponentSet::all(&map));
        let (_, none) = select_components(sys.server(), &frozen, &map, &labels, 1e9, 0.01, 1, 32, 9, LossKind::SquaredError).unwrap();
        assert_eq!(none.sizes(), vec![0, 0]);
        assert!(select_components(sys.server(), &frozen, &map, &labels, -1.0, 0.01, 1, 32, 9, LossKind::SquaredError).is_err());
    }

    #[test]
    fn huge_party_lambda_removes_everything() {
        let mut sys = system(64, &[(5, 3)], 5);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        let p = &sys.parties()[0];
        let net = local_feature_selection(p.net(), p.train_data().view(), frozen.party(0), &[0, 1, 2], 1e9, 0.01, 1, 16, 1).unwrap();
        assert!(surviving_groups(&net).is_empty());
    }

    #[test]
    fn zero_party_lambda_stays_at_optimum() {
        let mut sys = system(64, &[(5, 3)], 6);
        let frozen = freeze_embeddings(&mut sys).unwrap();
        let p = &sys.parties()[0];
        let net = local_feature_selection(p.net(), p.train_data().view(), frozen.party(0), &[0, 1, 2], 0.0, 0.05, 20, 16, 1).unwrap();
        assert_eq!(&net, p.net());
        assert_eq!(surviving_groups(&net).len(), 5);
    }

    #[test]
    fn extract_mask_reads_zero_columns() {
        let mut sys = system(10, &[(2, 2)], 7);
        assert_eq!(extract_mask(&sys).per_party, vec![vec![true, true]]);
        let net = sys.party_mut(0).net_mut();
        let mut w = net.first_layer().weights.clone();
        w.column_mut(1).fill(0.0);
        net.set_first_layer_weights(w).unwrap();
        assert_eq!(extract_mask(&sys).per_party, vec![vec![true, false]]);
        prox_group_lasso(sys.party_mut(0).net_mut(), 1e9, 1.0);
        assert_eq!(extract_mask(&sys).per_party, vec![vec![false, false]]);
    }

    #[test]
    fn zero_epoch_refine_is_noop() {
        let mut sys = system(10, &[(2, 2)], 8);
        let before = sys.server().clone();
        let plan = BatchPlan::new(10, 4, 0).unwrap();
        let mask = extract_mask(&sys);
        let out = refine(&mut sys, &mask, &plan, 0, 0, LossKind::SquaredError, &mut (), None).unwrap();
        assert!(out.is_empty());
        assert_eq!(sys.server(), &before);
        assert_eq!(sys.ledger().total_bytes(), 0);
    }

    #[test]
    fn pretrain_requires_an_epoch() {
        let mut sys = system(10, &[(2, 2)], 8);
        let plan = BatchPlan::new(10, 4, 0).unwrap();
        assert!(matches!(
            pretrain(&mut sys, &plan, 0, LossKind::SquaredError, &mut ()),
            Err(Error::Contract(_))
        ));
    }
}
