use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::batch::BatchPlan;
use super::ledger::{CommLedger, Phase, BYTES_PER_SCALAR};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, loss_and_grad, DenseNetwork, GradientSet, Labels, LossKind, OptimizerConfig,
    OptimizerState,
};
use crate::regularization::prox_group_lasso;

/// One data holder: its local network, optimizer and vertical data shard.
/// The shard is only read by party-local code paths.
#[derive(Clone, Debug)]
pub struct Party {
    net: DenseNetwork,
    optimizer: OptimizerState,
    train: Array2<f64>,
    test: Array2<f64>,
    alive: Option<Vec<bool>>,
}

impl Party {
    pub fn new(
        net: DenseNetwork,
        optimizer: OptimizerConfig,
        train: Array2<f64>,
        test: Array2<f64>,
    ) -> Result<Self> {
        for (name, shard) in [("train", &train), ("test", &test)] {
            if shard.ncols() != net.input_dim() {
                return Err(Error::shape(
                    format!("party {name} shard columns"),
                    net.input_dim(),
                    shard.ncols(),
                ));
            }
        }
        Ok(Party {
            optimizer: OptimizerState::new(optimizer, &net),
            net,
            train,
            test,
            alive: None,
        })
    }

    pub fn net(&self) -> &DenseNetwork {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn feature_count(&self) -> usize {
        self.net.input_dim()
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub(crate) fn train_data(&self) -> &Array2<f64> {
        &self.train
    }

    pub(crate) fn shard(&self, split: DataSplit) -> &Array2<f64> {
        match split {
            DataSplit::Train => &self.train,
            DataSplit::Test => &self.test,
        }
    }

    /// Per-feature liveness used to pin removed features, if set.
    pub fn alive(&self) -> Option<&[bool]> {
        self.alive.as_deref()
    }

    fn rows(&self, rows: &[usize]) -> Result<Array2<f64>> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.train.nrows()) {
            return Err(Error::Range {
                index: bad,
                len: self.train.nrows(),
                context: "party batch".into(),
            });
        }
        Ok(self.train.select(Axis(0), rows))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Test,
}

/// Maps server input columns to `(party, component)` pairs. Party
/// embeddings are concatenated in party order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentMap {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ComponentMap {
    pub fn new(dims: Vec<usize>) -> Self {
        let offsets = dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect();
        ComponentMap { dims, offsets }
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn server_index(&self, party: usize, component: usize) -> usize {
        assert!(component < self.dims[party], "component out of range");
        self.offsets[party] + component
    }

    pub fn locate(&self, server_index: usize) -> (usize, usize) {
        assert!(server_index < self.total(), "server index out of range");
        let party = self.offsets.partition_point(|&o| o <= server_index) - 1;
        // Skip zero-width parties sharing an offset.
        let party = (party..self.dims.len())
            .find(|&m| server_index < self.offsets[m] + self.dims[m])
            .expect("total covers index");
        (party, server_index - self.offsets[party])
    }

    /// Splits a matrix whose columns follow server input order.
    pub fn split_columns(&self, m: ArrayView2<f64>) -> Vec<Array2<f64>> {
        self.offsets
            .iter()
            .zip(&self.dims)
            .map(|(&o, &d)| m.slice(s![.., o..o + d]).to_owned())
            .collect()
    }

    /// Partitions a set of server input indices into per-party component
    /// index lists.
    pub fn partition(&self, indices: &BTreeSet<usize>) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.dims.len()];
        for &i in indices {
            let (m, k) = self.locate(i);
            out[m].push(k);
        }
        out
    }
}

/// Hyper-parameters of a proximal SGD party update (the group lasso
/// baseline): plain gradient step with `learning_rate`, then the group
/// lasso prox with `lambdas[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLassoStep {
    pub lambdas: Vec<f64>,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Server, parties, labels and the communication ledger.
#[derive(Clone, Debug)]
pub struct VflSystem {
    server: DenseNetwork,
    server_optimizer: OptimizerState,
    parties: Vec<Party>,
    train_labels: Labels,
    test_labels: Labels,
    ledger: CommLedger,
    phase: Phase,
    rng_seed: u64,
    frozen: bool,
}

impl VflSystem {
    pub fn new(
        server: DenseNetwork,
        server_optimizer: OptimizerConfig,
        parties: Vec<Party>,
        train_labels: Labels,
        test_labels: Labels,
        rng_seed: u64,
    ) -> Result<Self> {
        if parties.is_empty() {
            return Err(Error::config("partition", "need at least one party"));
        }
        let width: usize = parties.iter().map(Party::embedding_dim).sum();
        if server.input_dim() != width {
            return Err(Error::shape("server input", width, server.input_dim()));
        }
        for (m, p) in parties.iter().enumerate() {
            if p.train.nrows() != train_labels.len() {
                return Err(Error::shape(
                    format!("party {m} train rows"),
                    train_labels.len(),
                    p.train.nrows(),
                ));
            }
            if p.test.nrows() != test_labels.len() {
                return Err(Error::shape(
                    format!("party {m} test rows"),
                    test_labels.len(),
                    p.test.nrows(),
                ));
            }
        }
        Ok(VflSystem {
            server_optimizer: OptimizerState::new(server_optimizer, &server),
            server,
            parties,
            train_labels,
            test_labels,
            ledger: CommLedger::new(),
            phase: Phase::Standard,
            rng_seed,
            frozen: false,
        })
    }

    pub fn server(&self) -> &DenseNetwork {
        &self.server
    }

    pub(crate) fn server_mut(&mut self) -> &mut DenseNetwork {
        &mut self.server
    }

    pub fn server_optimizer(&self) -> &OptimizerState {
        &self.server_optimizer
    }

    pub fn parties(&self) -> &[Party] {
        &self.parties
    }

    #[cfg(test)]
    pub(crate) fn party_mut(&mut self, m: usize) -> &mut Party {
        &mut self.parties[m]
    }

    pub(crate) fn parties_mut(&mut self) -> &mut [Party] {
        &mut self.parties
    }

    pub(crate) fn train_labels(&self) -> &Labels {
        &self.train_labels
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn is_classification(&self) -> bool {
        self.train_labels.is_classification()
    }

    pub fn component_map(&self) -> ComponentMap {
        ComponentMap::new(self.parties.iter().map(Party::embedding_dim).collect())
    }

    pub(crate) fn mark_frozen(&mut self) -> Result<()> {
        if self.frozen {
            return Err(Error::Contract("embeddings were already frozen".into()));
        }
        self.frozen = true;
        Ok(())
    }

    pub(crate) fn record_upload(&mut self, bytes: u64) {
        self.ledger.record_up(self.phase, bytes);
    }

    pub(crate) fn record_round(&mut self) {
        self.ledger.record_round(self.phase);
    }

    /// Party `m`'s embeddings of the given training rows. When `record` is
    /// set the upload is charged to the ledger.
    pub fn party_embed(&mut self, m: usize, rows: &[usize], record: bool) -> Result<Array2<f64>> {
        let party = self.parties.get(m).ok_or(Error::Range {
            index: m,
            len: self.parties.len(),
            context: "party".into(),
        })?;
        let x = party.rows(rows)?;
        let emb = party.net.predict(x.view())?;
        if record {
            let bytes = (emb.len() as u64) * BYTES_PER_SCALAR;
            self.ledger.record_up(self.phase, bytes);
        }
        Ok(emb)
    }

    /// Re-creates every optimizer from its configuration, discarding
    /// accumulated moments.
    pub fn reset_optimizers(&mut self) {
        self.server_optimizer = OptimizerState::new(*self.server_optimizer.config(), &self.server);
        for p in &mut self.parties {
            p.optimizer = OptimizerState::new(*p.optimizer.config(), &p.net);
        }
    }

    pub fn set_optimizers(&mut self, server: OptimizerConfig, parties: OptimizerConfig) {
        self.server_optimizer = OptimizerState::new(server, &self.server);
        for p in &mut self.parties {
            p.optimizer = OptimizerState::new(parties, &p.net);
        }
    }

    /// Pins removed features: their first-layer gradient is zeroed in every
    /// subsequent update.
    pub fn pin_features(&mut self, alive: &[Vec<bool>]) -> Result<()> {
        if alive.len() != self.parties.len() {
            return Err(Error::shape("feature masks", self.parties.len(), alive.len()));
        }
        for (m, (p, a)) in self.parties.iter_mut().zip(alive).enumerate() {
            if a.len() != p.feature_count() {
                return Err(Error::shape(format!("party {m} mask"), p.feature_count(), a.len()));
            }
            p.alive = Some(a.clone());
        }
        Ok(())
    }

    /// Removes embedding components outside `keep[m]` from party output
    /// layers and the matching server input columns.
    pub fn prune_components(&mut self, keep: &[Vec<usize>]) -> Result<()> {
        if keep.len() != self.parties.len() {
            return Err(Error::shape("component sets", self.parties.len(), keep.len()));
        }
        let map = self.component_map();
        let mut server_keep = Vec::new();
        for (m, ks) in keep.iter().enumerate() {
            if ks.is_empty() {
                return Err(Error::Domain(format!(
                    "party {m} would keep no embedding components"
                )));
            }
            if let Some(&bad) = ks.iter().find(|&&k| k >= map.dims()[m]) {
                return Err(Error::Range {
                    index: bad,
                    len: map.dims()[m],
                    context: format!("party {m} component"),
                });
            }
            server_keep.extend(ks.iter().map(|&k| map.server_index(m, k)));
        }
        for (p, ks) in self.parties.iter_mut().zip(keep) {
            p.net.retain_outputs(ks);
        }
        self.server.retain_inputs(&server_keep);
        self.reset_optimizers();
        Ok(())
    }

    /// One exchange of the standard protocol: embeddings up, server update,
    /// embedding gradients down, party updates. Returns the batch loss.
    pub fn train_step(
        &mut self,
        batch: &[usize],
        loss: LossKind,
        regularized: Option<&GroupLassoStep>,
    ) -> Result<f64> {
        if let Some(reg) = regularized {
            if reg.lambdas.len() != self.parties.len() {
                return Err(Error::shape("group lasso lambdas", self.parties.len(), reg.lambdas.len()));
            }
        }
        let phase = self.phase;

        let mut traces = Vec::with_capacity(self.parties.len());
        let mut embeddings = Vec::with_capacity(self.parties.len());
        for p in &self.parties {
            let x = p.rows(batch)?;
            let (emb, trace) = p.net.forward(x.view())?;
            self.ledger.record_up(phase, emb.len() as u64 * BYTES_PER_SCALAR);
            embeddings.push(emb);
            traces.push(trace);
        }
        let views: Vec<_> = embeddings.iter().map(|e| e.view()).collect();
        let server_input = concatenate(Axis(1), &views)
            .map_err(|e| Error::Domain(format!("embedding concatenation: {e}")))?;

        let (out, server_trace) = self.server.forward(server_input.view())?;
        let labels = self.train_labels.select(batch);
        let (batch_loss, out_grad) = loss_and_grad(loss, out.view(), &labels)?;
        let server_grads = self.server.backward(&server_trace, out_grad.view())?;

        let embedding_grads = self.component_map().split_columns(server_grads.input.view());
        for g in &embedding_grads {
            self.ledger.record_down(phase, g.len() as u64 * BYTES_PER_SCALAR);
        }
        self.ledger.record_round(phase);

        self.server_optimizer.step(&mut self.server, &server_grads)?;

        for (m, ((p, trace), g)) in self
            .parties
            .iter_mut()
            .zip(&traces)
            .zip(&embedding_grads)
            .enumerate()
        {
            let mut grads = p.net.backward(trace, g.view())?;
            if let Some(alive) = &p.alive {
                grads.zero_dead_inputs(alive);
            }
            match regularized {
                Some(reg) => {
                    sgd_step(&mut p.net, &grads, reg.learning_rate)?;
                    prox_group_lasso(&mut p.net, reg.lambdas[m], reg.learning_rate);
                }
                None => p.optimizer.step(&mut p.net, &grads)?,
            }
        }
        Ok(batch_loss)
    }

    /// Runs one epoch of [`train_step`](Self::train_step) and returns the
    /// mean batch loss.
    pub fn train_epoch(
        &mut self,
        plan: &BatchPlan,
        epoch: u64,
        loss: LossKind,
        regularized: Option<&GroupLassoStep>,
    ) -> Result<f64> {
        let batches = plan.epoch(epoch);
        let mut total = 0.0;
        for b in &batches {
            total += self.train_step(b, loss, regularized)?;
        }
        Ok(total / batches.len().max(1) as f64)
    }

    /// Full-model outputs on a split. Out-of-band: never charged.
    pub fn predict(&self, split: DataSplit) -> Result<Array2<f64>> {
        let embeddings = self
            .parties
            .iter()
            .map(|p| p.net.predict(p.shard(split).view()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = embeddings.iter().map(|e| e.view()).collect();
        let input = concatenate(Axis(1), &views)
            .map_err(|e| Error::Domain(format!("embedding concatenation: {e}")))?;
        self.server.predict(input.view())
    }

    pub fn evaluate(&self, split: DataSplit, loss: LossKind) -> Result<Evaluation> {
        let out = self.predict(split)?;
        let labels = match split {
            DataSplit::Train => &self.train_labels,
            DataSplit::Test => &self.test_labels,
        };
        let (value, _) = loss_and_grad(loss, out.view(), labels)?;
        Ok(Evaluation {
            loss: value,
            accuracy: accuracy(out.view(), labels),
        })
    }
}

pub(crate) fn sgd_step(net: &mut DenseNetwork, grads: &GradientSet, lr: f64) -> Result<()> {
    OptimizerState::new(OptimizerConfig::sgd(lr), net).step(net, grads)
}

/// Free-function form of [`VflSystem::train_step`].
pub fn vfl_train_step(
    system: &mut VflSystem,
    batch: &[usize],
    loss: LossKind,
    regularized: Option<&GroupLassoStep>,
) -> Result<f64> {
    system.train_step(batch, loss, regularized)
}

pub fn party_embed(system: &mut VflSystem, m: usize, rows: &[usize], record: bool) -> Result<Array2<f64>> {
    system.party_embed(m, rows, record)
}

pub fn evaluate(system: &VflSystem, split: DataSplit, loss: LossKind) -> Result<Evaluation> {
    system.evaluate(split, loss)
}
