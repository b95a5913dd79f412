//! Round-by-round simulator of the blockchain-assisted training protocol.
//!
//! One round = one block: every honest client trains locally and uploads
//! its model to a per-round cache pool; lazy clients copy a round-k model
//! from that pool and upload a noise-disguised version instead of training;
//! the network mines a block committing the pool's payload; every client
//! verifies the block, a strict majority must accept; then every client
//! downloads the pool and aggregates locally. The k-th completed round is
//! the ledger's block index k−1.
//!
//! Time accounting is simulated: a round charges `τ·α` for training (the
//! synchronous barrier waits for the slowest honest client) plus exactly
//! `β` for mining, in both mining modes — the analytic mode's sampled race
//! duration is recorded in the trace but the budget is charged the
//! expectation, keeping `K·τ·α + K·β ≤ t_sum` an exact invariant.
//!
//! Determinism: all randomness flows from named per-purpose streams of the
//! master seed ([`crate::rng::stream`]): "partition" for the data split,
//! "init" for the shared starting model, "train"/client for shuffles,
//! "lazy"/client for victim picks and disguising noise, "mining" for the
//! block race. Identical config + datasets reproduce identical bits.

pub mod metrics;

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{
    block_hash, majority_accept, mine_puzzle, sample_block_time, verify_block_with_digest,
    Block, CachePool, Hash, Ledger, Mined, DEFAULT_MAX_PAYLOAD,
};
use crate::data::{partition_non_iid, Shard};
use crate::error::{Error, Result};
use crate::fl::{aggregate, evaluate, forward_loss, init_model, local_train, TrainOpts};
use crate::rng::stream;
use crate::{Dataset, Model, Real};

pub use metrics::{
    metrics_from_csv, metrics_to_csv, traces_from_jsonl, traces_to_jsonl, MetricsRow,
    RoundTrace, UploadRecord, METRICS_HEADER,
};

/// How blocks get mined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MiningMode {
    /// Sample the winner and race duration from the exponential model;
    /// blocks carry nonce 0 and difficulty 0.
    #[default]
    Analytic,
    /// Real leading-zero-bits nonce search; every client races from its own
    /// random starting nonce and the fewest attempts wins.
    Puzzle { difficulty: u32 },
}

/// Full description of one experiment. Serializes to the JSON config files
/// the command-line harness consumes; unknown fields are rejected so typos
/// fail loudly instead of silently running defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Total clients N; ids run 0..N.
    pub n_clients: u32,
    /// How many clients are lazy (they occupy the highest ids).
    #[serde(default)]
    pub lazy_clients: u32,
    /// Rounds to run = blocks to mine (K).
    pub blocks: u32,
    /// Local passes per round. Omit to derive the largest value the budget
    /// affords: ⌊(t_sum − Kβ)/(Kα)⌋.
    #[serde(default)]
    pub tau: Option<u32>,
    /// Simulated time for one local pass over a shard.
    pub alpha: f64,
    /// Simulated (expected) time to mine one block.
    pub beta: f64,
    /// Total simulated time budget.
    pub t_sum: f64,
    /// Variance of the disguising noise lazy clients add.
    #[serde(default)]
    pub sigma2: f64,
    /// SGD learning rate.
    pub eta: f64,
    /// Hidden width of the model.
    pub hidden: usize,
    /// Mini-batch size for local training.
    pub batch_size: usize,
    /// Samples per client shard.
    pub shard_size: usize,
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
    #[serde(default)]
    pub mining: MiningMode,
    /// Where the harness should look for dataset files; the simulator core
    /// itself never reads it (datasets arrive as arguments).
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be at least 1".into()));
        }
        if self.lazy_clients >= self.n_clients && self.lazy_clients > 0 {
            return Err(Error::Config(format!(
                "{} lazy clients need at least one honest client to copy from (n_clients = {})",
                self.lazy_clients, self.n_clients
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("t_sum", self.t_sum),
            ("eta", self.eta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::Config(format!(
                "sigma2 must be finite and nonnegative, got {}",
                self.sigma2
            )));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.shard_size == 0 {
            return Err(Error::Config(
                "hidden, batch_size, and shard_size must all be at least 1".into(),
            ));
        }
        if let Some(tau) = self.tau {
            if tau == 0 {
                return Err(Error::Config("explicit tau must be at least 1".into()));
            }
            let spend =
                f64::from(self.blocks) * (f64::from(tau) * self.alpha + self.beta);
            if spend > self.t_sum {
                return Err(Error::Config(format!(
                    "explicit tau = {tau} spends {spend} of a {} budget over {} rounds",
                    self.t_sum, self.blocks
                )));
            }
        }
        if let MiningMode::Puzzle { difficulty } = self.mining {
            if difficulty > 64 {
                return Err(Error::Config(format!(
                    "puzzle difficulty {difficulty} exceeds the 64-bit cap"
                )));
            }
        }
        Ok(())
    }

    /// The τ this config runs at: the explicit value if given, otherwise
    /// the largest the budget affords.
    pub fn effective_tau(&self) -> Result<u32> {
        match self.tau {
            Some(tau) => Ok(tau),
            None => derive_tau(self.t_sum, self.blocks, self.alpha, self.beta),
        }
    }

    /// Content hash of the config; runs keyed by (spec_hash, seed) are
    /// reproducible byte-for-byte.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::util::to_hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// Largest per-round local-pass count the budget affords at block count
/// `k`: ⌊(t_sum − kβ)/(kα)⌋. Rejects schedules where even one pass per
/// round would overrun.
pub fn derive_tau(t_sum: f64, k: u32, alpha: f64, beta: f64) -> Result<u32> {
    if k == 0 {
        return Err(Error::Config("block count must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be finite and positive, got {alpha}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Config(format!("beta must be finite and nonnegative, got {beta}")));
    }
    if !(t_sum.is_finite() && t_sum > 0.0) {
        return Err(Error::Config(format!("t_sum must be finite and positive, got {t_sum}")));
    }
    let kf = f64::from(k);
    let tau = ((t_sum - kf * beta) / (kf * alpha)).floor();
    if tau.is_nan() || tau < 1.0 {
        return Err(Error::InfeasibleBudget {
            k,
            alpha,
            beta,
            min_spend: kf * (alpha + beta),
            t_sum,
        });
    }
    if tau > f64::from(u32::MAX) {
        return Err(Error::Config(format!("derived tau = {tau} overflows the iteration counter")));
    }
    Ok(tau as u32)
}

/// What a lazy client uploads: the victim's model plus i.i.d. Gaussian
/// noise of the given variance on every coordinate. Zero variance is an
/// exact copy and draws nothing from the stream, so victim choices stay
/// aligned across noise settings.
pub fn lazy_update<R: Rng + ?Sized>(victim: &Model, sigma2: Real, rng: &mut R) -> Result<Model> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::Config(format!(
            "sigma2 must be finite and nonnegative, got {sigma2}"
        )));
    }
    let mut out = victim.clone();
    if sigma2 == 0.0 {
        return Ok(out);
    }
    let sd = sigma2.sqrt();
    for w in out.as_mut_slice() {
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        *w += sd * n;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Honest,
    Lazy,
}

struct ClientState {
    id: u32,
    role: Role,
    model: Model,
    train_rng: ChaCha8Rng,
    lazy_rng: ChaCha8Rng,
}

/// Everything a finished (or interrupted) run hands back.
pub struct SimOutput {
    pub metrics: Vec<MetricsRow>,
    pub traces: Vec<RoundTrace>,
    pub final_model: Model,
    pub ledger: Ledger,
    pub tau: u32,
    pub spec_hash: String,
}

/// A run in progress. Owns all client state; shards and RNG streams are
/// fixed at construction so rounds are pure functions of prior state.
pub struct Simulation<'a> {
    cfg: SimConfig,
    tau: u32,
    test: &'a Dataset,
    shards: Vec<Shard<Real>>,
    clients: Vec<ClientState>,
    mining_rng: ChaCha8Rng,
    ledger: Ledger,
    sim_time: f64,
    metrics: Vec<MetricsRow>,
    traces: Vec<RoundTrace>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &SimConfig, train: &Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if test.is_empty() {
            return Err(Error::Empty("test set"));
        }
        let tau = cfg.effective_tau()?;
        let shards = partition_non_iid(train, cfg.n_clients as usize, cfg.shard_size, cfg.seed)?;
        let init = init_model::<Real>(cfg.hidden, cfg.seed);
        let honest = cfg.n_clients - cfg.lazy_clients;
        let clients = (0..cfg.n_clients)
            .map(|id| ClientState {
                id,
                role: if id < honest { Role::Honest } else { Role::Lazy },
                model: init.clone(),
                train_rng: stream(cfg.seed, "train", u64::from(id)),
                lazy_rng: stream(cfg.seed, "lazy", u64::from(id)),
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            tau,
            test,
            shards,
            clients,
            mining_rng: stream(cfg.seed, "mining", 0),
            ledger: Ledger::new(),
            sim_time: 0.0,
            metrics: Vec::new(),
            traces: Vec::new(),
        })
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn rounds_completed(&self) -> u32 {
        self.metrics.len() as u32
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn traces(&self) -> &[RoundTrace] {
        &self.traces
    }

    pub fn run_round(&mut self) -> Result<()> {
        self.run_round_with_hook(|_| {})
    }

    /// One full round. The hook runs after all uploads land and before the
    /// payload is committed — the window where storage corruption or an
    /// adversarial pool operator would act.
    pub fn run_round_with_hook<H: FnOnce(&mut CachePool)>(&mut self, hook: H) -> Result<()> {
        let round = self.rounds_completed() + 1;
        let block_index = u64::from(round - 1);
        let n = self.cfg.n_clients;
        let difficulty = match self.cfg.mining {
            MiningMode::Analytic => 0,
            MiningMode::Puzzle { difficulty } => difficulty,
        };

        let mut pool = CachePool::new(DEFAULT_MAX_PAYLOAD);
        let mut uploads: Vec<UploadRecord> = Vec::with_capacity(n as usize);

        // Step 1–2: honest clients train from the current global model and
        // upload, in client-id order.
        let opts = TrainOpts {
            tau: self.tau,
            eta: self.cfg.eta,
            batch_size: self.cfg.batch_size,
            alpha: self.cfg.alpha,
        };
        for i in 0..self.clients.len() {
            if self.clients[i].role != Role::Honest {
                continue;
            }
            let shard = &self.shards[i];
            let client = &mut self.clients[i];
            let report = local_train(&mut client.model, shard, &opts, &mut client.train_rng)?;
            pool.upload(client.id, client.model.canonical_bytes())?;
            uploads.push(UploadRecord {
                client: client.id,
                digest: client.model.digest_hex(),
                lazy: false,
                victim: None,
                train_cost: report.wall_iterations_cost,
            });
        }

        // Lazy clients fill the pool second, so the models they copy are
        // this round's trained uploads.
        let honest_ids: Vec<u32> = self
            .clients
            .iter()
            .filter(|c| c.role == Role::Honest)
            .map(|c| c.id)
            .collect();
        for i in 0..self.clients.len() {
            if self.clients[i].role != Role::Lazy {
                continue;
            }
            let client = &mut self.clients[i];
            let victim = honest_ids[client.lazy_rng.gen_range(0..honest_ids.len())];
            let victim_model = Model::from_canonical_bytes(&pool.download(victim)?.bytes)?;
            client.model = lazy_update(&victim_model, self.cfg.sigma2, &mut client.lazy_rng)?;
            pool.upload(client.id, client.model.canonical_bytes())?;
            uploads.push(UploadRecord {
                client: client.id,
                digest: client.model.digest_hex(),
                lazy: true,
                victim: Some(victim),
                train_cost: 0.0,
            });
        }
        uploads.sort_by_key(|u| u.client);

        hook(&mut pool);

        // Step 3–4: assemble the payload and mine. Assembly re-verifies
        // every checksum, so pool corruption aborts the round here.
        for id in 0..n {
            if !pool.contains(id) {
                return Err(Error::MissingUpload { client: id });
            }
        }
        let payload = pool.payload_bytes()?;
        let payload_digest: Hash = Sha256::digest(&payload).into();
        let prev_hash = self.ledger.last_hash();

        let (winner, nonce, hash, mine_time, mine_attempts) = match self.cfg.mining {
            MiningMode::Analytic => {
                let (winner, elapsed) = sample_block_time(self.cfg.beta, n, &mut self.mining_rng);
                let hash = block_hash(block_index, &prev_hash, &payload_digest, winner, 0);
                (winner, 0u64, hash, elapsed, None)
            }
            MiningMode::Puzzle { difficulty } => {
                let mut best: Option<(u32, Mined)> = None;
                for id in 0..n {
                    let start: u64 = self.mining_rng.gen();
                    let mined =
                        mine_puzzle(block_index, &prev_hash, &payload_digest, id, difficulty, start)?;
                    if best.as_ref().is_none_or(|(_, b)| mined.attempts < b.attempts) {
                        best = Some((id, mined));
                    }
                }
                let (id, mined) = best.expect("n_clients >= 1");
                (id, mined.nonce, mined.hash, self.cfg.beta, Some(mined.attempts))
            }
        };

        let candidate = Block {
            index: block_index,
            prev_hash,
            payload_digest,
            miner: winner,
            nonce,
            hash,
        };

        // Step 5: every client checks the candidate against the payload
        // digest and its own chain tip; a strict majority must accept.
        let votes: Vec<bool> = self
            .clients
            .iter()
            .map(|_| verify_block_with_digest(&candidate, &prev_hash, &payload_digest, difficulty))
            .collect();
        let accepts = votes.iter().filter(|&&v| v).count();
        if !majority_accept(&votes) {
            return Err(Error::MajorityRejected {
                round,
                accepts,
                votes: votes.len(),
            });
        }
        self.ledger.append(candidate.clone());

        // Step 6: everyone downloads the pool and aggregates locally.
        let entries = pool.download_all()?;
        let mut models = Vec::with_capacity(entries.len());
        for e in &entries {
            models.push(Model::from_canonical_bytes(&e.bytes)?);
        }
        let global = aggregate(&models)?;
        let global_digest = global.digest_hex();
        for c in &mut self.clients {
            c.model = global.clone();
        }

        // Time accounting and round metrics.
        let train_time = f64::from(self.tau) * self.cfg.alpha;
        let charged_time = train_time + self.cfg.beta;
        self.sim_time += charged_time;

        let total: usize = self.shards.iter().map(|s| s.len()).sum();
        let mut train_loss = 0.0;
        for s in &self.shards {
            let l = forward_loss(&global, s.images.view(), &s.labels)?;
            train_loss += (s.len() as f64 / total as f64) * l;
        }
        let eval = evaluate(&global, self.test.images.view(), &self.test.labels)?;
        let hash_hex = crate::util::to_hex(&candidate.hash);

        self.metrics.push(MetricsRow {
            k: round,
            sim_time: self.sim_time,
            tau: self.tau,
            train_loss,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            winner,
            block_hash_prefix: hash_hex[..8].to_string(),
        });
        self.traces.push(RoundTrace {
            round,
            block_index,
            uploads,
            winner,
            train_time,
            mine_time,
            mine_attempts,
            charged_time,
            global_digest,
        });
        Ok(())
    }

    /// Run every remaining round.
    pub fn run(&mut self) -> Result<()> {
        while self.rounds_completed() < self.cfg.blocks {
            self.run_round()?;
        }
        Ok(())
    }

    pub fn finish(self) -> SimOutput {
        let spec_hash = self.cfg.spec_hash();
        let final_model = self
            .clients
            .into_iter()
            .next()
            .expect("configs validate n_clients >= 1")
            .model;
        SimOutput {
            metrics: self.metrics,
            traces: self.traces,
            final_model,
            ledger: self.ledger,
            tau: self.tau,
            spec_hash,
        }
    }
}

/// Construct, run to completion, and collect.
pub fn run_simulation(cfg: &SimConfig, train: &Dataset, test: &Dataset) -> Result<SimOutput> {
    let mut sim = Simulation::new(cfg, train, test)?;
    sim.run()?;
    Ok(sim.finish())
}
