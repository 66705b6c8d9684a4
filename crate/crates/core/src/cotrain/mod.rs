//! Co-training between the two classifiers.
//!
//! The session classifier acts as a two-level policy: first join-or-open
//! (`π_new = p_t(C_i, m_i)`), then which session to join (the session scores
//! `p_t(T^k, m_i)` normalised by their sum). Each step is rewarded by the pair
//! classifier and by speaker identity and the policy is updated with
//! REINFORCE. Sessions predicted by the refined policy yield new positive
//! pairs for the pair classifier.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, Partition};
use crate::encoder::{log_sigmoid, sigmoid, Adam, EncoderParams, Graph, GradientTape};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::pair_model::{
    eval_pair_f1, gold_pairs, train_pair, MsgRef, PairDataset, PairInstance, PairModel, PairSource,
};
use crate::session_model::{disentangle_e2e, DecodeMode, SessionModel};
use crate::stopwords::is_stopword;
use crate::train::TrainConfig;
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the pair-classifier reward against the speaker reward.
    pub gamma: f64,
    /// Subtract a running mean of rewards.
    pub baseline: bool,
    pub baseline_momentum: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 0.6,
            baseline: true,
            baseline_momentum: 0.95,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(Error::Config("baseline_momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarvestConfig {
    /// `M`: how many preceding session-mates each message is paired with.
    pub lookback: usize,
    /// Minimum number of shared non-stopword tokens.
    pub min_overlap: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            lookback: 3,
            min_overlap: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// `a_new = 0`: open a new session.
    New,
    /// `a_new = 1, a_t = k`: join existing session `k` (0-based).
    Join(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionChoice {
    /// Chosen session, 0-based.
    pub session: usize,
    /// Categorical over existing sessions.
    pub probs: Vec<f64>,
    pub log_prob: f64,
}

impl SessionChoice {
    pub(crate) fn from_logits(session: usize, logits: &[f64]) -> Self {
        let q: Vec<f64> = logits.iter().map(|&x| sigmoid(x)).collect();
        let total: f64 = q.iter().sum();
        SessionChoice {
            session,
            probs: q.iter().map(|x| x / total).collect(),
            log_prob: (log_sigmoid(logits[session]) - total.ln()).min(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub position: usize,
    /// `a_new`: true when the message joins an existing session.
    pub joined: bool,
    /// `p_t(C_i, m_i)`.
    pub p_join: f64,
    pub log_prob_new: f64,
    pub target: Option<SessionChoice>,
    pub reward_m: f64,
    pub reward_s: f64,
    pub reward: f64,
}

impl Step {
    pub(crate) fn new(
        position: usize,
        joined: bool,
        p_join: f64,
        log_prob_new: f64,
        target: Option<SessionChoice>,
    ) -> Self {
        Step {
            position,
            joined,
            p_join,
            log_prob_new,
            target,
            reward_m: 0.0,
            reward_s: 0.0,
            reward: 0.0,
        }
    }

    pub fn action(&self) -> Action {
        match &self.target {
            Some(t) if self.joined => Action::Join(t.session),
            _ => Action::New,
        }
    }

    /// `log π_new(a_new) + 1{a_new = 1} · log π_t(a_t)`.
    pub fn log_prob(&self) -> f64 {
        self.log_prob_new + self.target.as_ref().map_or(0.0, |t| t.log_prob)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub conv_id: String,
    pub steps: Vec<Step>,
    pub partition: Partition,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// `r_m`. `probs[j]` is `F_m(m_i, m_j)` for each earlier message `j`, and
/// `labels[j]` its session id (1-based).
pub fn message_reward(probs: &[f64], labels: &[usize], action: Action) -> f64 {
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    match action {
        Action::New => -mean(&mut probs.iter().copied()),
        Action::Join(k) => mean(
            &mut probs
                .iter()
                .zip(labels)
                .filter(|&(_, &l)| l == k + 1)
                .map(|(&p, _)| p),
        ),
    }
}

/// `r_S`: −1 for opening a session although the speaker already spoke, +1 for
/// joining a session the speaker is in, 0 otherwise.
pub fn speaker_reward(speakers: &[&str], labels: &[usize], speaker: &str, action: Action) -> f64 {
    match action {
        Action::New if speakers.contains(&speaker) => -1.0,
        Action::Join(k)
            if speakers
                .iter()
                .zip(labels)
                .any(|(&s, &l)| l == k + 1 && s == speaker) =>
        {
            1.0
        }
        _ => 0.0,
    }
}

pub fn total_reward(r_m: f64, r_s: f64, config: &RewardConfig) -> f64 {
    config.gamma * r_m + (1.0 - config.gamma) * r_s
}

/// Fills in the rewards of every step given the pair-probability matrix of
/// the conversation.
pub fn assign_rewards(
    episode: &mut Episode,
    conv: &Conversation,
    pair_probs: &[Vec<f64>],
    config: &RewardConfig,
) {
    let labels = episode.partition.labels();
    let speakers: Vec<&str> = conv.messages.iter().map(|m| m.speaker.as_str()).collect();
    for step in &mut episode.steps {
        let i = step.position;
        let action = step.action();
        step.reward_m = message_reward(&pair_probs[i][..i], &labels[..i], action);
        step.reward_s = speaker_reward(&speakers[..i], &labels[..i], speakers[i], action);
        step.reward = total_reward(step.reward_m, step.reward_s, config);
    }
}

/// Samples one episode with the session classifier and scores it.
pub fn run_episode(
    session: &SessionModel,
    pair: &PairModel,
    conv: &Conversation,
    config: &RewardConfig,
    seed: u64,
) -> Result<Episode> {
    run_episode_with(session, &pair.prob_matrix(conv), conv, config, seed)
}

pub(crate) fn run_episode_with(
    session: &SessionModel,
    pair_probs: &[Vec<f64>],
    conv: &Conversation,
    config: &RewardConfig,
    seed: u64,
) -> Result<Episode> {
    if conv.is_empty() {
        return Err(Error::invalid(format!("conversation {} is empty", conv.conv_id)));
    }
    let (_, episode) = disentangle_e2e(session, conv, DecodeMode::Sample { seed });
    let mut episode = episode.expect("sample mode records an episode");
    assign_rewards(&mut episode, conv, pair_probs, config);
    Ok(episode)
}

/// Members of each session among the messages before `i`.
fn sessions_before(labels: &[usize], i: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (j, &l) in labels[..i].iter().enumerate() {
        if l > out.len() {
            out.resize(l, Vec::new());
        }
        out[l - 1].push(j);
    }
    out
}


/// `Σ_steps (r_i − b) · log π(a_i)` for one episode under `params`, scaled by
/// `scale`; with a tape, its gradient is accumulated too.
fn episode_surrogate(
    params: &EncoderParams,
    ids: &[Vec<u32>],
    episode: &Episode,
    baseline: f64,
    scale: f64,
    tape: Option<&mut GradientTape>,
) -> f64 {
    let mut graph: Graph<usize> = Graph::new(params);
    let slots: Vec<usize> = ids
        .iter()
        .enumerate()
        .map(|(p, ids)| graph.message(p, ids))
        .collect();
    let labels = episode.partition.labels();
    let mut value = 0.0;
    let mut pending = Vec::new();
    for step in &episode.steps {
        let i = step.position;
        let w = step.reward - baseline;
        if w == 0.0 {
            continue;
        }
        let context = slots[..i].to_vec();
        let (x, act) = graph.session_logit(&context, slots[i]);
        let (lp, dlp) = if step.joined {
            (log_sigmoid(x), 1.0 - sigmoid(x))
        } else {
            (log_sigmoid(-x), -sigmoid(x))
        };
        value += w * lp;
        pending.push((context, slots[i], act, w * dlp));
        if let Some(choice) = step.target.as_ref().filter(|_| step.joined) {
            let members: Vec<Vec<usize>> = sessions_before(labels, i)
                .into_iter()
                .map(|s| s.into_iter().map(|j| slots[j]).collect())
                .collect();
            let scored: Vec<_> = members
                .iter()
                .map(|m| graph.session_logit(m, slots[i]))
                .collect();
            let q: Vec<f64> = scored.iter().map(|(x, _)| sigmoid(*x)).collect();
            let total: f64 = q.iter().sum();
            let a = choice.session;
            value += w * (log_sigmoid(scored[a].0) - total.ln());
            for (k, ((_, act), m)) in scored.into_iter().zip(members).enumerate() {
                let mut d = -q[k] * (1.0 - q[k]) / total;
                if k == a {
                    d += 1.0 - q[a];
                }
                pending.push((m, slots[i], act, w * d));
            }
        }
    }
    if let Some(tape) = tape {
        for (members, cand, act, g) in pending {
            graph.backward_session_logit(&members, cand, &act, g * scale, tape);
        }
        graph.finish(tape);
    }
    value * scale
}

fn episode_ids(vocab: &Vocab, conv: &Conversation) -> Vec<Vec<u32>> {
    conv.messages.iter().map(|m| vocab.message_ids(m)).collect()
}

fn check_episodes(convs: &[&Conversation], episodes: &[Episode]) -> Result<()> {
    if convs.len() != episodes.len() {
        return Err(Error::Mismatch(format!(
            "{} conversations for {} episodes",
            convs.len(),
            episodes.len()
        )));
    }
    for (c, e) in convs.iter().zip(episodes) {
        if c.conv_id != e.conv_id || c.len() != e.partition.len() {
            return Err(Error::Mismatch(format!(
                "episode {} does not belong to conversation {}",
                e.conv_id, c.conv_id
            )));
        }
    }
    Ok(())
}

/// REINFORCE surrogate `(1/|E|) Σ_e Σ_i (r_i − b) · log π(a_i)` on frozen
/// episodes. Its gradient is the policy-gradient estimate.
pub fn surrogate_objective(
    params: &EncoderParams,
    vocab: &Vocab,
    convs: &[&Conversation],
    episodes: &[Episode],
    baseline: f64,
) -> Result<f64> {
    check_episodes(convs, episodes)?;
    let scale = 1.0 / episodes.len().max(1) as f64;
    Ok(convs
        .iter()
        .zip(episodes)
        .map(|(c, e)| episode_surrogate(params, &episode_ids(vocab, c), e, baseline, scale, None))
        .sum())
}

/// Gradient of [`surrogate_objective`] with respect to `params`.
pub fn surrogate_gradient(
    params: &EncoderParams,
    vocab: &Vocab,
    convs: &[&Conversation],
    episodes: &[Episode],
    baseline: f64,
) -> Result<GradientTape> {
    check_episodes(convs, episodes)?;
    let mut tape = GradientTape::for_params(params);
    let scale = 1.0 / episodes.len().max(1) as f64;
    for (c, e) in convs.iter().zip(episodes) {
        episode_surrogate(params, &episode_ids(vocab, c), e, baseline, scale, Some(&mut tape));
    }
    Ok(tape)
}

/// Policy-gradient optimiser state: Adam plus the running reward baseline.
#[derive(Clone, Debug)]
pub struct ReinforceTrainer {
    adam: Adam,
    config: RewardConfig,
    baseline: Option<f64>,
}

impl ReinforceTrainer {
    pub fn new(params: &EncoderParams, lr: f64, config: RewardConfig) -> Self {
        ReinforceTrainer {
            adam: Adam::new(params, lr),
            config,
            baseline: None,
        }
    }

    /// Current baseline `b` (0 when disabled or before the first update).
    pub fn baseline(&self) -> f64 {
        if self.config.baseline {
            self.baseline.unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// One ascent step on the surrogate; returns the mean step reward.
    pub fn update(
        &mut self,
        model: &mut SessionModel,
        convs: &[&Conversation],
        episodes: &[Episode],
    ) -> Result<f64> {
        if episodes.is_empty() {
            return Err(Error::invalid("reinforce update needs at least one episode"));
        }
        let steps: Vec<f64> = episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.reward))
            .collect();
        let mean = steps.iter().sum::<f64>() / steps.len().max(1) as f64;
        if self.config.baseline && self.baseline.is_none() && !steps.is_empty() {
            self.baseline = Some(mean);
        }
        let mut tape =
            surrogate_gradient(&model.encoder, &model.vocab, convs, episodes, self.baseline())?;
        tape.scale(-1.0);
        self.adam.step(&mut model.encoder, &tape);
        if let (Some(b), false) = (self.baseline.as_mut(), steps.is_empty()) {
            let mom = self.config.baseline_momentum;
            *b = mom * *b + (1.0 - mom) * mean;
        }
        Ok(mean)
    }
}

/// A single REINFORCE step from fresh optimiser state.
pub fn reinforce_update(
    model: &mut SessionModel,
    convs: &[&Conversation],
    episodes: &[Episode],
    lr: f64,
    config: &RewardConfig,
) -> Result<f64> {
    ReinforceTrainer::new(&model.encoder, lr, config.clone()).update(model, convs, episodes)
}

fn content_tokens(m: &Message) -> HashSet<&str> {
    m.tokens
        .iter()
        .map(String::as_str)
        .filter(|t| !is_stopword(t))
        .collect()
}

/// Number of distinct non-stopword tokens the two messages share.
pub fn content_overlap(a: &Message, b: &Message) -> usize {
    let ta = content_tokens(a);
    content_tokens(b).intersection(&ta).count()
}

/// Positive pairs from predicted sessions: each message with its up to `M`
/// closest preceding session-mates, kept when they share at least
/// `min_overlap` content tokens.
pub fn harvest_pairs(
    corpus: &Corpus,
    partitions: &[Partition],
    config: &HarvestConfig,
) -> Result<PairDataset> {
    if partitions.len() != corpus.len() {
        return Err(Error::Mismatch(format!(
            "{} partitions for {} conversations",
            partitions.len(),
            corpus.len()
        )));
    }
    let mut ds = PairDataset::default();
    for (c, (conv, part)) in corpus.conversations.iter().zip(partitions).enumerate() {
        if part.len() != conv.len() {
            return Err(Error::Mismatch(format!(
                "partition for {} covers {} of {} messages",
                conv.conv_id,
                part.len(),
                conv.len()
            )));
        }
        for session in part.sessions() {
            for (t, &i) in session.iter().enumerate() {
                for &j in &session[t.saturating_sub(config.lookback)..t] {
                    if content_overlap(&conv.messages[j], &conv.messages[i]) >= config.min_overlap {
                        ds.instances.push(PairInstance {
                            a: MsgRef::Corpus { conv: c, pos: j },
                            b: MsgRef::Corpus { conv: c, pos: i },
                            label: true,
                            src: PairSource::Harvested,
                        });
                    }
                }
            }
        }
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CotrainConfig {
    pub iterations: usize,
    pub reward: RewardConfig,
    pub harvest: HarvestConfig,
    /// Passes over the corpus per iteration.
    pub rl_passes: usize,
    pub episodes_per_batch: usize,
    pub rl_lr: f64,
    /// Retraining of the pair classifier on `D_m ∪ D_m^new` from a fresh
    /// initialisation drawn with this config's seed.
    pub pair_retrain: TrainConfig,
    /// Stop when the monitored score (dev Shen-F, else mean reward) fails to
    /// improve, keeping the best iteration.
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for CotrainConfig {
    fn default() -> Self {
        CotrainConfig {
            iterations: 3,
            reward: RewardConfig::default(),
            harvest: HarvestConfig::default(),
            rl_passes: 2,
            episodes_per_batch: 16,
            rl_lr: 1e-5,
            pair_retrain: TrainConfig {
                epochs: 3,
                lr: 1e-5,
                batch_size: 64,
                seed: 0,
            },
            early_stop: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    pub mean_reward: f64,
    pub harvested_pairs: usize,
    /// Dev pair F1 ×100, when dev gold is available.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pair_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricReport>,
}

#[derive(Clone, Debug)]
pub struct CotrainOutcome {
    pub pair: PairModel,
    pub session: SessionModel,
    pub reports: Vec<IterationReport>,
}

pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Dev-set pair F1 (×100) and disentanglement metrics, when `dev` has gold.
pub fn dev_scores(
    pair: &PairModel,
    session: &SessionModel,
    dev: &Corpus,
) -> Result<(Option<f64>, Option<MetricReport>)> {
    if !dev.has_gold() || dev.is_empty() {
        return Ok((None, None));
    }
    let f1 = 100.0 * eval_pair_f1(pair, dev, &gold_pairs(dev)?).f1;
    let preds: Vec<Partition> = dev.conversations.iter().map(|c| session.disentangle(c)).collect();
    let metrics = evaluate(&preds, &dev.golds()?)?;
    Ok((Some(f1), Some(metrics)))
}

/// REINFORCE passes over `corpus` from `start`; returns the refined model and
/// the mean step reward.
pub fn reinforce_corpus(
    start: &SessionModel,
    pair: &PairModel,
    corpus: &Corpus,
    config: &CotrainConfig,
    iteration: usize,
) -> Result<(SessionModel, f64)> {
    if config.episodes_per_batch == 0 {
        return Err(Error::Config("episodes_per_batch must be positive".into()));
    }
    let mut model = start.clone();
    let probs: Vec<Vec<Vec<f64>>> = corpus.conversations.iter().map(|c| pair.prob_matrix(c)).collect();
    let mut trainer = ReinforceTrainer::new(&model.encoder, config.rl_lr, config.reward.clone());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut reward_sum = 0.0;
    let mut step_count = 0usize;
    for pass in 0..config.rl_passes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[iteration as u64, pass as u64]));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.episodes_per_batch) {
            let convs: Vec<&Conversation> = batch.iter().map(|&c| &corpus.conversations[c]).collect();
            let episodes = batch
                .iter()
                .map(|&c| {
                    let seed = mix_seed(config.seed, &[iteration as u64, pass as u64, c as u64, 1]);
                    run_episode_with(&model, &probs[c], &corpus.conversations[c], &config.reward, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            for e in &episodes {
                reward_sum += e.total_reward();
                step_count += e.steps.len();
            }
            trainer.update(&mut model, &convs, &episodes)?;
        }
    }
    Ok((model, reward_sum / step_count.max(1) as f64))
}

/// Runs the co-training loop. `session_init` is the classifier trained on
/// the session pseudo data and `pair_base` the one trained on `d_m`. Every
/// iteration restarts the session classifier from `session_init` and
/// retrains the pair classifier from scratch on `d_m` plus the harvested
/// pairs.
pub fn cotrain_loop(
    train: &Corpus,
    dev: Option<&Corpus>,
    pair_base: &PairModel,
    session_init: &SessionModel,
    d_m: &PairDataset,
    config: &CotrainConfig,
) -> Result<CotrainOutcome> {
    config.reward.validate()?;
    let mut pair = pair_base.clone();
    let mut session = session_init.clone();
    let mut reports = Vec::new();
    let mut best: Option<(f64, PairModel, SessionModel)> = None;
    for iter in 1..=config.iterations {
        let (refined, mean_reward) = reinforce_corpus(session_init, &pair, train, config, iter)?;
        let predicted: Vec<Partition> = train.conversations.iter().map(|c| refined.disentangle(c)).collect();
        let harvested = harvest_pairs(train, &predicted, &config.harvest)?;
        let harvested_pairs = harvested.len();
        let mut data = d_m.clone();
        data.extend(harvested);
        let retrain = &config.pair_retrain;
        let mut retrained = PairModel::new(pair.vocab.clone(), pair.encoder.dim, retrain.seed);
        train_pair(&mut retrained, train, &data, retrain)?;
        pair = retrained;
        session = refined;
        let (pair_f1, metrics) = match dev {
            Some(dev) => dev_scores(&pair, &session, dev)?,
            None => (None, None),
        };
        log::info!(
            "iteration {iter}: mean reward {mean_reward:.4}, harvested {harvested_pairs}, pair F1 {pair_f1:?}"
        );
        let monitored = metrics.as_ref().map_or(mean_reward, |m| m.shen_f);
        reports.push(IterationReport {
            iter,
            mean_reward,
            harvested_pairs,
            pair_f1,
            metrics,
        });
        if config.early_stop {
            match &best {
                Some((score, ..)) if monitored <= *score => {
                    log::info!("no improvement at iteration {iter}; stopping");
                    break;
                }
                _ => best = Some((monitored, pair.clone(), session.clone())),
            }
        }
    }
    if let Some((_, p, s)) = best {
        pair = p;
        session = s;
    }
    Ok(CotrainOutcome {
        pair,
        session,
        reports,
    })
}
