//! Small value-learning substrate: a ReLU feedforward network with hand-written
//! backpropagation, experience replay, an ε-greedy schedule, and DQN / double
//! DQN bootstrap targets.

use std::collections::VecDeque;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::MarketError;

/// Feedforward network: ReLU on hidden layers, identity on the output.
///
/// Weights of layer `l` are stored `[inputs, outputs]` so a batch of row
/// vectors multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Gradients with the same shapes as the network parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, MarketError> {
        let mut net = Self::zeros(dims)?;
        for w in &mut net.weights {
            let fan_in = w.nrows() as f64;
            let bound = (6.0 / fan_in).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            w.iter_mut().for_each(|x| *x = dist.sample(rng));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, MarketError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(MarketError::InvalidConfig(format!("network needs at least two non-empty layers, got {dims:?}")));
        }
        let weights = dims.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self { dims: dims.to_vec(), weights, biases })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), MarketError> {
        if flat.len() != self.param_count() {
            return Err(MarketError::Contract(format!("expected {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
            b.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, MarketError> {
        if state.len() != self.input_width() {
            return Err(MarketError::Contract(format!(
                "state width {} does not match network input {}",
                state.len(),
                self.input_width()
            )));
        }
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row vector");
        Ok(self.forward_batch(x).row(0).to_vec())
    }

    pub fn forward_batch(&self, states: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(states).pop().expect("output layer")
    }

    /// Layer outputs for every layer; element 0 is the input, hidden entries
    /// are post-activation, the last entry is the raw output.
    fn forward_cached(&self, states: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(states.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(w);
            z += b;
            if l != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error between `Q(s_i, a_i)` and `targets[i]`, with its
    /// gradient.
    pub fn loss_and_gradients(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients), MarketError> {
        let batch = states.nrows();
        if actions.len() != batch || targets.len() != batch {
            return Err(MarketError::Contract(format!(
                "batch of {batch} states with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        if states.ncols() != self.input_width() {
            return Err(MarketError::Contract("state width does not match network input".into()));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= self.output_width()) {
            return Err(MarketError::Contract(format!("action {a} out of range")));
        }
        let acts = self.forward_cached(states);
        let out = acts.last().expect("output layer");
        let scale = 2.0 / batch as f64;
        let mut delta = Array2::<f64>::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = out[[i, a]] - y;
            loss += err * err;
            delta[[i, a]] = scale * err;
        }
        loss /= batch as f64;

        let layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = acts[l].t().dot(&delta);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                // acts[l] is post-ReLU, positive exactly where the pre-activation was
                ndarray::Zip::from(&mut back).and(&acts[l]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok((loss, Gradients { weights: gw, biases: gb }))
    }
}

/// Parameter update rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, step: i32, m: Vec<f64>, v: Vec<f64> },
}

impl Optimizer {
    pub fn new(kind: &OptimizerKind, lr: f64, net: &Mlp) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let n = net.param_count();
                Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
            }
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) {
        match self {
            Optimizer::Sgd { lr } => {
                for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-*lr, g);
                }
                for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-*lr, g);
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                let mut k = 0;
                let mut update = |p: &mut f64, g: f64| {
                    m[k] = *beta1 * m[k] + (1.0 - *beta1) * g;
                    v[k] = *beta2 * v[k] + (1.0 - *beta2) * g * g;
                    *p -= *lr * (m[k] / c1) / ((v[k] / c2).sqrt() + *eps);
                    k += 1;
                };
                for l in 0..net.weights.len() {
                    ndarray::Zip::from(&mut net.weights[l]).and(&grads.weights[l]).for_each(|p, &g| update(p, g));
                    ndarray::Zip::from(&mut net.biases[l]).and(&grads.biases[l]).for_each(|p, &g| update(p, g));
                }
            }
        }
    }
}

/// One plain gradient-descent step on the squared TD error.
pub fn backward(
    net: &mut Mlp,
    states: ArrayView2<f64>,
    actions: &[usize],
    targets: &[f64],
    lr: f64,
) -> Result<f64, MarketError> {
    let (loss, grads) = net.loss_and_gradients(states, actions, targets)?;
    if !loss.is_finite() {
        return Err(MarketError::Divergence(format!("non-finite loss {loss}")));
    }
    Optimizer::Sgd { lr }.apply(net, &grads);
    Ok(loss)
}

/// Action-value network: the raw network output times a fixed value scale,
/// so returns in money units map to order-one training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub mlp: Mlp,
    pub value_scale: f64,
    pub seed: u64,
}

impl QNetwork {
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, MarketError> {
        Ok(self.mlp.forward(state)?.into_iter().map(|q| q * self.value_scale).collect())
    }

    pub fn q_values_batch(&self, states: ArrayView2<f64>) -> Array2<f64> {
        self.mlp.forward_batch(states) * self.value_scale
    }

    pub fn action_count(&self) -> usize {
        self.mlp.output_width()
    }

    /// Text checkpoint: a header with layer dims, seed and value scale, then
    /// one line per tensor.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("qnetwork v1\n");
        let dims: Vec<String> = self.mlp.dims.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "value_scale {:e}", self.value_scale);
        for (l, (w, b)) in self.mlp.weights.iter().zip(&self.mlp.biases).enumerate() {
            let ws: Vec<String> = w.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "w{l} {}", ws.join(" "));
            let bs: Vec<String> = b.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "b{l} {}", bs.join(" "));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, MarketError> {
        let bad = |msg: &str| MarketError::InvalidConfig(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("qnetwork v1") {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<Vec<String>, MarketError> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(&format!("expected `{name}`")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let dims: Vec<usize> =
            field("dims")?.iter().map(|d| d.parse().map_err(|_| bad("dims"))).collect::<Result<_, _>>()?;
        let seed: u64 = field("seed")?.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("seed"))?;
        let value_scale: f64 =
            field("value_scale")?.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("value_scale"))?;
        let mut mlp = Mlp::zeros(&dims)?;
        let parse_all = |v: Vec<String>| -> Result<Vec<f64>, MarketError> {
            v.iter().map(|x| x.parse::<f64>().map_err(|_| bad("tensor value"))).collect()
        };
        for l in 0..mlp.weights.len() {
            let w = parse_all(field(&format!("w{l}"))?)?;
            let b = parse_all(field(&format!("b{l}"))?)?;
            if w.len() != mlp.weights[l].len() || b.len() != mlp.biases[l].len() {
                return Err(bad("tensor size"));
            }
            mlp.weights[l].iter_mut().zip(w).for_each(|(p, x)| *p = x);
            mlp.biases[l].iter_mut().zip(b).for_each(|(p, x)| *p = x);
        }
        Ok(Self { mlp, value_scale, seed })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    /// Round profit in money units.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience store.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, entries: VecDeque::with_capacity(capacity.min(4096)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Uniform sample without replacement; `None` when fewer than `batch` entries.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch > self.entries.len() {
            return None;
        }
        let picks = rand::seq::index::sample(rng, self.entries.len(), batch);
        Some(picks.into_iter().map(|i| &self.entries[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub floor: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, floor: 0.01, decay: 0.995 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: u32) -> f64 {
        (self.start * self.decay.powi(episode as i32)).max(self.floor)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over `q_values`.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `reward + γ · max_a Q_target(s', a)`, or just the reward on terminal steps.
pub fn dqn_target(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    target: &QNetwork,
    gamma: f64,
) -> Result<f64, MarketError> {
    if terminal {
        return Ok(reward);
    }
    Ok(reward + gamma * max_of(&target.q_values(next_state)?))
}

/// Double-DQN target: the online network picks the next action, the target
/// network evaluates it.
pub fn ddqn_target(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Result<f64, MarketError> {
    if terminal {
        return Ok(reward);
    }
    let a = argmax(&online.q_values(next_state)?);
    Ok(reward + gamma * target.q_values(next_state)?[a])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub memory_size: usize,
    pub epsilon: EpsilonSchedule,
    pub target_sync: u64,
    /// Environment steps between gradient updates.
    pub train_every: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Money amount that maps to one unit of network output.
    pub value_scale: f64,
    pub train_episodes: u32,
    pub eval_episodes: u32,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            gamma: 0.95,
            memory_size: 10_000,
            epsilon: EpsilonSchedule::default(),
            target_sync: 100,
            train_every: 1,
            hidden: vec![64, 64],
            optimizer: OptimizerKind::Sgd,
            value_scale: 100.0,
            train_episodes: 1000,
            eval_episodes: 200,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), MarketError> {
        let err = |m: String| Err(MarketError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.memory_size < self.batch_size {
            return err("batch size must be positive and no larger than the replay memory".into());
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.floor) || e.floor > e.start {
            return err("epsilon start/floor must satisfy 0 <= floor <= start <= 1".into());
        }
        if !(e.decay > 0.0 && e.decay <= 1.0) {
            return err(format!("epsilon decay must lie in (0, 1], got {}", e.decay));
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return err("target_sync and train_every must be positive".into());
        }
        if self.hidden.contains(&0) {
            return err("hidden layers must be non-empty".into());
        }
        if !(self.value_scale > 0.0 && self.value_scale.is_finite()) {
            return err("value_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    Dqn,
    Ddqn,
}

/// Online/target network pair with replay memory.
#[derive(Clone, Debug)]
pub struct Learner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    optimizer: Optimizer,
    rule: TargetRule,
    hyper: Hyperparameters,
    steps: u64,
    updates: u64,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        rule: TargetRule,
        state_width: usize,
        actions: usize,
        hyper: &Hyperparameters,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self, MarketError> {
        let mut dims = vec![state_width];
        dims.extend(&hyper.hidden);
        dims.push(actions);
        let mlp = Mlp::new(&dims, rng)?;
        let online = QNetwork { mlp, value_scale: hyper.value_scale, seed };
        let optimizer = Optimizer::new(&hyper.optimizer, hyper.learning_rate, &online.mlp);
        Ok(Self {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(hyper.memory_size),
            optimizer,
            rule,
            hyper: hyper.clone(),
            steps: 0,
            updates: 0,
        })
    }

    pub fn rule(&self) -> TargetRule {
        self.rule
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Stores the transition and, once the buffer holds a full batch, takes
    /// one gradient step every `train_every` stored transitions. Returns the
    /// loss when an update happened.
    pub fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<Option<f64>, MarketError> {
        if !(t.reward.is_finite() && t.state.iter().chain(&t.next_state).all(|x| x.is_finite())) {
            return Err(MarketError::Contract("transition contains non-finite values".into()));
        }
        self.buffer.push(t);
        self.steps += 1;
        if self.buffer.len() < self.hyper.batch_size || self.steps % self.hyper.train_every != 0 {
            return Ok(None);
        }
        self.train_batch(rng).map(Some)
    }

    fn train_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64, MarketError> {
        let batch = self.buffer.sample(self.hyper.batch_size, rng).expect("buffer holds a batch");
        let width = self.online.mlp.input_width();
        let n = batch.len();
        let mut states = Array2::zeros((n, width));
        let mut next = Array2::zeros((n, width));
        for (i, t) in batch.iter().enumerate() {
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state[..]));
            next.row_mut(i).assign(&ndarray::ArrayView1::from(&t.next_state[..]));
        }
        let target_q = self.target.q_values_batch(next.view());
        let online_q = match self.rule {
            TargetRule::Ddqn => Some(self.online.q_values_batch(next.view())),
            TargetRule::Dqn => None,
        };
        let scale = self.online.value_scale;
        let gamma = self.hyper.gamma;
        let mut actions = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for (i, t) in batch.iter().enumerate() {
            let bootstrap = if t.terminal {
                0.0
            } else {
                let row = target_q.row(i);
                match &online_q {
                    None => max_of(row.as_slice().expect("contiguous")),
                    Some(oq) => row[argmax(oq.row(i).as_slice().expect("contiguous"))],
                }
            };
            actions.push(t.action);
            targets.push((t.reward + gamma * bootstrap) / scale);
        }
        let (loss, grads) = self.online.mlp.loss_and_gradients(states.view(), &actions, &targets)?;
        if !loss.is_finite() {
            return Err(MarketError::Divergence(format!("non-finite loss after {} updates", self.updates)));
        }
        self.optimizer.apply(&mut self.online.mlp, &grads);
        if !self.online.mlp.is_finite() {
            return Err(MarketError::Divergence(format!("non-finite parameters after {} updates", self.updates)));
        }
        self.updates += 1;
        if self.updates % self.hyper.target_sync == 0 {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_echoes_input_prefix() {
        let mut net = Mlp::zeros(&[3, 2]).unwrap();
        net.weights_mut()[0] = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert_eq!(net.forward(&[0.5, -1.5, 9.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(MarketError::Contract(_))));
    }

    #[test]
    fn seeded_forward_is_stable() {
        let net = Mlp::new(&[6, 64, 64, 10], &mut rng(7)).unwrap();
        let out = net.forward(&[0.1, 0.2, 1.0, 0.0, 0.075, 0.3]).unwrap();
        let again = Mlp::new(&[6, 64, 64, 10], &mut rng(7)).unwrap().forward(&[0.1, 0.2, 1.0, 0.0, 0.075, 0.3]).unwrap();
        assert_eq!(out, again);
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn zero_error_and_zero_rate_leave_parameters_unchanged() {
        let mut net = Mlp::new(&[2, 4, 3], &mut rng(1)).unwrap();
        let states = array![[0.3, -0.2], [1.0, 0.5]];
        let q = net.forward_batch(states.view());
        let targets = [q[[0, 1]], q[[1, 2]]];
        let before = net.clone();
        backward(&mut net, states.view(), &[1, 2], &targets, 0.1).unwrap();
        assert_eq!(net, before);
        backward(&mut net, states.view(), &[1, 2], &[5.0, -5.0], 0.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let mut net = Mlp::new(&[2, 3], &mut rng(1)).unwrap();
        let err = backward(&mut net, array![[1.0, 1.0]].view(), &[0], &[f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, MarketError::Divergence(_)));
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition { state: vec![i as f64], action: 0, reward: 0.0, next_state: vec![], terminal: false });
        }
        assert_eq!(buf.len(), 3);
        let firsts: Vec<f64> = buf.iter().map(|t| t.state[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0]);
        let sample = buf.sample(3, &mut rng(0)).unwrap();
        let mut seen: Vec<f64> = sample.iter().map(|t| t.state[0]).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![2.0, 3.0, 4.0]);
        assert!(buf.sample(4, &mut rng(0)).is_none());
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0), 1.0);
        assert_eq!(e.value(1000), 0.01);
        assert!((1..1200).all(|ep| e.value(ep) <= e.value(ep - 1)));
    }

    fn const_net(values: &[f64]) -> QNetwork {
        let mut mlp = Mlp::zeros(&[1, values.len()]).unwrap();
        mlp.biases_mut()[0] = Array1::from(values.to_vec());
        QNetwork { mlp, value_scale: 1.0, seed: 0 }
    }

    #[test]
    fn bootstrap_targets() {
        let target = const_net(&[100.0, 20.0]);
        assert_eq!(dqn_target(50.0, &[0.0], true, &target, 0.95).unwrap(), 50.0);
        assert_eq!(dqn_target(3.0, &[0.0], false, &target, 0.0).unwrap(), 3.0);
        assert!((dqn_target(0.0, &[0.0], false, &target, 0.95).unwrap() - 95.0).abs() < 1e-12);
        assert_eq!(ddqn_target(7.0, &[0.0], true, &target, &target, 0.95).unwrap(), 7.0);
        assert_eq!(
            ddqn_target(1.0, &[0.0], false, &target, &target, 0.9).unwrap(),
            dqn_target(1.0, &[0.0], false, &target, 0.9).unwrap()
        );
    }

    #[test]
    fn double_target_never_exceeds_single_target() {
        // Enumerate every ordering of three distinct action values for both nets.
        let values = [[1.0, 5.0, 3.0], [5.0, 1.0, 3.0], [3.0, 1.0, 5.0]];
        for online in &values {
            for target in &values {
                let (o, t) = (const_net(online), const_net(target));
                let single = dqn_target(2.0, &[0.0], false, &t, 0.9).unwrap();
                let double = ddqn_target(2.0, &[0.0], false, &o, &t, 0.9).unwrap();
                assert!(double <= single);
                if argmax(online) != argmax(target) {
                    assert!(double < single);
                }
            }
        }
    }

    #[test]
    fn greedy_and_uniform_selection() {
        let mut r = rng(3);
        assert_eq!(select_action(&[1.0, 3.0, 3.0, 2.0], 0.0, &mut r), 1);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[select_action(&[0.0; 10], 1.0, &mut r)] += 1;
        }
        // chi-square with 9 dof; 27.88 is the 0.999 quantile
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork { mlp: Mlp::new(&[6, 8, 4], &mut rng(9)).unwrap(), value_scale: 100.0, seed: 9 };
        let back = QNetwork::from_checkpoint(&net.to_checkpoint()).unwrap();
        assert_eq!(back, net);
        assert!(QNetwork::from_checkpoint("garbage").is_err());
    }

    #[test]
    fn learner_waits_for_a_full_batch() {
        let hyper = Hyperparameters { batch_size: 4, memory_size: 16, hidden: vec![8], ..Default::default() };
        let mut r = rng(5);
        let mut learner = Learner::new(TargetRule::Ddqn, 2, 3, &hyper, 5, &mut r).unwrap();
        let before = learner.online.clone();
        let t = Transition { state: vec![0.1, 0.2], action: 1, reward: 10.0, next_state: vec![0.2, 0.1], terminal: false };
        for _ in 0..3 {
            assert!(learner.observe(t.clone(), &mut r).unwrap().is_none());
        }
        assert_eq!(learner.online, before);
        assert!(learner.observe(t, &mut r).unwrap().is_some());
        assert_ne!(learner.online, before);
    }

    #[test]
    fn learner_trajectory_is_deterministic() {
        let hyper = Hyperparameters { batch_size: 8, memory_size: 32, hidden: vec![16, 16], ..Default::default() };
        let run = || {
            let mut r = rng(11);
            let mut learner = Learner::new(TargetRule::Dqn, 3, 4, &hyper, 11, &mut r).unwrap();
            for i in 0..50 {
                let x = i as f64 / 50.0;
                let t = Transition {
                    state: vec![x, 1.0 - x, 0.5],
                    action: i % 4,
                    reward: (i % 7) as f64 * 10.0 - 25.0,
                    next_state: vec![1.0 - x, x, 0.5],
                    terminal: i % 10 == 9,
                };
                learner.observe(t, &mut r).unwrap();
            }
            learner.online.mlp.params()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_gamma_targets_are_immediate_rewards() {
        let hyper = Hyperparameters { gamma: 0.0, batch_size: 2, memory_size: 4, hidden: vec![4], ..Default::default() };
        let mut r = rng(2);
        let learner = Learner::new(TargetRule::Ddqn, 2, 2, &hyper, 2, &mut r).unwrap();
        let t = dqn_target(-75.0, &[0.3, 0.4], false, &learner.target, hyper.gamma).unwrap();
        assert_eq!(t, -75.0);
        let d = ddqn_target(-75.0, &[0.3, 0.4], false, &learner.online, &learner.target, hyper.gamma).unwrap();
        assert_eq!(d, -75.0);
    }
}
