//! Softmax policies over the five grid actions and a state-value critic.
//!
//! Two parameterizations share one flat parameter vector:
//!
//! * tabular: one block of 5 logits per cell, `|S| x 5` entries;
//! * MLP: one tanh hidden layer over the cell position scaled to `[-1, 1]^2`.
//!
//! Gradients are exact (closed form for tabular, backprop for the MLP).

use std::io::{BufRead, Write};

use rand::Rng;

use crate::env::NUM_ACTIONS;
use crate::error::{invalid, Error, Result};
use crate::submodular::StateKey;

pub const DEFAULT_HIDDEN: usize = 64;

/// Shape of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Tabular { grid_size: u32 },
    Mlp { grid_size: u32, hidden: usize },
}

impl Layout {
    pub fn grid_size(&self) -> u32 {
        match *self {
            Layout::Tabular { grid_size } | Layout::Mlp { grid_size, .. } => grid_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_size() == 0 {
            return Err(invalid("grid size must be >= 1"));
        }
        if let Layout::Mlp { hidden: 0, .. } = self {
            return Err(invalid("hidden width must be >= 1"));
        }
        Ok(())
    }

    fn num_params(&self, outputs: usize) -> usize {
        match *self {
            Layout::Tabular { grid_size } => (grid_size * grid_size) as usize * outputs,
            Layout::Mlp { hidden, .. } => Mlp { hidden, outputs }.num_params(),
        }
    }

    fn state_index(&self, s: StateKey) -> Result<usize> {
        let g = self.grid_size();
        if s.row >= g || s.col >= g {
            return Err(Error::StateOutOfBounds(s));
        }
        Ok((s.row * g + s.col) as usize)
    }

    fn features(&self, s: StateKey) -> [f64; 2] {
        let g = self.grid_size();
        if g == 1 {
            return [0.0, 0.0];
        }
        let scale = 2.0 / (g - 1) as f64;
        [s.row as f64 * scale - 1.0, s.col as f64 * scale - 1.0]
    }

    fn describe(&self) -> String {
        match *self {
            Layout::Tabular { grid_size } => format!("tabular {grid_size}"),
            Layout::Mlp { grid_size, hidden } => format!("mlp {grid_size} {hidden}"),
        }
    }

    fn parse(fields: &[&str]) -> Option<Self> {
        match fields {
            ["tabular", g] => Some(Layout::Tabular {
                grid_size: g.parse().ok()?,
            }),
            ["mlp", g, h] => Some(Layout::Mlp {
                grid_size: g.parse().ok()?,
                hidden: h.parse().ok()?,
            }),
            _ => None,
        }
    }

    /// Zero vector for tabular layouts; Glorot-uniform weights and zero
    /// biases for the MLP.
    fn init<R: Rng + ?Sized>(&self, outputs: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Layout::Tabular { .. } => vec![0.0; self.num_params(outputs)],
            Layout::Mlp { hidden, .. } => Mlp { hidden, outputs }.init(rng),
        }
    }
}

/// One-hidden-layer tanh network with 2 inputs. Parameters are laid out as
/// `w1 (hidden x 2) | b1 (hidden) | w2 (outputs x hidden) | b2 (outputs)`.
#[derive(Debug, Clone, Copy)]
struct Mlp {
    hidden: usize,
    outputs: usize,
}

impl Mlp {
    const INPUTS: usize = 2;

    fn num_params(&self) -> usize {
        self.hidden * Self::INPUTS + self.hidden + self.outputs * self.hidden + self.outputs
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * Self::INPUTS;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params()];
        let (b1, w2, b2) = self.offsets();
        let bound1 = (6.0 / (Self::INPUTS + self.hidden) as f64).sqrt();
        for w in &mut p[..b1] {
            *w = rng.gen_range(-bound1..=bound1);
        }
        let bound2 = (6.0 / (self.hidden + self.outputs) as f64).sqrt();
        for w in &mut p[w2..b2] {
            *w = rng.gen_range(-bound2..=bound2);
        }
        p
    }

    fn forward(&self, p: &[f64], x: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| (p[2 * j] * x[0] + p[2 * j + 1] * x[1] + p[b1 + j]).tanh())
            .collect();
        let out = (0..self.outputs)
            .map(|o| {
                let row = &p[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, hj)| w * hj).sum::<f64>() + p[b2 + o]
            })
            .collect();
        (h, out)
    }

    /// Adds `scale * d(out . d_out)/dp` into `grad`.
    fn backward(
        &self,
        p: &[f64],
        x: [f64; 2],
        h: &[f64],
        d_out: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let (b1, w2, b2) = self.offsets();
        for (o, &d) in d_out.iter().enumerate() {
            grad[b2 + o] += scale * d;
            for j in 0..self.hidden {
                grad[w2 + o * self.hidden + j] += scale * d * h[j];
            }
        }
        for j in 0..self.hidden {
            let back: f64 = (0..self.outputs)
                .map(|o| d_out[o] * p[w2 + o * self.hidden + j])
                .sum();
            let d_pre = back * (1.0 - h[j] * h[j]);
            grad[b1 + j] += scale * d_pre;
            grad[2 * j] += scale * d_pre * x[0];
            grad[2 * j + 1] += scale * d_pre * x[1];
        }
    }
}

/// A categorical distribution over the five actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub probs: [f64; NUM_ACTIONS],
}

impl ActionDistribution {
    /// Max-shifted softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != NUM_ACTIONS {
            return Err(Error::DimensionMismatch {
                expected: NUM_ACTIONS,
                actual: logits.len(),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; NUM_ACTIONS];
        for (p, l) in probs.iter_mut().zip(logits) {
            *p = (l - max).exp();
        }
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        Ok(Self { probs })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding left u above the last partial sum.
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(NUM_ACTIONS - 1)
    }
}

/// Policy parameters `theta` and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    layout: Layout,
    theta: Vec<f64>,
}

impl PolicyParameters {
    pub fn init<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            theta: layout.init(NUM_ACTIONS, rng),
            layout,
        })
    }

    pub fn zeros(layout: Layout) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            theta: vec![0.0; layout.num_params(NUM_ACTIONS)],
            layout,
        })
    }

    pub fn from_vec(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        let expected = layout.num_params(NUM_ACTIONS);
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(Self { layout, theta })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn logits(&self, s: StateKey) -> Result<Vec<f64>> {
        match self.layout {
            Layout::Tabular { .. } => {
                let i = self.layout.state_index(s)?;
                Ok(self.theta[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS].to_vec())
            }
            Layout::Mlp { hidden, .. } => {
                self.layout.state_index(s)?;
                let net = Mlp {
                    hidden,
                    outputs: NUM_ACTIONS,
                };
                Ok(net.forward(&self.theta, self.layout.features(s)).1)
            }
        }
    }

    pub fn action_distribution(&self, s: StateKey) -> Result<ActionDistribution> {
        ActionDistribution::from_logits(&self.logits(s)?)
    }

    pub fn log_prob(&self, s: StateKey, action: usize) -> Result<f64> {
        let dist = self.action_distribution(s)?;
        let p = dist.probs.get(action).ok_or(Error::InvalidAction(action))?;
        Ok(p.ln())
    }

    /// Adds `scale * grad log pi(action | s)` into `out`.
    pub fn accumulate_grad_log_prob(
        &self,
        s: StateKey,
        action: usize,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if action >= NUM_ACTIONS {
            return Err(Error::InvalidAction(action));
        }
        if out.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                actual: out.len(),
            });
        }
        // d log softmax_a / d logits = onehot(a) - probs
        match self.layout {
            Layout::Tabular { .. } => {
                let i = self.layout.state_index(s)?;
                let dist = self.action_distribution(s)?;
                let block = &mut out[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
                for (b, (g, p)) in block.iter_mut().zip(dist.probs.iter()).enumerate() {
                    let onehot = if b == action { 1.0 } else { 0.0 };
                    *g += scale * (onehot - p);
                }
            }
            Layout::Mlp { hidden, .. } => {
                self.layout.state_index(s)?;
                let net = Mlp {
                    hidden,
                    outputs: NUM_ACTIONS,
                };
                let x = self.layout.features(s);
                let (h, logits) = net.forward(&self.theta, x);
                let dist = ActionDistribution::from_logits(&logits)?;
                let d_out: Vec<f64> = (0..NUM_ACTIONS)
                    .map(|b| if b == action { 1.0 } else { 0.0 } - dist.probs[b])
                    .collect();
                net.backward(&self.theta, x, &h, &d_out, scale, out);
            }
        }
        Ok(())
    }

    pub fn grad_log_prob(&self, s: StateKey, action: usize) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.theta.len()];
        self.accumulate_grad_log_prob(s, action, 1.0, &mut g)?;
        Ok(g)
    }
}

/// State-value estimator `V_phi(s)` mirroring the policy layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParameters {
    layout: Layout,
    phi: Vec<f64>,
}

impl CriticParameters {
    pub fn init<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            phi: layout.init(1, rng),
            layout,
        })
    }

    pub fn zeros(layout: Layout) -> Result<Self> {
        layout.validate()?;
        Ok(Self {
            phi: vec![0.0; layout.num_params(1)],
            layout,
        })
    }

    pub fn from_vec(layout: Layout, phi: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        let expected = layout.num_params(1);
        if phi.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: phi.len(),
            });
        }
        if phi.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("critic parameters"));
        }
        Ok(Self { layout, phi })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    pub fn value(&self, s: StateKey) -> Result<f64> {
        match self.layout {
            Layout::Tabular { .. } => Ok(self.phi[self.layout.state_index(s)?]),
            Layout::Mlp { hidden, .. } => {
                self.layout.state_index(s)?;
                let net = Mlp { hidden, outputs: 1 };
                Ok(net.forward(&self.phi, self.layout.features(s)).1[0])
            }
        }
    }

    pub fn accumulate_grad(&self, s: StateKey, scale: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.phi.len() {
            return Err(Error::DimensionMismatch {
                expected: self.phi.len(),
                actual: out.len(),
            });
        }
        match self.layout {
            Layout::Tabular { .. } => out[self.layout.state_index(s)?] += scale,
            Layout::Mlp { hidden, .. } => {
                self.layout.state_index(s)?;
                let net = Mlp { hidden, outputs: 1 };
                let x = self.layout.features(s);
                let (h, _) = net.forward(&self.phi, x);
                net.backward(&self.phi, x, &h, &[1.0], scale, out);
            }
        }
        Ok(())
    }

    pub fn grad(&self, s: StateKey) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.phi.len()];
        self.accumulate_grad(s, 1.0, &mut g)?;
        Ok(g)
    }

    /// Mean squared error of the current values against `targets`.
    pub fn loss(&self, targets: &[(StateKey, f64)]) -> Result<f64> {
        if targets.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for &(s, y) in targets {
            let e = self.value(s)? - y;
            total += e * e;
        }
        Ok(total / targets.len() as f64)
    }

    /// One in-order SGD pass on `0.5 (V(s) - y)^2`. Returns the loss before
    /// the pass.
    pub fn fit(&mut self, targets: &[(StateKey, f64)], learning_rate: f64) -> Result<f64> {
        let before = self.loss(targets)?;
        let mut g = vec![0.0; self.phi.len()];
        for &(s, y) in targets {
            let err = self.value(s)? - y;
            g.iter_mut().for_each(|x| *x = 0.0);
            self.accumulate_grad(s, err, &mut g)?;
            for (p, d) in self.phi.iter_mut().zip(&g) {
                *p -= learning_rate * d;
            }
        }
        if self.phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("critic parameters"));
        }
        Ok(before)
    }
}

const CHECKPOINT_MAGIC: &str = "sgpo-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Policy (and optional critic) parameters as a versioned text file. Values
/// are written in shortest round-trip form, so reading back is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: PolicyParameters,
    pub critic: Option<CriticParameters>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "policy {}", self.policy.layout.describe())?;
        write_values(&mut out, "theta", &self.policy.theta)?;
        if let Some(critic) = &self.critic {
            writeln!(out, "critic {}", critic.layout.describe())?;
            write_values(&mut out, "phi", &critic.phi)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(i, l)| l.map(|l| (i + 1, l)));
        let mut next =
            || -> Result<Option<(usize, String)>> { lines.next().transpose().map_err(Error::from) };
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };

        let (n, header) = next()?.ok_or_else(|| parse_err(1, "empty checkpoint"))?;
        if header != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(parse_err(n, "unsupported checkpoint header"));
        }
        let (n, line) = next()?.ok_or_else(|| parse_err(n + 1, "missing policy layout"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let layout = match fields.split_first() {
            Some((&"policy", rest)) => Layout::parse(rest),
            _ => None,
        }
        .ok_or_else(|| parse_err(n, "bad policy layout"))?;
        let theta = read_values(&mut next, "theta")?;
        let policy = PolicyParameters::from_vec(layout, theta)?;

        let critic = match next()? {
            None => None,
            Some((n, line)) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                let layout = match fields.split_first() {
                    Some((&"critic", rest)) => Layout::parse(rest),
                    _ => None,
                }
                .ok_or_else(|| parse_err(n, "bad critic layout"))?;
                let phi = read_values(&mut next, "phi")?;
                Some(CriticParameters::from_vec(layout, phi)?)
            }
        };
        if let Some((n, _)) = next()? {
            return Err(parse_err(n, "trailing data"));
        }
        Ok(Self { policy, critic })
    }
}

fn write_values<W: Write>(out: &mut W, name: &str, values: &[f64]) -> Result<()> {
    writeln!(out, "{name} {}", values.len())?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn read_values(
    next: &mut impl FnMut() -> Result<Option<(usize, String)>>,
    name: &str,
) -> Result<Vec<f64>> {
    let (n, line) = next()?.ok_or(Error::Parse {
        line: 0,
        msg: format!("missing {name} block"),
    })?;
    let count = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
        [tag, count] if *tag == name => count.parse::<usize>().ok(),
        _ => None,
    }
    .ok_or_else(|| Error::Parse {
        line: n,
        msg: format!("expected '{name} <count>'"),
    })?;
    (0..count)
        .map(|_| {
            let (n, line) = next()?.ok_or(Error::Parse {
                line: n,
                msg: format!("truncated {name} block"),
            })?;
            line.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: n,
                msg: e.to_string(),
            })
        })
        .collect()
}
