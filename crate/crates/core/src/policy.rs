//! Log-linear autoregressive policy over a control token and a response.
//!
//! Every logit is a single weight indexed by (query class, context, token).
//! Contexts are the control slot, the scratch slots of each mode and the
//! answer slot of each mode, so a class's weights form five contiguous
//! blocks:
//!
//! ```text
//! [ control(2) | scratch/short(S) | answer/short(A) | scratch/think(S) | answer/think(A) ]
//! ```
//!
//! Scratch weights are shared by every scratch position of a mode. Logits
//! are clamped to `[-LOGIT_CAP, LOGIT_CAP]` before the softmax.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Query, Token};
use crate::error::{config_err, Error, Result};

pub const LOGIT_CAP: f64 = 30.0;

/// Reasoning-mode token emitted at position 0 of every trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControlToken {
    Short,
    Think,
}

impl ControlToken {
    pub const ALL: [ControlToken; 2] = [ControlToken::Short, ControlToken::Think];

    pub fn index(self) -> usize {
        match self {
            ControlToken::Short => 0,
            ControlToken::Think => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            ControlToken::Short
        } else {
            ControlToken::Think
        }
    }
}

/// Conditioning context of one generated token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Context {
    Control,
    Scratch(ControlToken),
    Answer(ControlToken),
}

/// Dimensions the parameter vector was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub classes: usize,
    pub answer_vocab: usize,
    pub scratch_vocab: usize,
    pub t_short: usize,
    pub t_think: usize,
}

impl Layout {
    pub fn of(env: &Environment) -> Self {
        let c = env.config();
        Self {
            classes: c.num_query_classes,
            answer_vocab: c.vocab_answer_size,
            scratch_vocab: c.vocab_scratch_size,
            t_short: c.t_short,
            t_think: c.t_think,
        }
    }

    pub fn block_len(&self) -> usize {
        2 + 2 * (self.scratch_vocab + self.answer_vocab)
    }

    pub fn dim(&self) -> usize {
        self.classes * self.block_len()
    }

    pub fn context_size(&self, ctx: Context) -> usize {
        match ctx {
            Context::Control => 2,
            Context::Scratch(_) => self.scratch_vocab,
            Context::Answer(_) => self.answer_vocab,
        }
    }

    /// First feature id of a (class, context) block.
    pub fn offset(&self, class: usize, ctx: Context) -> usize {
        let per_mode = self.scratch_vocab + self.answer_vocab;
        let within = match ctx {
            Context::Control => 0,
            Context::Scratch(m) => 2 + m.index() * per_mode,
            Context::Answer(m) => 2 + m.index() * per_mode + self.scratch_vocab,
        };
        class * self.block_len() + within
    }

    /// Feature ids of the control blocks of every class.
    pub fn control_features(&self) -> Vec<usize> {
        (0..self.classes)
            .flat_map(|c| {
                let o = self.offset(c, Context::Control);
                [o, o + 1]
            })
            .collect()
    }

    /// Feature ids of every scratch and answer block.
    pub fn response_features(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|k| k % self.block_len() >= 2)
            .collect()
    }

    pub fn template_len(&self, mode: ControlToken) -> usize {
        match mode {
            ControlToken::Short => self.t_short,
            ControlToken::Think => self.t_think,
        }
    }

    /// Context of response position `position` (0-based, excluding the control slot).
    pub fn response_context(&self, mode: ControlToken, position: usize) -> Result<Context> {
        let t = self.template_len(mode);
        if position >= t {
            return Err(Error::Usage(format!(
                "position {position} outside the {mode:?} template of length {t}"
            )));
        }
        Ok(if position + 1 == t {
            Context::Answer(mode)
        } else {
            Context::Scratch(mode)
        })
    }
}

/// A generated sequence `(control, response...)` with its sampling log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub control: ControlToken,
    pub response: Vec<Token>,
    /// Log-probability of every token (control first) under the sampling policy.
    pub logp: Vec<f64>,
    pub query: Query,
    pub correct: bool,
    pub reward: f64,
}

impl Trajectory {
    /// Response length `T`; the trajectory holds `T + 1` tokens.
    pub fn response_len(&self) -> usize {
        self.response.len()
    }

    /// Context and in-vocabulary index of token `t` (0 is the control slot).
    pub fn token_at(&self, t: usize) -> (Context, usize) {
        if t == 0 {
            return (Context::Control, self.control.index());
        }
        let last = t == self.response.len();
        match self.response[t - 1] {
            Token::Answer(a) if last => (Context::Answer(self.control), a as usize),
            Token::Scratch(s) if !last => (Context::Scratch(self.control), s as usize),
            // Templates never produce this; an answer token in a scratch slot
            // (or the reverse) only arises from hand-built trajectories.
            Token::Answer(a) => (Context::Scratch(self.control), a as usize),
            Token::Scratch(s) => (Context::Answer(self.control), s as usize),
        }
    }
}

/// Score-function gradient restricted to one contiguous feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    pub offset: usize,
    pub values: Vec<f64>,
}

impl SparseGrad {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_scaled_to(&mut out, 1.0);
        out
    }

    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for (d, v) in dense[self.offset..self.offset + self.values.len()].iter_mut().zip(&self.values) {
            *d += scale * v;
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let capped: Vec<f64> = logits.iter().map(|z| z.clamp(-LOGIT_CAP, LOGIT_CAP)).collect();
    let max = capped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = capped.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative total; take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Policy parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: Layout,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            theta: vec![0.0; layout.dim()],
            layout,
        }
    }

    pub fn from_theta(layout: Layout, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, layout needs {}",
                theta.len(),
                layout.dim()
            )));
        }
        Ok(Self { layout, theta })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    /// Frozen copy used as the old or reference policy.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn logits(&self, class: usize, ctx: Context) -> &[f64] {
        let o = self.layout.offset(class, ctx);
        &self.theta[o..o + self.layout.context_size(ctx)]
    }

    pub fn logits_mut(&mut self, class: usize, ctx: Context) -> &mut [f64] {
        let o = self.layout.offset(class, ctx);
        let n = self.layout.context_size(ctx);
        &mut self.theta[o..o + n]
    }

    pub fn distribution(&self, class: usize, ctx: Context) -> Vec<f64> {
        softmax(self.logits(class, ctx))
    }

    /// `[P(SHORT | x), P(THINK | x)]`.
    pub fn control_distribution(&self, query: &Query) -> [f64; 2] {
        let p = self.distribution(query.class_id, Context::Control);
        [p[0], p[1]]
    }

    pub fn p_think(&self, query: &Query) -> f64 {
        self.control_distribution(query)[1]
    }

    /// Distribution over the vocabulary of response position `position`.
    pub fn token_distribution(&self, query: &Query, mode: ControlToken, position: usize) -> Result<Vec<f64>> {
        let ctx = self.layout.response_context(mode, position)?;
        Ok(self.distribution(query.class_id, ctx))
    }

    pub fn log_prob(&self, class: usize, ctx: Context, index: usize) -> f64 {
        self.distribution(class, ctx)[index].ln()
    }

    /// Log-probability of every token of `trajectory` under these parameters.
    pub fn trajectory_log_probs(&self, trajectory: &Trajectory) -> Vec<f64> {
        let class = trajectory.query.class_id;
        let mode = trajectory.control;
        let control = self.distribution(class, Context::Control);
        let scratch = self.distribution(class, Context::Scratch(mode));
        let answer = self.distribution(class, Context::Answer(mode));
        (0..=trajectory.response_len())
            .map(|t| {
                let (ctx, idx) = trajectory.token_at(t);
                let dist = match ctx {
                    Context::Control => &control,
                    Context::Scratch(_) => &scratch,
                    Context::Answer(_) => &answer,
                };
                dist[idx].ln()
            })
            .collect()
    }

    /// Samples a control token, then the mode's fixed-length response.
    pub fn sample_trajectory<R: Rng + ?Sized>(&self, query: &Query, rng: &mut R) -> Trajectory {
        let class = query.class_id;
        let control_p = self.distribution(class, Context::Control);
        let c = sample_index(&control_p, rng);
        let mode = ControlToken::from_index(c);
        let scratch = self.distribution(class, Context::Scratch(mode));
        let answer = self.distribution(class, Context::Answer(mode));
        let t_len = self.layout.template_len(mode);

        let mut response = Vec::with_capacity(t_len);
        let mut logp = Vec::with_capacity(t_len + 1);
        logp.push(control_p[c].ln());
        for _ in 0..t_len - 1 {
            let k = sample_index(&scratch, rng);
            response.push(Token::Scratch(k as u16));
            logp.push(scratch[k].ln());
        }
        let k = sample_index(&answer, rng);
        response.push(Token::Answer(k as u16));
        logp.push(answer[k].ln());

        Trajectory {
            control: mode,
            response,
            logp,
            query: *query,
            correct: false,
            reward: 0.0,
        }
    }

    /// `d log pi(index | class, ctx) / d theta`, restricted to the context's block.
    ///
    /// Coordinates whose logit sits on the clamp receive zero gradient.
    pub fn grad_logprob(&self, class: usize, ctx: Context, index: usize) -> SparseGrad {
        let logits = self.logits(class, ctx);
        let probs = softmax(logits);
        SparseGrad {
            offset: self.layout.offset(class, ctx),
            values: score(&probs, logits, index),
        }
    }

    /// Balanced warm start: equal control logits, uniform scratch logits, and
    /// answer logits that put mass `p0` on the class's truth token in each mode.
    ///
    /// `p0_short[k]` and `p0_think[k]` apply to classes of profile `k`.
    pub fn warmup_init(env: &Environment, p0_short: &[f64], p0_think: &[f64]) -> Result<Self> {
        let n = env.profiles().len();
        if p0_short.len() != n || p0_think.len() != n {
            return config_err(format!("warm-up needs one p0 per profile ({n})"));
        }
        for &p in p0_short.iter().chain(p0_think) {
            if !(p > 0.0 && p < 1.0) {
                return config_err(format!("warm-up probability {p} outside (0, 1)"));
            }
        }
        let layout = Layout::of(env);
        let mut params = PolicyParams::zeros(layout);
        let others = (layout.answer_vocab - 1) as f64;
        for class in 0..layout.classes {
            let q = env.query(class);
            for (mode, p0) in [(ControlToken::Short, p0_short[q.profile]), (ControlToken::Think, p0_think[q.profile])] {
                let logit = if others == 0.0 { 0.0 } else { (p0 * others / (1.0 - p0)).ln() };
                params.logits_mut(class, Context::Answer(mode))[q.truth as usize] = logit;
            }
        }
        Ok(params)
    }

    pub fn check_matches(&self, env: &Environment) -> Result<()> {
        let want = Layout::of(env);
        if self.layout != want {
            return Err(Error::Dimension(format!(
                "parameters built for {:?}, environment needs {:?}",
                self.layout, want
            )));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"DGRPOPAR";

    /// Little-endian binary encoding: magic, five u64 header fields, theta length, f64 entries.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        let l = &self.layout;
        for v in [l.classes, l.answer_vocab, l.scratch_vocab, l.t_short, l.t_think, self.theta.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Dimension("not a parameter file (bad magic)".into()));
        }
        let mut fields = [0usize; 6];
        let mut buf = [0u8; 8];
        for f in fields.iter_mut() {
            r.read_exact(&mut buf)?;
            *f = u64::from_le_bytes(buf) as usize;
        }
        let layout = Layout {
            classes: fields[0],
            answer_vocab: fields[1],
            scratch_vocab: fields[2],
            t_short: fields[3],
            t_think: fields[4],
        };
        if fields[5] != layout.dim() {
            return Err(Error::Dimension(format!(
                "header declares {} weights, layout needs {}",
                fields[5],
                layout.dim()
            )));
        }
        let mut theta = Vec::with_capacity(fields[5]);
        for _ in 0..fields[5] {
            r.read_exact(&mut buf)?;
            theta.push(f64::from_le_bytes(buf));
        }
        Ok(Self { layout, theta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// `e_index - probs`, zeroed on clamped logits.
pub(crate) fn score(probs: &[f64], logits: &[f64], index: usize) -> Vec<f64> {
    probs
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(k, (p, z))| {
            if z.abs() >= LOGIT_CAP {
                0.0
            } else if k == index {
                1.0 - p
            } else {
                -p
            }
        })
        .collect()
}
