//! Toy trainable student: a per-sentence embedding table with inverted
//! dropout, plus four `affine → tanh → affine` projection heads.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Text-only contrastive head, hidden → hidden.
    Simcse,
    /// Student head into the grounded space, hidden → grounded.
    Grounded,
    /// Teacher text features into the grounded space.
    TeacherText,
    /// Teacher visual features into the grounded space.
    TeacherVisual,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [
        HeadKind::Simcse,
        HeadKind::Grounded,
        HeadKind::TeacherText,
        HeadKind::TeacherVisual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Simcse => "simcse",
            HeadKind::Grounded => "grounded",
            HeadKind::TeacherText => "teacher_text",
            HeadKind::TeacherVisual => "teacher_visual",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentDims {
    pub hidden: usize,
    pub grounded: usize,
    pub teacher_text: usize,
    pub teacher_visual: usize,
}

impl Default for StudentDims {
    fn default() -> Self {
        Self {
            hidden: 64,
            grounded: 32,
            teacher_text: 32,
            teacher_visual: 32,
        }
    }
}

impl StudentDims {
    fn head_shape(&self, kind: HeadKind) -> (usize, usize) {
        match kind {
            HeadKind::Simcse => (self.hidden, self.hidden),
            HeadKind::Grounded => (self.hidden, self.grounded),
            HeadKind::TeacherText => (self.teacher_text, self.grounded),
            HeadKind::TeacherVisual => (self.teacher_visual, self.grounded),
        }
    }
}

/// `y = W2 · tanh(W1 · x + b1) + b2`, with `W1: out × in` and `W2: out × out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub input: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Head {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            w1: vec![0.0; output * input],
            b1: vec![0.0; output],
            w2: vec![0.0; output * output],
            b2: vec![0.0; output],
        }
    }

    fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut head = Self::zeros(input, output);
        let a1 = (6.0 / (input + output) as f64).sqrt();
        let a2 = (6.0 / (2 * output) as f64).sqrt();
        head.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        head.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2));
        head
    }

    /// Returns `(output, tanh activations)`.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let act: Vec<f64> = (0..self.output)
            .map(|o| {
                let row = &self.w1[o * self.input..(o + 1) * self.input];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[o]).tanh()
            })
            .collect();
        let out = (0..self.output)
            .map(|o| {
                let row = &self.w2[o * self.output..(o + 1) * self.output];
                row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + self.b2[o]
            })
            .collect();
        (out, act)
    }

    /// Accumulates parameter gradients into `grads` and returns `∂/∂x`.
    fn backward(&self, x: &[f64], act: &[f64], grad_out: &[f64], grads: &mut Head) -> Vec<f64> {
        let (n_in, n_out) = (self.input, self.output);
        let mut grad_pre = vec![0.0; n_out];
        for o in 0..n_out {
            let g = grad_out[o];
            grads.b2[o] += g;
            for k in 0..n_out {
                grads.w2[o * n_out + k] += g * act[k];
                grad_pre[k] += self.w2[o * n_out + k] * g;
            }
        }
        for (k, gp) in grad_pre.iter_mut().enumerate() {
            *gp *= 1.0 - act[k] * act[k];
        }
        let mut grad_in = vec![0.0; n_in];
        for o in 0..n_out {
            let g = grad_pre[o];
            grads.b1[o] += g;
            for i in 0..n_in {
                grads.w1[o * n_in + i] += g * x[i];
                grad_in[i] += self.w1[o * n_in + i] * g;
            }
        }
        grad_in
    }
}

/// All trainable values: the embedding table and the four heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// Row-major `sentences × hidden`.
    pub base: Vec<f64>,
    pub heads: [Head; 4],
}

impl Tensors {
    pub fn zeros_like(other: &Tensors) -> Self {
        Self {
            base: vec![0.0; other.base.len()],
            heads: other.heads.clone().map(|h| Head::zeros(h.input, h.output)),
        }
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        &self.heads[kind.index()]
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Head {
        &mut self.heads[kind.index()]
    }

    /// Stable order: base, then `w1, b1, w2, b2` of each head in [`HeadKind::ALL`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.base];
        for h in &self.heads {
            out.extend([h.w1.as_slice(), &h.b1, &h.w2, &h.b2]);
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.base];
        for h in &mut self.heads {
            out.extend([h.w1.as_mut_slice(), &mut h.b1, &mut h.w2, &mut h.b2]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Seeded Bernoulli keep pattern. Equal seeds give equal patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutMask {
    pub seed: u64,
}

impl DropoutMask {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Per-coordinate multiplier: `0` for dropped, `1 / (1 − rate)` for kept.
    pub fn scales(&self, dim: usize, rate: f64) -> Vec<f64> {
        if rate == 0.0 {
            return vec![1.0; dim];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let keep = 1.0 / (1.0 - rate);
        (0..dim)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    pub dims: StudentDims,
    pub dropout_rate: f64,
    pub values: Tensors,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Node {
    Encode {
        row: usize,
        scales: Vec<f64>,
    },
    Project {
        head: HeadKind,
        parent: Option<NodeId>,
        input: Vec<f64>,
        act: Vec<f64>,
    },
}

/// Forward-pass record consumed by [`StudentParams::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl StudentParams {
    pub fn init(ids: Vec<String>, dims: StudentDims, dropout_rate: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = (0..ids.len() * dims.hidden)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let heads = HeadKind::ALL.map(|k| {
            let (i, o) = dims.head_shape(k);
            Head::random(i, o, &mut rng)
        });
        Self::from_parts(ids, dims, dropout_rate, Tensors { base, heads })
    }

    pub fn from_parts(
        ids: Vec<String>,
        dims: StudentDims,
        dropout_rate: f64,
        values: Tensors,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        if dims.hidden == 0
            || dims.grounded == 0
            || dims.teacher_text == 0
            || dims.teacher_visual == 0
        {
            return Err(Error::InvalidConfig(
                "all dimensions must be positive".into(),
            ));
        }
        if values.base.len() != ids.len() * dims.hidden {
            return Err(Error::ShapeMismatch(format!(
                "base table has {} values for {} sentences × {}",
                values.base.len(),
                ids.len(),
                dims.hidden
            )));
        }
        for kind in HeadKind::ALL {
            let h = values.head(kind);
            let (i, o) = dims.head_shape(kind);
            if (h.input, h.output) != (i, o)
                || h.w1.len() != i * o
                || h.b1.len() != o
                || h.w2.len() != o * o
                || h.b2.len() != o
            {
                return Err(Error::ShapeMismatch(format!(
                    "head {} is not {i}→{o}",
                    kind.name()
                )));
            }
        }
        if !values.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            index,
            dims,
            dropout_rate,
            values,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn row_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSentenceId(id.to_string()))
    }

    pub fn base_row(&self, id: &str) -> Result<&[f64]> {
        let r = self.row_of(id)?;
        Ok(&self.values.base[r * self.dims.hidden..(r + 1) * self.dims.hidden])
    }

    /// Hidden vector of a sentence under `mask`, with inverted dropout scaling.
    pub fn encode(&self, id: &str, mask: DropoutMask) -> Result<Vec<f64>> {
        let base = self.base_row(id)?;
        let scales = mask.scales(self.dims.hidden, self.dropout_rate);
        Ok(base.iter().zip(&scales).map(|(b, s)| b * s).collect())
    }

    /// Hidden vector with dropout disabled.
    pub fn embed(&self, id: &str) -> Result<Vec<f64>> {
        self.base_row(id).map(<[f64]>::to_vec)
    }

    pub fn project(&self, h: &[f64], head: HeadKind) -> Result<Vec<f64>> {
        let hd = self.values.head(head);
        if h.len() != hd.input {
            return Err(Error::DimensionMismatch {
                expected: hd.input,
                got: h.len(),
            });
        }
        Ok(hd.forward(h).0)
    }

    pub fn encode_on(
        &self,
        tape: &mut Tape,
        id: &str,
        mask: DropoutMask,
    ) -> Result<(NodeId, Vec<f64>)> {
        let row = self.row_of(id)?;
        let scales = mask.scales(self.dims.hidden, self.dropout_rate);
        let base = &self.values.base[row * self.dims.hidden..(row + 1) * self.dims.hidden];
        let h = base.iter().zip(&scales).map(|(b, s)| b * s).collect();
        tape.nodes.push(Node::Encode { row, scales });
        Ok((NodeId(tape.nodes.len() - 1), h))
    }

    /// Projects `input` through `head`. `parent` links the input to an earlier
    /// node; `None` marks a constant input such as a teacher feature.
    pub fn project_on(
        &self,
        tape: &mut Tape,
        parent: Option<NodeId>,
        input: &[f64],
        head: HeadKind,
    ) -> Result<(NodeId, Vec<f64>)> {
        if let Some(NodeId(p)) = parent {
            if p >= tape.nodes.len() {
                return Err(Error::MissingForwardState("parent node is not on the tape"));
            }
        }
        let hd = self.values.head(head);
        if input.len() != hd.input {
            return Err(Error::DimensionMismatch {
                expected: hd.input,
                got: input.len(),
            });
        }
        let (out, act) = hd.forward(input);
        tape.nodes.push(Node::Project {
            head,
            parent,
            input: input.to_vec(),
            act,
        });
        Ok((NodeId(tape.nodes.len() - 1), out))
    }

    /// Reverse pass over `tape`. Dropout patterns are treated as constants.
    pub fn backward(&self, tape: &Tape, upstream: &[(NodeId, Vec<f64>)]) -> Result<Tensors> {
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
        for (NodeId(id), g) in upstream {
            let slot = pending.get_mut(*id).ok_or(Error::MissingForwardState(
                "upstream gradient for an unrecorded node",
            ))?;
            match slot {
                Some(acc) => {
                    if acc.len() != g.len() {
                        return Err(Error::DimensionMismatch {
                            expected: acc.len(),
                            got: g.len(),
                        });
                    }
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                None => *slot = Some(g.clone()),
            }
        }
        let mut grads = Tensors::zeros_like(&self.values);
        let hidden = self.dims.hidden;
        for idx in (0..tape.nodes.len()).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            match &tape.nodes[idx] {
                Node::Encode { row, scales } => {
                    if g.len() != hidden {
                        return Err(Error::DimensionMismatch {
                            expected: hidden,
                            got: g.len(),
                        });
                    }
                    let dst = &mut grads.base[row * hidden..(row + 1) * hidden];
                    for ((d, gi), s) in dst.iter_mut().zip(&g).zip(scales) {
                        *d += gi * s;
                    }
                }
                Node::Project {
                    head,
                    parent,
                    input,
                    act,
                } => {
                    let hd = self.values.head(*head);
                    if g.len() != hd.output {
                        return Err(Error::DimensionMismatch {
                            expected: hd.output,
                            got: g.len(),
                        });
                    }
                    let gin = hd.backward(input, act, &g, grads.head_mut(*head));
                    if let Some(NodeId(p)) = parent {
                        match &mut pending[*p] {
                            Some(acc) => acc.iter_mut().zip(&gin).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(gin),
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}
