use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{softmax_rows, Matrix, Tape, Var};
use crate::rng;
use crate::scm::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// Output head: one linear output, or `classes` logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    Linear,
    Logits { classes: usize },
}

impl Head {
    pub fn for_task(task: Task) -> Head {
        match task {
            Task::Regression => Head::Linear,
            Task::Classification { classes } => Head::Logits { classes },
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            Head::Linear => 1,
            Head::Logits { classes } => classes,
        }
    }
}

/// Anything that maps a feature matrix to predictions: raw values for a linear
/// head, class probabilities for a logits head.
pub trait Model {
    fn head(&self) -> Head;
    fn predict(&self, features: &Matrix) -> Result<Matrix>;
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    sizes: Vec<usize>,
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Matrix>,
    activation: Activation,
    head: Head,
}

impl Predictor {
    /// Layer sizes `inputs, hidden.., outputs` with Glorot-uniform weights and zero biases.
    pub fn new(inputs: usize, hidden: &[usize], activation: Activation, head: Head, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(inputs, hidden, activation, head)?;
        let mut r = rng::stream(seed, rng::streams::INIT);
        for w in &mut p.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng::uniform_range(&mut r, -limit, limit);
            }
        }
        Ok(p)
    }

    pub fn zeros(inputs: usize, hidden: &[usize], activation: Activation, head: Head) -> Result<Self> {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(head.outputs());
        if sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be positive, got {sizes:?}")));
        }
        let weights = sizes.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect();
        let biases = sizes[1..].iter().map(|&k| Matrix::zeros(1, k)).collect();
        Ok(Predictor { sizes, weights, biases, activation, head })
    }

    /// Builds a predictor from explicit layers.
    pub fn from_layers(weights: Vec<Matrix>, biases: Vec<Matrix>, activation: Activation, head: Head) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config("need one bias row per weight matrix".into()));
        }
        let mut sizes = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.rows() != *sizes.last().unwrap() || b.shape() != (1, w.cols()) {
                return Err(Error::dim("predictor layers", w.shape(), b.shape()));
            }
            sizes.push(w.cols());
        }
        if *sizes.last().unwrap() != head.outputs() {
            return Err(Error::Config("last layer width must match the head".into()));
        }
        Ok(Predictor { sizes, weights, biases, activation, head })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum::<usize>() + self.biases.iter().map(Matrix::len).sum::<usize>()
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.sizes[0] {
            return Err(Error::dim("predictor input", features.shape(), (features.rows(), self.sizes[0])));
        }
        Ok(())
    }

    /// Raw network output (values or logits).
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        self.check_input(features)?;
        let last = self.weights.len() - 1;
        let mut h = features.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = h.matmul(w)?;
            let z = Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) + b.get(0, j));
            h = if l == last {
                z
            } else {
                match self.activation {
                    Activation::Relu => z.map(|v| v.max(0.0)),
                    Activation::Tanh => z.map(f64::tanh),
                }
            };
        }
        Ok(h)
    }

    /// Records the forward pass; returns the output node and the parameter
    /// leaves in the order weight₀, bias₀, weight₁, ….
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x))?;
        let last = self.weights.len() - 1;
        let mut params = Vec::with_capacity(2 * self.weights.len());
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            params.push(wv);
            params.push(bv);
            let z = tape.matmul(h, wv)?;
            let z = tape.add_row_broadcast(z, bv)?;
            h = if l == last {
                z
            } else {
                match self.activation {
                    Activation::Relu => tape.relu(z),
                    Activation::Tanh => tape.tanh(z),
                }
            };
        }
        Ok((h, params))
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }
}

impl Model for Predictor {
    fn head(&self) -> Head {
        self.head
    }

    fn predict(&self, features: &Matrix) -> Result<Matrix> {
        let out = self.forward(features)?;
        Ok(match self.head {
            Head::Linear => out,
            Head::Logits { .. } => softmax_rows(&out),
        })
    }
}

fn check_targets(n: usize, targets: &[f64], head: Head) -> Result<()> {
    if targets.len() != n {
        return Err(Error::dim("loss", (n, 1), (targets.len(), 1)));
    }
    if let Head::Logits { classes } = head {
        if let Some(bad) = targets.iter().find(|&&t| !(t >= 0.0 && (t as usize) < classes && t.fract() == 0.0)) {
            return Err(Error::Input(format!("class index {bad} outside 0..{classes}")));
        }
    }
    Ok(())
}

fn one_hot(targets: &[f64], classes: usize) -> Matrix {
    Matrix::from_fn(targets.len(), classes, |i, k| if targets[i] as usize == k { 1.0 } else { 0.0 })
}

/// Mean squared error (linear head) or mean softmax cross-entropy (logits head).
pub fn loss(tape: &mut Tape, outputs: Var, targets: &[f64], head: Head) -> Result<Var> {
    let n = tape.value(outputs).rows();
    check_targets(n, targets, head)?;
    match head {
        Head::Linear => {
            let t = tape.constant(Matrix::column(targets));
            let d = tape.sub(outputs, t)?;
            let sq = tape.hadamard(d, d)?;
            Ok(tape.mean_all(sq))
        }
        Head::Logits { classes } => {
            let ls = tape.log_softmax(outputs);
            let mask = tape.constant(one_hot(targets, classes));
            let picked = tape.hadamard(ls, mask)?;
            let total = tape.sum_all(picked);
            Ok(tape.scale(total, -1.0 / n as f64))
        }
    }
}

/// Loss value without recording a tape.
pub fn loss_value(outputs: &Matrix, targets: &[f64], head: Head) -> Result<f64> {
    let mut tape = Tape::new();
    let o = tape.constant(outputs.clone());
    let l = loss(&mut tape, o, targets, head)?;
    Ok(tape.value(l).get(0, 0))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SDCK";
const CHECKPOINT_VERSION: u16 = 1;

/// Checkpoint layout: magic `SDCK`, `u16` version, `u8` activation, `u8` head
/// kind, `u32` classes, `u32` layer-size count, `u64` sizes, then for each
/// layer its row-major weights followed by its biases, all little-endian `f64`.
pub fn write_checkpoint<W: Write>(p: &Predictor, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u16::<LE>(CHECKPOINT_VERSION)?;
    w.write_u8(match p.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    })?;
    let (kind, classes) = match p.head {
        Head::Linear => (0, 1),
        Head::Logits { classes } => (1, classes),
    };
    w.write_u8(kind)?;
    w.write_u32::<LE>(classes as u32)?;
    w.write_u32::<LE>(p.sizes.len() as u32)?;
    for &s in &p.sizes {
        w.write_u64::<LE>(s as u64)?;
    }
    for m in p.parameters() {
        for &v in m.as_slice() {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Predictor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing checkpoint header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let version = r.read_u16::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let activation = match r.read_u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        t => return Err(Error::Format(format!("unknown activation tag {t}"))),
    };
    let kind = r.read_u8()?;
    let classes = r.read_u32::<LE>()? as usize;
    let head = match kind {
        0 => Head::Linear,
        1 => Head::Logits { classes },
        t => return Err(Error::Format(format!("unknown head tag {t}"))),
    };
    let count = r.read_u32::<LE>()? as usize;
    if !(2..=64).contains(&count) {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let sizes: Vec<usize> = (0..count).map(|_| r.read_u64::<LE>().map(|s| s as usize)).collect::<std::io::Result<_>>()?;
    let mut p = Predictor::zeros(sizes[0], &sizes[1..count - 1], activation, head)
        .map_err(|e| Error::Format(e.to_string()))?;
    if p.sizes != sizes {
        return Err(Error::Format("layer sizes disagree with the head".into()));
    }
    for m in p.parameters_mut() {
        r.read_f64_into::<LE>(m.as_mut_slice()).map_err(|e| Error::Format(format!("truncated weights: {e}")))?;
    }
    Ok(p)
}
