//! Layer graphs: ordered layer records with their parameters and wiring.
//!
//! Shapes recorded on layers exclude the leading batch axis, and so do the
//! `axis` fields of [`LayerKind::Concat`] and [`LayerKind::Gather`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::init::xavier_uniform;
use crate::tape::{ConvLstmParams, Padding, ParamStore, Tape, Var};
use crate::{NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input { name: String },
    /// Dense map over the last axis.
    Dense { units: usize, activation: Activation },
    Reshape,
    Conv2d { kernel: (usize, usize), filters: usize, strides: (usize, usize), padding: Padding, activation: Activation },
    MaxPool { window: (usize, usize) },
    Dropout { rate: f64 },
    Concat { axis: usize },
    Gather { axis: usize, indices: Vec<usize> },
    /// One kernel stack per cluster over `(sensors, time, features)`. Each
    /// stack gathers its members, applies valid convolutions spanning all
    /// members and `kernel_time` steps (later layers span one row), RELU after
    /// each, then max-pools the time axis by `pool`. Outputs are flattened and
    /// concatenated in cluster order.
    MultiKernelConv { clusters: Vec<Vec<usize>>, kernel_time: usize, filters: Vec<usize>, pool: usize },
    /// Convolution LSTM over `(time, a, b, channels)` with same padding.
    ConvLstm { filters: usize, kernel: (usize, usize), return_sequences: bool },
    /// Sparse linear target layer: input element `e` feeds output `targets[e]`.
    ClusterMerge { targets: Vec<usize>, outputs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    pub params: Vec<usize>,
    pub shape: Vec<usize>,
}

/// Forward-pass mode. Dropout is active only in training.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut dyn RngCore),
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    layers: Vec<Layer>,
    params: ParamStore,
    seed: u64,
    init_rng: ChaCha8Rng,
}

impl PartialEq for LayerGraph {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params && self.seed == other.seed
    }
}

impl LayerGraph {
    pub fn new(seed: u64) -> Self {
        LayerGraph {
            layers: Vec::new(),
            params: ParamStore::new(),
            seed,
            init_rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn shape(&self, layer: usize) -> &[usize] {
        &self.layers[layer].shape
    }

    fn check_input(&self, id: usize) -> Result<&[usize]> {
        self.layers
            .get(id)
            .map(|l| l.shape.as_slice())
            .ok_or_else(|| NnError::Config(format!("layer {id} does not exist yet")))
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<usize>, params: Vec<usize>, shape: Vec<usize>) -> Result<usize> {
        if self.find(name).is_some() {
            return Err(NnError::Config(format!("duplicate layer name {name:?}")));
        }
        if shape.len() + 1 > crate::tensor::MAX_RANK {
            return Err(NnError::Shape(format!("layer {name} output {shape:?} exceeds rank limits")));
        }
        self.layers.push(Layer { name: name.to_string(), kind, inputs, params, shape });
        Ok(self.layers.len() - 1)
    }

    fn xavier(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<usize> {
        let t = xavier_uniform(shape, fan_in, fan_out, &mut self.init_rng);
        self.params.add(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<usize> {
        self.params.add(name, Tensor::zeros(shape))
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.push(name, LayerKind::Input { name: name.to_string() }, Vec::new(), Vec::new(), shape.to_vec())
    }

    pub fn dense(&mut self, name: &str, input: usize, units: usize, activation: Activation) -> Result<usize> {
        let mut shape = self.check_input(input)?.to_vec();
        let Some(&inner) = shape.last() else {
            return Err(NnError::Shape(format!("dense {name} needs at least one axis")));
        };
        let w = self.xavier(format!("{name}.w"), &[inner, units], inner, units)?;
        let b = self.zeros(format!("{name}.b"), &[units])?;
        *shape.last_mut().unwrap() = units;
        self.push(name, LayerKind::Dense { units, activation }, vec![input], vec![w, b], shape)
    }

    pub fn reshape(&mut self, name: &str, input: usize, shape: &[usize]) -> Result<usize> {
        let from: usize = self.check_input(input)?.iter().product();
        if from != shape.iter().product::<usize>() {
            return Err(NnError::Shape(format!("reshape {name}: {from} values into {shape:?}")));
        }
        self.push(name, LayerKind::Reshape, vec![input], Vec::new(), shape.to_vec())
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        input: usize,
        kernel: (usize, usize),
        filters: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<usize> {
        let s = self.check_input(input)?.to_vec();
        if s.len() != 3 {
            return Err(NnError::Shape(format!("conv2d {name} expects (h, w, c), got {s:?}")));
        }
        let (oh, ow) = match padding {
            Padding::Same => (s[0], s[1]),
            Padding::Valid => {
                if kernel.0 > s[0] || kernel.1 > s[1] {
                    return Err(NnError::Shape(format!("conv2d {name}: kernel {kernel:?} exceeds {s:?}")));
                }
                (s[0] - kernel.0 + 1, s[1] - kernel.1 + 1)
            }
        };
        let area = kernel.0 * kernel.1;
        let w = self.xavier(format!("{name}.w"), &[kernel.0, kernel.1, s[2], filters], area * s[2], area * filters)?;
        let b = self.zeros(format!("{name}.b"), &[filters])?;
        let kind = LayerKind::Conv2d { kernel, filters, strides: (1, 1), padding, activation };
        self.push(name, kind, vec![input], vec![w, b], vec![oh, ow, filters])
    }

    pub fn maxpool(&mut self, name: &str, input: usize, window: (usize, usize)) -> Result<usize> {
        let s = self.check_input(input)?.to_vec();
        if s.len() != 3 || window.0 == 0 || window.1 == 0 || s[0] % window.0 != 0 || s[1] % window.1 != 0 {
            return Err(NnError::Shape(format!("max-pool {name}: window {window:?} does not tile {s:?}")));
        }
        self.push(name, LayerKind::MaxPool { window }, vec![input], Vec::new(), vec![s[0] / window.0, s[1] / window.1, s[2]])
    }

    pub fn dropout(&mut self, name: &str, input: usize, rate: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let s = self.check_input(input)?.to_vec();
        self.push(name, LayerKind::Dropout { rate }, vec![input], Vec::new(), s)
    }

    pub fn concat(&mut self, name: &str, inputs: &[usize], axis: usize) -> Result<usize> {
        let Some(&first) = inputs.first() else {
            return Err(NnError::Config(format!("concat {name} has no inputs")));
        };
        let mut shape = self.check_input(first)?.to_vec();
        if axis >= shape.len() {
            return Err(NnError::Shape(format!("concat {name}: axis {axis} on {shape:?}")));
        }
        shape[axis] = 0;
        for &i in inputs {
            let s = self.check_input(i)?;
            if s.len() != shape.len() || (0..s.len()).any(|d| d != axis && s[d] != shape[d]) {
                return Err(NnError::Shape(format!("concat {name}: {s:?} vs {shape:?}")));
            }
            shape[axis] += s[axis];
        }
        self.push(name, LayerKind::Concat { axis }, inputs.to_vec(), Vec::new(), shape)
    }

    pub fn gather(&mut self, name: &str, input: usize, axis: usize, indices: &[usize]) -> Result<usize> {
        let mut shape = self.check_input(input)?.to_vec();
        if axis >= shape.len() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(NnError::Shape(format!("gather {name}: {indices:?} on axis {axis} of {shape:?}")));
        }
        shape[axis] = indices.len();
        let kind = LayerKind::Gather { axis, indices: indices.to_vec() };
        self.push(name, kind, vec![input], Vec::new(), shape)
    }

    pub fn multikernel_conv(
        &mut self,
        name: &str,
        input: usize,
        clusters: &[Vec<usize>],
        kernel_time: usize,
        filters: &[usize],
        pool: usize,
    ) -> Result<usize> {
        let s = self.check_input(input)?.to_vec();
        if s.len() != 3 {
            return Err(NnError::Shape(format!("multi-kernel conv {name} expects (sensors, time, features), got {s:?}")));
        }
        if filters.is_empty() || kernel_time == 0 || pool == 0 {
            return Err(NnError::Config(format!("multi-kernel conv {name} needs filters, kernel_time and pool")));
        }
        let (sensors, steps, k) = (s[0], s[1], s[2]);
        if steps + filters.len() < filters.len() * kernel_time + 1 {
            return Err(NnError::Shape(format!(
                "multi-kernel conv {name}: {} time convolutions of width {kernel_time} exceed {steps} steps",
                filters.len()
            )));
        }
        let len = steps - filters.len() * (kernel_time - 1);
        if len % pool != 0 {
            return Err(NnError::Shape(format!(
                "multi-kernel conv {name}: pool {pool} does not divide {len} time positions"
            )));
        }
        let mut params = Vec::new();
        for (j, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(NnError::Config(format!("cluster {j} of {name} has no members")));
            }
            if let Some(&m) = members.iter().find(|&&m| m >= sensors) {
                return Err(NnError::Shape(format!("cluster {j} of {name} names sensor {m} of {sensors}")));
            }
            let mut cin = k;
            for (l, &f) in filters.iter().enumerate() {
                let rows = if l == 0 { members.len() } else { 1 };
                let area = rows * kernel_time;
                params.push(self.xavier(format!("{name}.c{j}.k{l}"), &[rows, kernel_time, cin, f], area * cin, area * f)?);
                params.push(self.zeros(format!("{name}.c{j}.b{l}"), &[f])?);
                cin = f;
            }
        }
        let per_cluster = len / pool * filters.last().unwrap();
        let kind = LayerKind::MultiKernelConv {
            clusters: clusters.to_vec(),
            kernel_time,
            filters: filters.to_vec(),
            pool,
        };
        self.push(name, kind, vec![input], params, vec![clusters.len() * per_cluster])
    }

    pub fn convlstm(&mut self, name: &str, input: usize, filters: usize, kernel: (usize, usize), return_sequences: bool) -> Result<usize> {
        let s = self.check_input(input)?.to_vec();
        if s.len() != 4 {
            return Err(NnError::Shape(format!("ConvLSTM {name} expects (time, a, b, c), got {s:?}")));
        }
        let (steps, a, b, c) = (s[0], s[1], s[2], s[3]);
        let area = kernel.0 * kernel.1;
        let cin = c + filters;
        let kernel_id = self.xavier(format!("{name}.kernel"), &[kernel.0, kernel.1, cin, 4 * filters], area * cin, area * 4 * filters)?;
        let bias = self.zeros(format!("{name}.bias"), &[4 * filters])?;
        let w_ci = self.zeros(format!("{name}.w_ci"), &[a, b, filters])?;
        let w_cf = self.zeros(format!("{name}.w_cf"), &[a, b, filters])?;
        let w_co = self.zeros(format!("{name}.w_co"), &[a, b, filters])?;
        let shape = if return_sequences { vec![steps, a, b, filters] } else { vec![a, b, filters] };
        let kind = LayerKind::ConvLstm { filters, kernel, return_sequences };
        self.push(name, kind, vec![input], vec![kernel_id, bias, w_ci, w_cf, w_co], shape)
    }

    /// Each output starts as the mean of the input elements routed to it.
    pub fn cluster_merge(&mut self, name: &str, input: usize, targets: &[usize], outputs: usize) -> Result<usize> {
        let s = self.check_input(input)?.to_vec();
        if s != [targets.len()] {
            return Err(NnError::Shape(format!("cluster merge {name}: input {s:?} vs {} targets", targets.len())));
        }
        let mut count = vec![0usize; outputs];
        for &t in targets {
            *count.get_mut(t).ok_or_else(|| NnError::Shape(format!("cluster merge {name}: target {t} ≥ {outputs}")))? += 1;
        }
        let w: Vec<f64> = targets.iter().map(|&t| 1.0 / count[t] as f64).collect();
        let wid = self.params.add(format!("{name}.w"), Tensor::new(&[targets.len()], w)?)?;
        let bid = self.zeros(format!("{name}.b"), &[outputs])?;
        let kind = LayerKind::ClusterMerge { targets: targets.to_vec(), outputs };
        self.push(name, kind, vec![input], vec![wid, bid], vec![outputs])
    }

    /// Runs every layer; returns one variable per layer. Inputs are matched by
    /// name and must carry a leading batch axis.
    pub fn forward(&self, tape: &mut Tape, inputs: &[(&str, &Tensor)], mut mode: Mode<'_>) -> Result<Vec<Var>> {
        let mut vars: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut batch = None;
        for layer in &self.layers {
            let p: Vec<Var> = layer.params.iter().map(|&id| tape.param(&self.params, id)).collect();
            let x = layer.inputs.first().map(|&i| vars[i]);
            let bshape = |b: usize| [&[b][..], &layer.shape[..]].concat();
            let v = match &layer.kind {
                LayerKind::Input { name } => {
                    let t = inputs
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| NnError::Config(format!("missing input {name:?}")))?;
                    let b = *t.shape().first().ok_or_else(|| NnError::Shape(format!("input {name} has no batch axis")))?;
                    if *batch.get_or_insert(b) != b || t.shape()[1..] != layer.shape[..] {
                        return Err(NnError::Shape(format!(
                            "input {name}: got {:?}, expected (batch, {:?})",
                            t.shape(),
                            layer.shape
                        )));
                    }
                    tape.leaf(t.clone())
                }
                LayerKind::Dense { activation, .. } => {
                    let y = tape.linear(x.unwrap(), p[0], p[1])?;
                    activation.apply(tape, y)
                }
                LayerKind::Reshape => {
                    let b = tape.shape(x.unwrap())[0];
                    tape.reshape(x.unwrap(), &bshape(b))?
                }
                LayerKind::Conv2d { strides, padding, activation, .. } => {
                    let y = tape.conv2d(x.unwrap(), p[0], p[1], *strides, *padding)?;
                    activation.apply(tape, y)
                }
                LayerKind::MaxPool { window } => tape.maxpool(x.unwrap(), *window)?,
                LayerKind::Dropout { rate } => match &mut mode {
                    Mode::Inference => x.unwrap(),
                    Mode::Training(rng) => tape.dropout(x.unwrap(), *rate, rng)?,
                },
                LayerKind::Concat { axis } => {
                    let xs: Vec<Var> = layer.inputs.iter().map(|&i| vars[i]).collect();
                    tape.concat(&xs, axis + 1)?
                }
                LayerKind::Gather { axis, indices } => tape.gather(x.unwrap(), axis + 1, indices)?,
                LayerKind::MultiKernelConv { clusters, pool, filters, .. } => {
                    let x = x.unwrap();
                    let b = tape.shape(x)[0];
                    let mut outs = Vec::with_capacity(clusters.len());
                    for (j, members) in clusters.iter().enumerate() {
                        let mut h = tape.gather(x, 1, members)?;
                        for l in 0..filters.len() {
                            let base = 2 * (j * filters.len() + l);
                            let y = tape.conv2d(h, p[base], p[base + 1], (1, 1), Padding::Valid)?;
                            h = tape.relu(y);
                        }
                        let pooled = tape.maxpool(h, (1, *pool))?;
                        let n = tape.value(pooled).len() / b;
                        outs.push(tape.reshape(pooled, &[b, n])?);
                    }
                    tape.concat(&outs, 1)?
                }
                LayerKind::ConvLstm { filters, return_sequences, .. } => {
                    let x = x.unwrap();
                    let s = tape.shape(x).to_vec();
                    let (b, steps, a, bb) = (s[0], s[1], s[2], s[3]);
                    let cell = ConvLstmParams { kernel: p[0], bias: p[1], w_ci: p[2], w_cf: p[3], w_co: p[4] };
                    let mut h = tape.leaf(Tensor::zeros(&[b, a, bb, *filters]));
                    let mut c = tape.leaf(Tensor::zeros(&[b, a, bb, *filters]));
                    let mut seq = Vec::with_capacity(steps);
                    for t in 0..steps {
                        let xt = tape.slice(x, 1, t, 1)?;
                        let xt = tape.reshape(xt, &[b, a, bb, s[4]])?;
                        (h, c) = tape.convlstm_step(xt, h, c, &cell)?;
                        if *return_sequences {
                            seq.push(tape.reshape(h, &[b, 1, a, bb, *filters])?);
                        }
                    }
                    if *return_sequences {
                        tape.concat(&seq, 1)?
                    } else {
                        h
                    }
                }
                LayerKind::ClusterMerge { targets, .. } => tape.scatter(x.unwrap(), p[0], p[1], targets)?,
            };
            vars.push(v);
        }
        Ok(vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_the_wiring() {
        let mut g = LayerGraph::new(1);
        let x = g.input("x", &[4, 6, 3]).unwrap();
        let mk = g.multikernel_conv("mk", x, &[vec![0, 1], vec![1, 2, 3]], 2, &[5, 7], 2).unwrap();
        // 6 steps, two width-2 convolutions -> 4, pooled by 2 -> 2, times 7 filters, times 2 clusters
        assert_eq!(g.shape(mk), &[28]);
        let d = g.dense("d", mk, 6 * 4 * 2, Activation::Relu).unwrap();
        let r = g.reshape("r", d, &[6, 4, 2, 1]).unwrap();
        let lstm = g.convlstm("l", r, 3, (3, 3), false).unwrap();
        assert_eq!(g.shape(lstm), &[4, 2, 3]);
        assert!(g.maxpool("p", lstm, (3, 2)).is_err());
        assert!(g.multikernel_conv("bad", x, &[vec![]], 2, &[5], 1).is_err());
        assert!(g.multikernel_conv("bad2", x, &[vec![0]], 2, &[5], 3).is_err());

        let mut tape = Tape::new();
        let input = Tensor::filled(&[2, 4, 6, 3], 0.1);
        let vars = g.forward(&mut tape, &[("x", &input)], Mode::Inference).unwrap();
        assert_eq!(tape.shape(vars[lstm]), &[2, 4, 2, 3]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut g = LayerGraph::new(seed);
            let x = g.input("x", &[3]).unwrap();
            g.dense("d", x, 4, Activation::Tanh).unwrap();
            g
        };
        assert_eq!(build(5), build(5));
        assert_ne!(build(5), build(6));
    }
}
