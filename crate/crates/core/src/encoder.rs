//! Permutation-equivariant message-passing encoder producing the soft
//! assignment `T` (n x m), with hand-written backpropagation.
//!
//! Layer rule: `h' = relu(h W_self + A h W_nbr + b)` where `A` is the
//! symmetrically normalized Gaussian-kernel kNN graph. The output head is
//! `Z = h W_out + b_out`, and `T` is the column-wise softmax of `Z`. Since
//! m is independent of n, one model serves every instance size.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::SoftAssignment;
use crate::instances::TspInstance;

pub const CHECKPOINT_MAGIC: &str = "UTSPLAB-MODEL v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub m: usize,
    pub layers: usize,
    pub hidden: usize,
    /// `None` means `min(10, n - 1)` per instance.
    pub knn_k: Option<usize>,
    /// `None` means the mean kNN distance of the instance.
    pub kernel_sigma: Option<f64>,
}

impl EncoderConfig {
    pub fn new(m: usize) -> Self {
        Self { m, layers: 2, hidden: 128, knn_k: None, kernel_sigma: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Parameter(format!("m must be at least 2, got {}", self.m)));
        }
        if self.layers < 1 || self.hidden < 1 {
            return Err(Error::Parameter("layers and hidden must be at least 1".into()));
        }
        if self.knn_k == Some(0) {
            return Err(Error::Parameter("knn_k must be at least 1".into()));
        }
        if let Some(s) = self.kernel_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!("kernel_sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn knn_for(&self, n: usize) -> usize {
        self.knn_k.unwrap_or(10).min(n - 1)
    }
}

/// Sparse symmetric normalized adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `A x`.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &(j, w) in row {
                o.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut d = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                d[[i, j]] = w;
            }
        }
        d
    }
}

/// Union kNN graph with weights `exp(-d^2 / sigma^2)`, normalized as
/// `S^{-1/2} W S^{-1/2}`.
pub fn build_graph(inst: &TspInstance, config: &EncoderConfig) -> Adjacency {
    let n = inst.n();
    let k = config.knn_for(n);
    let dm = inst.distance_matrix();

    let mut linked = vec![vec![false; n]; n];
    let mut knn_total = 0.0;
    let mut others: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i));
        others.sort_by(|&a, &b| dm.get(i, a).total_cmp(&dm.get(i, b)).then(a.cmp(&b)));
        for &j in &others[..k] {
            linked[i][j] = true;
            linked[j][i] = true;
            knn_total += dm.get(i, j);
        }
    }
    let sigma = config.kernel_sigma.unwrap_or(knn_total / (n * k) as f64);
    let inv_s2 = 1.0 / (sigma * sigma);

    let mut weights: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| linked[i][j])
                .map(|j| (j, (-dm.get(i, j).powi(2) * inv_s2).exp()))
                .collect()
        })
        .collect();
    let degree: Vec<f64> = weights.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut() {
            let denom = (degree[i] * degree[*j]).sqrt();
            *w = if denom > 0.0 { *w / denom } else { 0.0 };
        }
    }
    Adjacency { rows: weights }
}

/// Model parameters as an ordered list of named matrices:
/// per layer `w_self`, `w_nbr`, `b` (1 x hidden), then `w_out`, `b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Self {
        Self {
            tensors: other.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.iter().copied())
    }

    pub fn get(&self, flat: usize) -> f64 {
        let (t, k) = self.locate(flat);
        self.tensors[t].as_slice().unwrap()[k]
    }

    pub fn set(&mut self, flat: usize, value: f64) {
        let (t, k) = self.locate(flat);
        self.tensors[t].as_slice_mut().unwrap()[k] = value;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if flat < tensor.len() {
                return (t, flat);
            }
            flat -= tensor.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: Params,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs `h^0 .. h^L`.
    hs: Vec<Array2<f64>>,
    /// `A h^l` per layer.
    aggregated: Vec<Array2<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Array2<f64>>,
    pub t: Array2<f64>,
}

fn input_features(inst: &TspInstance) -> Array2<f64> {
    Array2::from_shape_fn((inst.n(), 2), |(i, k)| if k == 0 { inst.coords[i].0 } else { inst.coords[i].1 })
}

/// Column-wise softmax with per-column max subtraction.
pub fn column_softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut t = z.clone();
    for mut col in t.axis_iter_mut(Axis(1)) {
        let max = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - max).exp());
        let s = col.sum();
        col /= s;
    }
    t
}

impl EncoderModel {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
        };
        let mut tensors = Vec::with_capacity(3 * config.layers + 2);
        let mut fan_in = 2;
        for _ in 0..config.layers {
            tensors.push(uniform(fan_in, config.hidden));
            tensors.push(uniform(fan_in, config.hidden));
            tensors.push(Array2::zeros((1, config.hidden)));
            fan_in = config.hidden;
        }
        tensors.push(uniform(fan_in, config.m));
        tensors.push(Array2::zeros((1, config.m)));
        Ok(Self { config, params: Params { tensors } })
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.config.layers {
            names.push(format!("layer{l}.w_self"));
            names.push(format!("layer{l}.w_nbr"));
            names.push(format!("layer{l}.bias"));
        }
        names.push("out.weight".into());
        names.push("out.bias".into());
        names
    }

    fn layer(&self, l: usize) -> (&Array2<f64>, &Array2<f64>, &Array2<f64>) {
        let t = &self.params.tensors;
        (&t[3 * l], &t[3 * l + 1], &t[3 * l + 2])
    }

    fn head(&self) -> (&Array2<f64>, &Array2<f64>) {
        let k = 3 * self.config.layers;
        (&self.params.tensors[k], &self.params.tensors[k + 1])
    }

    pub fn forward(&self, inst: &TspInstance) -> Result<SoftAssignment> {
        let graph = build_graph(inst, &self.config);
        Ok(SoftAssignment::from_softmax(self.forward_cached(inst, &graph)?.t))
    }

    pub fn forward_cached(&self, inst: &TspInstance, graph: &Adjacency) -> Result<ForwardCache> {
        let mut h = input_features(inst);
        let mut hs = Vec::with_capacity(self.config.layers + 1);
        let mut aggregated = Vec::with_capacity(self.config.layers);
        let mut pre = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (w_self, w_nbr, b) = self.layer(l);
            let agg = graph.apply(h.view());
            let a = h.dot(w_self) + agg.dot(w_nbr) + b;
            let next = a.mapv(|v| v.max(0.0));
            hs.push(h);
            aggregated.push(agg);
            pre.push(a);
            h = next;
        }
        let (w_out, b_out) = self.head();
        let z = h.dot(w_out) + b_out;
        hs.push(h);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("encoder logits are not finite".into()));
        }
        let t = column_softmax(&z);
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("soft assignment is not finite".into()));
        }
        Ok(ForwardCache { hs, aggregated, pre, t })
    }

    /// Parameter gradients given `dL/dT`.
    pub fn backward_cached(&self, cache: &ForwardCache, graph: &Adjacency, upstream: ArrayView2<f64>) -> Result<Params> {
        if upstream.dim() != cache.t.dim() {
            return Err(Error::Structure(format!(
                "upstream gradient is {:?}, expected {:?}",
                upstream.dim(),
                cache.t.dim()
            )));
        }
        let mut grads = Params::zeros_like(&self.params);
        let layers = self.config.layers;

        // column softmax: dZ = T * (dT - <T, dT>_col)
        let mut gz = Array2::zeros(cache.t.raw_dim());
        for k in 0..cache.t.ncols() {
            let tc = cache.t.column(k);
            let gc = upstream.column(k);
            let inner = tc.dot(&gc);
            Zip::from(gz.column_mut(k))
                .and(&tc)
                .and(&gc)
                .for_each(|o, &t, &g| *o = t * (g - inner));
        }

        let (w_out, _) = self.head();
        let h_last = &cache.hs[layers];
        grads.tensors[3 * layers] = h_last.t().dot(&gz);
        grads.tensors[3 * layers + 1] = sum_rows(&gz);
        let mut gh = gz.dot(&w_out.t());

        for l in (0..layers).rev() {
            let (w_self, w_nbr, _) = self.layer(l);
            let mut ga = gh;
            Zip::from(&mut ga).and(&cache.pre[l]).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            let h = &cache.hs[l];
            grads.tensors[3 * l] = h.t().dot(&ga);
            grads.tensors[3 * l + 1] = cache.aggregated[l].t().dot(&ga);
            grads.tensors[3 * l + 2] = sum_rows(&ga);
            // A is symmetric, so A^T ga = A ga
            gh = ga.dot(&w_self.t()) + graph.apply(ga.view()).dot(&w_nbr.t());
        }
        Ok(grads)
    }

    pub fn backward(&self, inst: &TspInstance, upstream: ArrayView2<f64>) -> Result<Params> {
        let graph = build_graph(inst, &self.config);
        let cache = self.forward_cached(inst, &graph)?;
        self.backward_cached(&cache, &graph, upstream)
    }

    pub fn to_text(&self) -> String {
        self.to_text_with_meta(&[])
    }

    /// Checkpoint text; `meta` lines are written as `# key value` comments.
    pub fn to_text_with_meta(&self, meta: &[(String, String)]) -> String {
        let c = &self.config;
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        let knn = c.knn_k.map_or("auto".to_string(), |k| k.to_string());
        let sigma = c.kernel_sigma.map_or("auto".to_string(), |s| format!("{s:.16e}"));
        let _ = writeln!(out, "{} {} {} {} {}", c.m, c.layers, c.hidden, knn, sigma);
        for (k, v) in meta {
            let _ = writeln!(out, "# {k} {v}");
        }
        for (name, t) in self.parameter_names().iter().zip(&self.params.tensors) {
            let _ = writeln!(out, "{} {} {}", name, t.nrows(), t.ncols());
            for row in t.rows() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                out.push_str(&vals.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let bad = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };

        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(bad(0, "missing checkpoint header")),
        }
        let (ln, cfg_line) = lines.next().ok_or_else(|| bad(1, "missing config line"))?;
        let f: Vec<&str> = cfg_line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(ln, "config line must be 'm layers hidden knn_k kernel_sigma'"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, "bad integer in config line"));
        let config = EncoderConfig {
            m: num(f[0])?,
            layers: num(f[1])?,
            hidden: num(f[2])?,
            knn_k: if f[3] == "auto" { None } else { Some(num(f[3])?) },
            kernel_sigma: if f[4] == "auto" {
                None
            } else {
                Some(f[4].parse().map_err(|_| bad(ln, "bad kernel_sigma"))?)
            },
        };
        config.validate()?;

        let template = Self::init(config, 0)?;
        let names = template.parameter_names();
        let mut tensors = Vec::with_capacity(names.len());
        for (name, shape) in names.iter().zip(&template.params.tensors) {
            let (ln, head) = lines.next().ok_or_else(|| bad(ln, "truncated checkpoint"))?;
            let h: Vec<&str> = head.split_whitespace().collect();
            if h.len() != 3 || h[0] != name {
                return Err(bad(ln, &format!("expected block header for {name}")));
            }
            let rows: usize = h[1].parse().map_err(|_| bad(ln, "bad row count"))?;
            let cols: usize = h[2].parse().map_err(|_| bad(ln, "bad column count"))?;
            if (rows, cols) != shape.dim() {
                return Err(Error::Structure(format!(
                    "{name} is {rows}x{cols}, config implies {:?}",
                    shape.dim()
                )));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines.next().ok_or_else(|| bad(ln, "truncated parameter block"))?;
                let before = values.len();
                for v in row.split_whitespace() {
                    let x: f64 = v.parse().map_err(|_| bad(ln, "bad parameter value"))?;
                    if !x.is_finite() {
                        return Err(bad(ln, "non-finite parameter value"));
                    }
                    values.push(x);
                }
                if values.len() - before != cols {
                    return Err(bad(ln, &format!("expected {cols} values")));
                }
            }
            tensors.push(Array2::from_shape_vec((rows, cols), values).expect("shape checked"));
        }
        Ok(Self { config, params: Params { tensors } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn sum_rows(x: &Array2<f64>) -> Array2<f64> {
    let s: Array1<f64> = x.sum_axis(Axis(0));
    s.insert_axis(Axis(0))
}
