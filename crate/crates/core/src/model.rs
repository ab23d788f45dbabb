//! Small differentiable classifiers: affine + ReLU chains with exact
//! reverse-mode gradients and a finite-difference oracle.
//!
//! Models are immutable after construction; `forward` and the gradient
//! routines are pure, so concurrent evaluation over samples is safe. All
//! arithmetic is f64. The ReLU subgradient at 0 is taken as 0, and argmax
//! ties break toward the lowest index so predictions are deterministic.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Predicted class: argmax with ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Layer widths from input to output; hidden layers use ReLU, the output
/// layer is identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("architecture needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(Architecture { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Where a model's parameters came from, stored alongside them on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_train: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pgd_steps: Option<usize>,
}

/// A scalar function of the logits together with its exact gradient,
/// used as the head of reverse-mode input differentiation.
pub trait LogitHead {
    fn value(&self, logits: &[f64]) -> f64;
    fn grad(&self, logits: &[f64]) -> Vec<f64>;
}

/// Feed-forward affine + ReLU classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    provenance: Provenance,
}

/// Reusable buffers for one sample's forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `acts[0]` is the input copy, `acts[l]` the post-activation of layer l.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer (needed for the ReLU mask).
    preacts: Vec<Vec<f64>>,
    /// Two ping-pong buffers for the backward sweep.
    back_a: Vec<f64>,
    back_b: Vec<f64>,
}

impl Model {
    pub fn from_parts(
        arch: Architecture,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let layers = arch.layer_count();
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid("parameter count does not match architecture"));
        }
        for l in 0..layers {
            let rows = arch.widths[l + 1];
            let cols = arch.widths[l];
            if weights[l].len() != rows * cols {
                return Err(Error::invalid(format!("layer {l} weight shape mismatch")));
            }
            if biases[l].len() != rows {
                return Err(Error::invalid(format!("layer {l} bias shape mismatch")));
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Model {
            arch,
            weights,
            biases,
            provenance,
        })
    }

    /// He-style uniform random initialization, deterministic given the seed.
    pub fn random_init(arch: Architecture, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = crate::seed::rng(crate::seed::derive(seed, "init"));
        let mut model = Model::zeros(arch);
        for l in 0..model.arch.layer_count() {
            let scale = (2.0 / model.arch.widths[l] as f64).sqrt();
            for w in model.weights[l].iter_mut() {
                *w = rng.random_range(-scale..scale);
            }
        }
        model.provenance = Provenance {
            kind: "random-init".into(),
            seed: Some(seed),
            ..Provenance::default()
        };
        model
    }

    /// All-zero parameters (useful as a training starting point).
    pub fn zeros(arch: Architecture) -> Self {
        let weights = (0..arch.layer_count())
            .map(|l| vec![0.0; arch.widths[l + 1] * arch.widths[l]])
            .collect();
        let biases = (0..arch.layer_count())
            .map(|l| vec![0.0; arch.widths[l + 1]])
            .collect();
        Model {
            arch,
            weights,
            biases,
            provenance: Provenance {
                kind: "zeros".into(),
                ..Provenance::default()
            },
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.arch.class_count()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: Provenance) {
        self.provenance = p;
    }

    pub(crate) fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Weight row `row` of layer `layer` (a view into the row-major storage).
    pub fn weight_row(&self, layer: usize, row: usize) -> &[f64] {
        let cols = self.arch.widths[layer];
        &self.weights[layer][row * cols..(row + 1) * cols]
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.arch.widths.iter().map(|&w| vec![0.0; w]).collect(),
            preacts: self
                .arch
                .widths
                .iter()
                .skip(1)
                .map(|&w| vec![0.0; w])
                .collect(),
            back_a: vec![0.0; *self.arch.widths.iter().max().unwrap()],
            back_b: vec![0.0; *self.arch.widths.iter().max().unwrap()],
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluate the logits for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Logits> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.forward_ws(x, &mut ws);
        Ok(Logits(ws.logits().to_vec()))
    }

    /// Forward pass into caller-owned buffers; the logits stay in `ws`.
    pub fn forward_ws(&self, x: &[f64], ws: &mut Workspace) {
        debug_assert_eq!(x.len(), self.input_dim());
        ws.acts[0].copy_from_slice(x);
        let layers = self.arch.layer_count();
        for l in 0..layers {
            let rows = self.arch.widths[l + 1];
            let cols = self.arch.widths[l];
            let w = &self.weights[l];
            {
                let prev = &ws.acts[l];
                let z = &mut ws.preacts[l];
                for r in 0..rows {
                    let mut acc = self.biases[l][r];
                    let row = &w[r * cols..(r + 1) * cols];
                    for (wi, pi) in row.iter().zip(prev.iter()) {
                        acc += wi * pi;
                    }
                    z[r] = acc;
                }
            }
            let last = l + 1 == layers;
            let z = &ws.preacts[l];
            let out = &mut ws.acts[l + 1];
            for r in 0..rows {
                out[r] = if last { z[r] } else { z[r].max(0.0) };
            }
        }
    }

    /// Reverse-mode gradient of `head(logits)` with respect to the input,
    /// reusing the forward pass already stored in `ws`.
    pub fn input_gradient_ws(&self, head_grad: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        let layers = self.arch.layer_count();
        debug_assert_eq!(head_grad.len(), self.class_count());
        debug_assert_eq!(out.len(), self.input_dim());
        ws.back_a[..head_grad.len()].copy_from_slice(head_grad);
        let mut cur_in_a = true;
        for l in (0..layers).rev() {
            let rows = self.arch.widths[l + 1];
            let cols = self.arch.widths[l];
            let w = &self.weights[l];
            let (cur, next) = if cur_in_a {
                (&ws.back_a, &mut ws.back_b)
            } else {
                (&ws.back_b, &mut ws.back_a)
            };
            // dL/da_{l} = W_l^T dL/dz_{l+1}
            for c in 0..cols {
                let mut acc = 0.0;
                for r in 0..rows {
                    acc += w[r * cols + c] * cur[r];
                }
                next[c] = acc;
            }
            // Apply the ReLU mask of layer l-1 (hidden layers only).
            if l > 0 {
                let z = &ws.preacts[l - 1];
                for c in 0..cols {
                    if z[c] <= 0.0 {
                        next[c] = 0.0;
                    }
                }
            }
            cur_in_a = !cur_in_a;
        }
        let src = if cur_in_a { &ws.back_a } else { &ws.back_b };
        out.copy_from_slice(&src[..self.input_dim()]);
    }

    /// Reverse-mode parameter gradients of `head(logits)`, accumulated into
    /// `dw`/`db` (same shapes as the model parameters). Uses the forward
    /// pass already stored in `ws`.
    pub(crate) fn backward_params_ws(
        &self,
        head_grad: &[f64],
        ws: &mut Workspace,
        dw: &mut [Vec<f64>],
        db: &mut [Vec<f64>],
    ) {
        let layers = self.arch.layer_count();
        ws.back_a[..head_grad.len()].copy_from_slice(head_grad);
        let mut cur_in_a = true;
        for l in (0..layers).rev() {
            let rows = self.arch.widths[l + 1];
            let cols = self.arch.widths[l];
            {
                let cur = if cur_in_a { &ws.back_a } else { &ws.back_b };
                let prev_act = &ws.acts[l];
                for r in 0..rows {
                    db[l][r] += cur[r];
                    let row = &mut dw[l][r * cols..(r + 1) * cols];
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot += cur[r] * prev_act[c];
                    }
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let (cur, next) = if cur_in_a {
                    (&ws.back_a, &mut ws.back_b)
                } else {
                    (&ws.back_b, &mut ws.back_a)
                };
                for c in 0..cols {
                    let mut acc = 0.0;
                    for r in 0..rows {
                        acc += w[r * cols + c] * cur[r];
                    }
                    next[c] = acc;
                }
                let z = &ws.preacts[l - 1];
                let next = if cur_in_a { &mut ws.back_b } else { &mut ws.back_a };
                for c in 0..cols {
                    if z[c] <= 0.0 {
                        next[c] = 0.0;
                    }
                }
                cur_in_a = !cur_in_a;
            }
        }
    }

    /// Exact reverse-mode gradient of `head(forward(x))` w.r.t. `x`.
    pub fn input_gradient(&self, x: &[f64], head: &dyn LogitHead) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.forward_ws(x, &mut ws);
        let hg = head.grad(ws.logits());
        let mut out = vec![0.0; self.input_dim()];
        self.input_gradient_ws(&hg, &mut ws, &mut out);
        Ok(out)
    }

    /// Smallest absolute hidden pre-activation at `x`: the margin to the
    /// nearest ReLU kink (+inf for purely linear models). Gradient tests
    /// sample away from kinks, where finite differences are trustworthy.
    pub fn relu_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.forward_ws(x, &mut ws);
        let hidden = self.arch.layer_count() - 1;
        Ok(ws.preacts[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v.abs())))
    }

    /// Central-difference gradient of the same head; the independent oracle
    /// for the reverse-mode path. No box clipping is applied.
    pub fn finite_diff_gradient(
        &self,
        x: &[f64],
        head: &dyn LogitHead,
        step: f64,
    ) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if step.is_nan() || step <= 0.0 {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        let mut probe = x.to_vec();
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            probe[i] = x[i] + step;
            let plus = head.value(self.forward(&probe)?.as_slice());
            probe[i] = x[i] - step;
            let minus = head.value(self.forward(&probe)?.as_slice());
            probe[i] = x[i];
            grad[i] = (plus - minus) / (2.0 * step);
        }
        Ok(grad)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            architecture: self.arch.widths.clone(),
            class_count: self.class_count(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            seed_provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unknown model format '{}'", doc.format)));
        }
        let arch = Architecture::new(doc.architecture)?;
        if doc.class_count != arch.class_count() {
            return Err(Error::Parse("class_count disagrees with architecture".into()));
        }
        Model::from_parts(arch, doc.weights, doc.biases, doc.seed_provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Model::from_json(&text)
    }
}

impl Workspace {
    /// Logits produced by the most recent `forward_ws` call.
    pub fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

const MODEL_FORMAT: &str = "hofmn-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    architecture: Vec<usize>,
    class_count: usize,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed_provenance: Provenance,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Plain closure-style head for tests.
    pub(crate) struct FnHead<V, G>(pub V, pub G);

    impl<V: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> LogitHead for FnHead<V, G> {
        fn value(&self, logits: &[f64]) -> f64 {
            (self.0)(logits)
        }
        fn grad(&self, logits: &[f64]) -> Vec<f64> {
            (self.1)(logits)
        }
    }

    fn identity2() -> Model {
        let arch = Architecture::new(vec![2, 2]).unwrap();
        Model::from_parts(
            arch,
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
            Provenance::default(),
        )
        .unwrap()
    }

    pub(crate) fn random_mlp(widths: &[usize], seed: u64) -> Model {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        let arch = Architecture::new(widths.to_vec()).unwrap();
        let weights: Vec<Vec<f64>> = (0..arch.layer_count())
            .map(|l| {
                let n = arch.widths()[l + 1] * arch.widths()[l];
                let scale = (2.0 / arch.widths()[l] as f64).sqrt();
                (0..n).map(|_| rng.random_range(-scale..scale)).collect()
            })
            .collect();
        let biases: Vec<Vec<f64>> = (0..arch.layer_count())
            .map(|l| {
                (0..arch.widths()[l + 1])
                    .map(|_| rng.random_range(-0.1..0.1))
                    .collect()
            })
            .collect();
        Model::from_parts(arch, weights, biases, Provenance::default()).unwrap()
    }

    #[test]
    fn identity_model_passes_input_through() {
        let m = identity2();
        let logits = m.forward(&[0.2, 0.9]).unwrap();
        assert_eq!(logits.as_slice(), &[0.2, 0.9]);
        assert_eq!(logits.argmax(), 1);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let m = random_mlp(&[4, 8, 3], 0);
        let x = [0.3, 0.1, 0.9, 0.5];
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        // Independent re-evaluation of the affine/ReLU chain, written without
        // any of the Model internals.
        let m = random_mlp(&[4, 8, 3], 0);
        let x = vec![0.12, 0.78, 0.41, 0.9];
        let mut a = x.clone();
        for l in 0..m.architecture().layer_count() {
            let rows = m.architecture().widths()[l + 1];
            let mut next = vec![0.0; rows];
            for (r, slot) in next.iter_mut().enumerate() {
                let mut acc = m.biases[l][r];
                for (c, &v) in a.iter().enumerate() {
                    acc += m.weight_row(l, r)[c] * v;
                }
                *slot = acc;
            }
            if l + 1 < m.architecture().layer_count() {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            a = next;
        }
        let got = m.forward(&x).unwrap();
        for (g, e) in got.as_slice().iter().zip(a.iter()) {
            assert_eq!(g, e, "forward must equal the reimplemented chain exactly");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = identity2();
        assert!(matches!(
            m.forward(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn linear_gradient_is_analytic() {
        // head = f_0 - f_1 on an identity model: gradient = w_0 - w_1.
        let m = identity2();
        let head = FnHead(|l: &[f64]| l[0] - l[1], |l: &[f64]| {
            let mut g = vec![0.0; l.len()];
            g[0] = 1.0;
            g[1] = -1.0;
            g
        });
        let g = m.input_gradient(&[0.4, 0.6], &head).unwrap();
        assert_eq!(g, vec![1.0, -1.0]);
    }

    #[test]
    fn constant_head_has_zero_gradient() {
        let m = random_mlp(&[3, 6, 4], 2);
        let head = FnHead(|_: &[f64]| 1.5, |l: &[f64]| vec![0.0; l.len()]);
        let g = m.input_gradient(&[0.5, 0.5, 0.5], &head).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_mode_matches_finite_differences() {
        use rand::Rng;
        let mut rng = crate::seed::rng(77);
        let mut checked = 0;
        while checked < 50 {
            let m = random_mlp(&[5, 9, 4], rng.random());
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.95)).collect();
            if near_relu_kink(&m, &x) {
                continue;
            }
            // Quadratic head keeps the comparison away from argmax kinks.
            let head = FnHead(
                |l: &[f64]| l.iter().map(|v| v * v).sum::<f64>(),
                |l: &[f64]| l.iter().map(|v| 2.0 * v).collect(),
            );
            let ad = m.input_gradient(&x, &head).unwrap();
            let fd = m.finite_diff_gradient(&x, &head, 1e-5).unwrap();
            let num: f64 = ad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < 1e-4, "relative error {} too large", num / den);
            checked += 1;
        }
    }

    pub(crate) fn near_relu_kink(m: &Model, x: &[f64]) -> bool {
        m.relu_margin(x).unwrap() < 1e-3
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let m = identity2();
        let head = FnHead(|l: &[f64]| l[0], |l: &[f64]| {
            let mut g = vec![0.0; l.len()];
            g[0] = 1.0;
            g
        });
        assert!(m.finite_diff_gradient(&[0.5, 0.5], &head, 0.0).is_err());
        assert!(m.finite_diff_gradient(&[0.5, 0.5], &head, -1.0).is_err());
    }

    #[test]
    fn finite_diff_quadratic_head_on_linear_model_is_exact() {
        // Quadratic head on linear logits: d/dx sum((Wx+b)^2) = 2 W^T (Wx+b).
        let m = random_mlp(&[3, 2], 4);
        let head = FnHead(
            |l: &[f64]| l.iter().map(|v| v * v).sum::<f64>(),
            |l: &[f64]| l.iter().map(|v| 2.0 * v).collect(),
        );
        let x = [0.3, 0.6, 0.1];
        let logits = m.forward(&x).unwrap();
        let mut analytic = [0.0; 3];
        for (c, slot) in analytic.iter_mut().enumerate() {
            for r in 0..2 {
                *slot += 2.0 * logits.as_slice()[r] * m.weight_row(0, r)[c];
            }
        }
        let fd = m.finite_diff_gradient(&x, &head, 1e-4).unwrap();
        for (a, b) in analytic.iter().zip(&fd) {
            assert!((a - b).abs() / a.abs().max(1e-9) < 1e-6);
        }
    }

    #[test]
    fn linearity_of_linear_model() {
        let m = random_mlp(&[6, 3], 8);
        let x = vec![0.2, 0.4, 0.6, 0.8, 0.1, 0.3];
        let delta = vec![0.05, -0.02, 0.01, 0.0, -0.04, 0.03];
        let xp: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let f0 = m.forward(&x).unwrap();
        let f1 = m.forward(&xp).unwrap();
        for r in 0..3 {
            let wd: f64 = m.weight_row(0, r).iter().zip(&delta).map(|(w, d)| w * d).sum();
            let diff = f1.as_slice()[r] - f0.as_slice()[r];
            assert!((diff - wd).abs() < 1e-10);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = random_mlp(&[4, 5, 3], 13);
        let back = Model::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }
}
