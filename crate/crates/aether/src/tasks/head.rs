//! Small task head: one ReLU hidden layer plus a linear output, with a
//! pure-linear special case when the hidden width is zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{axpy, matvec, matvec_t, outer_acc, Tensor2D};
use crate::rng;

use super::metrics::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Classification,
    Distribution,
    Regression,
}

/// Two-layer MLP head `logits = w2 relu(w1 r + b1) + b2`, or `w2 r + b2`
/// when constructed with zero hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub hidden: Option<(Tensor2D, Vec<f64>)>,
    pub w2: Tensor2D,
    pub b2: Vec<f64>,
    pub mode: TaskMode,
}

#[derive(Debug, Clone)]
pub struct TaskHeadGrads {
    pub hidden: Option<(Tensor2D, Vec<f64>)>,
    pub w2: Tensor2D,
    pub b2: Vec<f64>,
}

fn kaiming(rows: usize, cols: usize, seed: u64, tag: &str) -> Tensor2D {
    let bound = (6.0 / cols as f64).sqrt();
    let mut stream = rng::stream(seed, tag);
    let data = (0..rows * cols)
        .map(|_| bound * (2.0 * stream.random::<f64>() - 1.0))
        .collect();
    Tensor2D { rows, cols, data }
}

impl TaskHead {
    /// `hidden_units == 0` selects the pure-linear head.
    pub fn init(
        input: usize,
        hidden_units: usize,
        outputs: usize,
        mode: TaskMode,
        seed: u64,
    ) -> Self {
        if hidden_units == 0 {
            TaskHead {
                hidden: None,
                w2: kaiming(outputs, input, seed, "task.w2"),
                b2: vec![0.0; outputs],
                mode,
            }
        } else {
            TaskHead {
                hidden: Some((
                    kaiming(hidden_units, input, seed, "task.w1"),
                    vec![0.0; hidden_units],
                )),
                w2: kaiming(outputs, hidden_units, seed, "task.w2"),
                b2: vec![0.0; outputs],
                mode,
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some((w1, _)) => w1.cols,
            None => self.w2.cols,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows
    }

    /// Logits for one input vector.
    pub fn predict(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "task head input has length {}, expected {}",
                r.len(),
                self.input_dim()
            )));
        }
        let mut logits = vec![0.0; self.output_dim()];
        match &self.hidden {
            None => matvec(&self.w2, r, &mut logits),
            Some((w1, b1)) => {
                let mut h = vec![0.0; w1.rows];
                matvec(w1, r, &mut h);
                for (hi, bi) in h.iter_mut().zip(b1) {
                    *hi = (*hi + bi).max(0.0);
                }
                matvec(&self.w2, &h, &mut logits);
            }
        }
        for (l, b) in logits.iter_mut().zip(&self.b2) {
            *l += b;
        }
        Ok(logits)
    }

    pub fn zero_grads(&self) -> TaskHeadGrads {
        TaskHeadGrads {
            hidden: self
                .hidden
                .as_ref()
                .map(|(w1, b1)| (Tensor2D::zeros(w1.rows, w1.cols), vec![0.0; b1.len()])),
            w2: Tensor2D::zeros(self.w2.rows, self.w2.cols),
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Full-batch loss and parameter gradients. `targets` is one row per
    /// sample: a one-hot index for classification, a histogram for
    /// distribution targets, or raw values for regression.
    pub fn batch_loss_grads(
        &self,
        x: &[Vec<f64>],
        targets: &BatchTargets<'_>,
        grads: &mut TaskHeadGrads,
    ) -> Result<f64> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Task("empty batch".into()));
        }
        targets.check_len(n)?;
        let c = self.output_dim();
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        let mut h = vec![0.0; self.hidden.as_ref().map_or(0, |(w1, _)| w1.rows)];
        let mut pre = h.clone();
        let mut dh = h.clone();
        for (i, r) in x.iter().enumerate() {
            // forward
            let mut logits = vec![0.0; c];
            match &self.hidden {
                None => matvec(&self.w2, r, &mut logits),
                Some((w1, b1)) => {
                    matvec(w1, r, &mut pre);
                    for (p, b) in pre.iter_mut().zip(b1) {
                        *p += b;
                    }
                    for (hi, p) in h.iter_mut().zip(&pre) {
                        *hi = p.max(0.0);
                    }
                    matvec(&self.w2, &h, &mut logits);
                }
            }
            for (l, b) in logits.iter_mut().zip(&self.b2) {
                *l += b;
            }

            // per-sample loss and dlogits
            let mut dlogits = vec![0.0; c];
            match targets {
                BatchTargets::Classes(y) => {
                    let yi = y[i];
                    if yi >= c {
                        return Err(Error::Task(format!(
                            "label {yi} out of range for {c} classes"
                        )));
                    }
                    let p = softmax(&logits);
                    total -= p[yi].ln();
                    for k in 0..c {
                        dlogits[k] = (p[k] - if k == yi { 1.0 } else { 0.0 }) * inv_n;
                    }
                }
                BatchTargets::Distributions(q) => {
                    let qi = &q[i];
                    if qi.len() != c {
                        return Err(Error::Task(format!(
                            "target histogram has {} bins, expected {c}",
                            qi.len()
                        )));
                    }
                    let p = softmax(&logits);
                    for k in 0..c {
                        if qi[k] > 0.0 {
                            total -= qi[k] * p[k].ln();
                        }
                        dlogits[k] = (p[k] - qi[k]) * inv_n;
                    }
                }
                BatchTargets::Values(t) => {
                    let ti = &t[i];
                    if ti.len() != c {
                        return Err(Error::Task(format!(
                            "regression target has {} values, expected {c}",
                            ti.len()
                        )));
                    }
                    for k in 0..c {
                        let diff = logits[k] - ti[k];
                        total += diff * diff;
                        dlogits[k] = 2.0 * diff * inv_n;
                    }
                }
            }

            // backward
            match (&self.hidden, &mut grads.hidden) {
                (None, None) => {
                    outer_acc(&dlogits, r, &mut grads.w2);
                }
                (Some((w1, _)), Some((gw1, gb1))) => {
                    outer_acc(&dlogits, &h, &mut grads.w2);
                    matvec_t(&self.w2, &dlogits, &mut dh);
                    for (d, p) in dh.iter_mut().zip(&pre) {
                        if *p <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    outer_acc(&dh, r, gw1);
                    axpy(1.0, &dh, gb1);
                    let _ = w1;
                }
                _ => return Err(Error::Task("gradient buffers do not match head".into())),
            }
            axpy(1.0, &dlogits, &mut grads.b2);
        }
        Ok(total * inv_n)
    }

    /// Mean loss over a batch without touching gradients.
    pub fn batch_loss(&self, x: &[Vec<f64>], targets: &BatchTargets<'_>) -> Result<f64> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Task("empty batch".into()));
        }
        targets.check_len(n)?;
        let c = self.output_dim();
        let mut total = 0.0;
        for (i, r) in x.iter().enumerate() {
            let logits = self.predict(r)?;
            match targets {
                BatchTargets::Classes(y) => {
                    let p = softmax(&logits);
                    total -= p[y[i]].ln();
                }
                BatchTargets::Distributions(q) => {
                    let p = softmax(&logits);
                    for k in 0..c {
                        if q[i][k] > 0.0 {
                            total -= q[i][k] * p[k].ln();
                        }
                    }
                }
                BatchTargets::Values(t) => {
                    for k in 0..c {
                        let diff = logits[k] - t[i][k];
                        total += diff * diff;
                    }
                }
            }
        }
        Ok(total / n as f64)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some((w1, b1)) = &mut self.hidden {
            out.push(w1.data.as_mut_slice());
            out.push(b1.as_mut_slice());
        }
        out.push(self.w2.data.as_mut_slice());
        out.push(self.b2.as_mut_slice());
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some((w1, b1)) = &self.hidden {
            out.push(w1.data.len());
            out.push(b1.len());
        }
        out.push(self.w2.data.len());
        out.push(self.b2.len());
        out
    }
}

impl TaskHeadGrads {
    pub fn as_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some((w1, b1)) = &self.hidden {
            out.push(&w1.data);
            out.push(b1);
        }
        out.push(&self.w2.data);
        out.push(&self.b2);
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.as_slices().concat()
    }
}

/// Targets for one full-batch pass.
pub enum BatchTargets<'a> {
    Classes(&'a [usize]),
    Distributions(&'a [Vec<f64>]),
    Values(&'a [Vec<f64>]),
}

impl BatchTargets<'_> {
    fn check_len(&self, n: usize) -> Result<()> {
        let len = match self {
            BatchTargets::Classes(y) => y.len(),
            BatchTargets::Distributions(q) => q.len(),
            BatchTargets::Values(t) => t.len(),
        };
        if len != n {
            return Err(Error::Task(format!("{len} targets for {n} samples")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_diff_max_rel_err;

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut head = TaskHead::init(4, 6, 3, TaskMode::Classification, 0);
        if let Some((w1, b1)) = &mut head.hidden {
            w1.fill(0.0);
            b1.fill(0.0);
        }
        head.w2.fill(0.0);
        let logits = head.predict(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_identity_head_passes_input_through() {
        let mut head = TaskHead::init(3, 0, 3, TaskMode::Regression, 0);
        head.w2.fill(0.0);
        for i in 0..3 {
            head.w2.set(i, i, 1.0);
        }
        head.b2.fill(0.0);
        let r = [0.5, -1.25, 2.0];
        assert_eq!(head.predict(&r).unwrap(), r.to_vec());
    }

    #[test]
    fn predict_matches_straight_line_oracle() {
        let head = TaskHead::init(5, 7, 4, TaskMode::Classification, 3);
        let r: Vec<f64> = (0..5).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let logits = head.predict(&r).unwrap();

        let (w1, b1) = head.hidden.as_ref().unwrap();
        let mut h = vec![0.0; 7];
        for i in 0..7 {
            let mut s = b1[i];
            for j in 0..5 {
                s += w1.get(i, j) * r[j];
            }
            h[i] = if s > 0.0 { s } else { 0.0 };
        }
        for k in 0..4 {
            let mut s = head.b2[k];
            for i in 0..7 {
                s += head.w2.get(k, i) * h[i];
            }
            assert!((logits[k] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_logit_classification_loss_is_ln_c() {
        let mut head = TaskHead::init(2, 0, 10, TaskMode::Classification, 0);
        head.w2.fill(0.0);
        head.b2.fill(0.0);
        let x = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let y = vec![3usize, 7];
        let loss = head.batch_loss(&x, &BatchTargets::Classes(&y)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_distribution_loss_is_ln_b() {
        let mut head = TaskHead::init(2, 0, 9, TaskMode::Distribution, 0);
        head.w2.fill(0.0);
        head.b2.fill(0.0);
        let x = vec![vec![0.3, -0.7]];
        let q = vec![vec![1.0 / 9.0; 9]];
        let loss = head.batch_loss(&x, &BatchTargets::Distributions(&q)).unwrap();
        assert!((loss - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_all_modes() {
        let x = vec![
            vec![0.4, -0.3, 0.9],
            vec![-1.1, 0.2, 0.5],
            vec![0.0, 0.7, -0.6],
        ];
        let y = vec![0usize, 2, 1];
        let q = vec![
            vec![0.2, 0.3, 0.5],
            vec![1.0, 0.0, 0.0],
            vec![0.1, 0.1, 0.8],
        ];
        let t = vec![
            vec![0.5, -0.5, 1.0],
            vec![0.0, 0.25, -1.0],
            vec![2.0, 0.0, 0.3],
        ];
        for (mode, hidden) in [
            (TaskMode::Classification, 5),
            (TaskMode::Distribution, 5),
            (TaskMode::Regression, 5),
            (TaskMode::Classification, 0),
        ] {
            let head = TaskHead::init(3, hidden, 3, mode, 7);
            let targets = match mode {
                TaskMode::Classification => BatchTargets::Classes(&y),
                TaskMode::Distribution => BatchTargets::Distributions(&q),
                TaskMode::Regression => BatchTargets::Values(&t),
            };
            let mut grads = head.zero_grads();
            head.batch_loss_grads(&x, &targets, &mut grads).unwrap();
            let analytic = grads.flat();

            // Flatten parameters, evaluate loss as a function of the flat
            // vector by rebuilding the head each call.
            let mut flat: Vec<f64> = Vec::new();
            if let Some((w1, b1)) = &head.hidden {
                flat.extend_from_slice(&w1.data);
                flat.extend_from_slice(b1);
            }
            flat.extend_from_slice(&head.w2.data);
            flat.extend_from_slice(&head.b2);

            let proto = head.clone();
            let rebuild = |flat: &[f64]| -> TaskHead {
                let mut h = proto.clone();
                let mut at = 0;
                if let Some((w1, b1)) = &mut h.hidden {
                    let (nw, nb) = (w1.data.len(), b1.len());
                    w1.data.copy_from_slice(&flat[at..at + nw]);
                    at += nw;
                    b1.copy_from_slice(&flat[at..at + nb]);
                    at += nb;
                }
                let (nw, nb) = (h.w2.data.len(), h.b2.len());
                h.w2.data.copy_from_slice(&flat[at..at + nw]);
                at += nw;
                h.b2.copy_from_slice(&flat[at..at + nb]);
                h
            };
            let err = central_diff_max_rel_err(&mut flat, &analytic, 1e-5, |f| {
                let h = rebuild(f);
                let targets = match mode {
                    TaskMode::Classification => BatchTargets::Classes(&y),
                    TaskMode::Distribution => BatchTargets::Distributions(&q),
                    TaskMode::Regression => BatchTargets::Values(&t),
                };
                h.batch_loss(&x, &targets).unwrap()
            });
            assert!(err < 1e-4, "mode {mode:?} hidden {hidden}: err {err}");
        }
    }
}
