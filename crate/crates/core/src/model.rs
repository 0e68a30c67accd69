//! The full tagger: shared encoder, emission projection and CRF, plus the
//! per-sentence training objective over the text (T) and cross-modal (I+T)
//! views.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfGradient, CrfParams, PosteriorTable};
use crate::encoder::{self, EncoderConfig, EncoderGrad, EncoderParams, EncoderTrace};
use crate::error::{Error, Result};

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Crf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    /// `d × L` emission projection.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub crf: CrfParams,
}

impl Model {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize, max_len: usize, num_labels: usize) -> Self {
        Model {
            encoder: EncoderParams::zeros(config, vocab_size, max_len),
            proj_w: Array2::zeros((config.dim, num_labels)),
            proj_b: Array1::zeros(num_labels),
            crf: CrfParams::zeros(num_labels),
        }
    }

    pub fn init<R: Rng>(
        config: &EncoderConfig,
        vocab_size: usize,
        max_len: usize,
        num_labels: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::init(config, vocab_size, max_len, rng);
        let limit = (6.0 / (config.dim + num_labels) as f64).sqrt();
        let proj_w = Array2::from_shape_fn((config.dim, num_labels), |_| rng.gen_range(-limit..limit));
        Model {
            encoder,
            proj_w,
            proj_b: Array1::zeros(num_labels),
            crf: CrfParams::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.crf.num_labels()
    }

    /// A zero-filled model with identical shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, _, mut t| t.fill(0.0));
        z
    }

    /// All tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, Group, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("embed".to_string(), Group::Encoder, self.encoder.embed.view().into_dyn()),
            ("pos".to_string(), Group::Encoder, self.encoder.pos.view().into_dyn()),
        ];
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            for (name, t) in layer.named() {
                out.push((format!("layer{i}.{name}"), Group::Encoder, t));
            }
        }
        out.push(("proj.w".into(), Group::Crf, self.proj_w.view().into_dyn()));
        out.push(("proj.b".into(), Group::Crf, self.proj_b.view().into_dyn()));
        out.push(("crf.transitions".into(), Group::Crf, self.crf.transitions.view().into_dyn()));
        out.push(("crf.start".into(), Group::Crf, self.crf.start.view().into_dyn()));
        out.push(("crf.end".into(), Group::Crf, self.crf.end.view().into_dyn()));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, Group, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("embed".to_string(), Group::Encoder, self.encoder.embed.view_mut().into_dyn()),
            ("pos".to_string(), Group::Encoder, self.encoder.pos.view_mut().into_dyn()),
        ];
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            for (name, t) in layer.named_mut() {
                out.push((format!("layer{i}.{name}"), Group::Encoder, t));
            }
        }
        out.push(("proj.w".into(), Group::Crf, self.proj_w.view_mut().into_dyn()));
        out.push(("proj.b".into(), Group::Crf, self.proj_b.view_mut().into_dyn()));
        out.push(("crf.transitions".into(), Group::Crf, self.crf.transitions.view_mut().into_dyn()));
        out.push(("crf.start".into(), Group::Crf, self.crf.start.view_mut().into_dyn()));
        out.push(("crf.end".into(), Group::Crf, self.crf.end.view_mut().into_dyn()));
        out
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, Group, ArrayViewMutD<'_, f64>)) {
        for (name, group, t) in self.named_mut() {
            f(&name, group, t);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Add `scale · grad` into this buffer.
    pub fn accumulate(&mut self, grad: &ModelGrad, scale: f64) {
        for (id, row) in &grad.encoder.embed_rows {
            self.encoder.embed.row_mut(*id).scaled_add(scale, row);
        }
        self.encoder.pos.scaled_add(scale, &grad.encoder.pos);
        for (dst, src) in self.encoder.layers.iter_mut().zip(&grad.encoder.layers) {
            for ((_, mut d), (_, s)) in dst.named_mut().into_iter().zip(src.named()) {
                d.scaled_add(scale, &s);
            }
        }
        self.proj_w.scaled_add(scale, &grad.proj_w);
        self.proj_b.scaled_add(scale, &grad.proj_b);
        self.crf.transitions.scaled_add(scale, &grad.crf.transitions);
        self.crf.start.scaled_add(scale, &grad.crf.start);
        self.crf.end.scaled_add(scale, &grad.crf.end);
    }

    /// Encode one view and compute emissions for its first `n` positions.
    pub fn forward_view(&self, ids: &[usize], n: usize) -> Result<ViewForward> {
        if n == 0 || n > ids.len() {
            return Err(Error::Shape(format!("{n} labelled positions in an input of {}", ids.len())));
        }
        let (reps, trace) = encoder::encode_traced(ids, &self.encoder)?;
        let mask: Vec<bool> = (0..ids.len()).map(|i| i < n).collect();
        let emissions = encoder::emissions(reps.view(), &mask, &self.proj_w, &self.proj_b)?;
        Ok(ViewForward {
            n,
            reps,
            emissions,
            trace,
        })
    }

    /// Representations and emissions without the backward trace.
    pub fn emissions(&self, ids: &[usize], n: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let f = self.forward_view(ids, n)?;
        Ok((f.reps, f.emissions))
    }

    /// Viterbi decode of the first `n` positions of `ids`.
    pub fn decode(&self, ids: &[usize], n: usize) -> Result<Vec<usize>> {
        let (_, em) = self.emissions(ids, n)?;
        Ok(crf::viterbi(em.view(), &self.crf)?.0)
    }

    fn backward_view(&self, view: &ViewForward, crf_grad: &CrfGradient, grad: &mut ModelGrad) -> Result<()> {
        let d_em = &crf_grad.emissions;
        let sentence = view.reps.slice(s![..view.n, ..]);
        grad.proj_w += &sentence.t().dot(d_em);
        grad.proj_b += &d_em.sum_axis(Axis(0));
        grad.crf.transitions += &crf_grad.crf.transitions;
        grad.crf.start += &crf_grad.crf.start;
        grad.crf.end += &crf_grad.crf.end;
        let mut d_reps = Array2::zeros(view.reps.dim());
        d_reps.slice_mut(s![..view.n, ..]).assign(&d_em.dot(&self.proj_w.t()));
        let g = encoder::backward(&view.trace, &self.encoder, &d_reps)?;
        grad.encoder.embed_rows.extend(g.embed_rows);
        grad.encoder.pos += &g.pos;
        for (dst, src) in grad.encoder.layers.iter_mut().zip(&g.layers) {
            for ((_, mut d), (_, s)) in dst.named_mut().into_iter().zip(src.named()) {
                d += &s;
            }
        }
        Ok(())
    }
}

pub struct ViewForward {
    pub n: usize,
    pub reps: Array2<f64>,
    pub emissions: Array2<f64>,
    trace: EncoderTrace,
}

/// Gradient of one sentence's loss; embedding rows are sparse.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub encoder: EncoderGrad,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub crf: CrfParams,
}

impl ModelGrad {
    pub fn zeros_for(model: &Model) -> Self {
        ModelGrad {
            encoder: EncoderGrad::zeros_for(&model.encoder),
            proj_w: Array2::zeros(model.proj_w.dim()),
            proj_b: Array1::zeros(model.proj_b.len()),
            crf: CrfParams::zeros(model.num_labels()),
        }
    }

    /// Dense copy with the same layout as `model`.
    pub fn to_dense(&self, model: &Model) -> Model {
        let mut dense = model.zeros_like();
        dense.accumulate(self, 1.0);
        dense
    }
}

/// A sentence prepared for training: ids of both views and gold label ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text_ids: Vec<usize>,
    /// Sentence ids followed by context ids.
    pub cross_ids: Vec<usize>,
    pub gold: Vec<usize>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub text: bool,
    pub cross: bool,
    pub cva: bool,
}

impl Objective {
    pub const ITA: Objective = Objective {
        text: true,
        cross: true,
        cva: true,
    };
}

/// Loss terms of one sentence. Inactive terms are zero, except that the
/// diagnostics are filled whenever both views were run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub text: f64,
    pub cross: f64,
    pub cva: f64,
    pub kl: f64,
    pub distance: f64,
    pub total: f64,
}

/// Gradients of one sentence split by the view they flow through.
///
/// `cross` is present whenever the I+T view was run. Under the CVA term the
/// I+T posteriors are a constant teacher, so that path receives only the
/// I+T likelihood gradient (zero when that term is inactive).
#[derive(Debug, Clone)]
pub struct PathGradients {
    pub text: Option<ModelGrad>,
    pub cross: Option<ModelGrad>,
}

impl PathGradients {
    pub fn merged(self, model: &Model) -> ModelGrad {
        let mut out = ModelGrad::zeros_for(model);
        for g in [self.text, self.cross].into_iter().flatten() {
            out.encoder.embed_rows.extend(g.encoder.embed_rows);
            out.encoder.pos += &g.encoder.pos;
            for (dst, src) in out.encoder.layers.iter_mut().zip(&g.encoder.layers) {
                for ((_, mut d), (_, s)) in dst.named_mut().into_iter().zip(src.named()) {
                    d += &s;
                }
            }
            out.proj_w += &g.proj_w;
            out.proj_b += &g.proj_b;
            out.crf.transitions += &g.crf.transitions;
            out.crf.start += &g.crf.start;
            out.crf.end += &g.crf.end;
        }
        out
    }
}

fn add_crf_grad(acc: Option<CrfGradient>, g: CrfGradient) -> CrfGradient {
    match acc {
        Some(mut acc) => {
            acc.emissions += &g.emissions;
            acc.crf.transitions += &g.crf.transitions;
            acc.crf.start += &g.crf.start;
            acc.crf.end += &g.crf.end;
            acc
        }
        None => g,
    }
}

fn zero_crf_grad(n: usize, l: usize) -> CrfGradient {
    CrfGradient {
        emissions: Array2::zeros((n, l)),
        crf: CrfParams::zeros(l),
    }
}

/// Loss terms and per-view gradients of one sentence.
pub fn sentence_gradients(model: &Model, example: &Example, objective: Objective) -> Result<(LossTerms, PathGradients)> {
    let n = example.len();
    let l = model.num_labels();
    let need_text = objective.text || objective.cva;
    let need_cross = objective.cross || objective.cva;
    let mut terms = LossTerms::default();

    let text = need_text.then(|| model.forward_view(&example.text_ids, n)).transpose()?;
    let cross = need_cross.then(|| model.forward_view(&example.cross_ids, n)).transpose()?;

    let mut text_up: Option<CrfGradient> = None;
    let mut cross_up: Option<CrfGradient> = None;
    if let (Some(view), true) = (&text, objective.text) {
        let (loss, g) = crf::nll_backward(view.emissions.view(), &model.crf, &example.gold)?;
        terms.text = loss;
        text_up = Some(g);
    }
    if let (Some(view), true) = (&cross, objective.cross) {
        let (loss, g) = crf::nll_backward(view.emissions.view(), &model.crf, &example.gold)?;
        terms.cross = loss;
        cross_up = Some(g);
    }
    if let (Some(t), Some(c)) = (&text, &cross) {
        terms.distance = encoder::representation_distance(t.reps.slice(s![..n, ..]), c.reps.slice(s![..n, ..]))?;
        let teacher = crf::posterior_marginals(c.emissions.view(), &model.crf)?;
        if objective.cva {
            let (loss, g) = crf::cva_backward(&teacher, t.emissions.view(), &model.crf)?;
            terms.cva = loss.cross_entropy;
            terms.kl = loss.kl;
            text_up = Some(add_crf_grad(text_up, g));
        } else {
            let student = crf::posterior_marginals(t.emissions.view(), &model.crf)?;
            terms.kl = crf::cva_loss(&teacher, &student)?.kl;
        }
    }

    let mut paths = PathGradients { text: None, cross: None };
    if let Some(view) = &text {
        let mut g = ModelGrad::zeros_for(model);
        let up = text_up.unwrap_or_else(|| zero_crf_grad(n, l));
        model.backward_view(view, &up, &mut g)?;
        paths.text = Some(g);
    }
    if let Some(view) = &cross {
        let mut g = ModelGrad::zeros_for(model);
        let up = cross_up.unwrap_or_else(|| zero_crf_grad(n, l));
        model.backward_view(view, &up, &mut g)?;
        paths.cross = Some(g);
    }
    terms.total = terms.text + terms.cross + if objective.cva { terms.cva } else { 0.0 };
    Ok((terms, paths))
}

/// Loss terms and the total gradient of one sentence.
pub fn sentence_loss(model: &Model, example: &Example, objective: Objective) -> Result<(LossTerms, ModelGrad)> {
    let (terms, paths) = sentence_gradients(model, example, objective)?;
    Ok((terms, paths.merged(model)))
}

/// Loss value only; the CVA teacher is recomputed from the current model.
pub fn sentence_loss_value(model: &Model, example: &Example, objective: Objective) -> Result<LossTerms> {
    sentence_loss(model, example, objective).map(|(t, _)| t)
}

/// Posterior table of the I+T view, as used for the CVA teacher.
pub fn cross_posteriors(model: &Model, example: &Example) -> Result<PosteriorTable> {
    let (_, em) = model.emissions(&example.cross_ids, example.len())?;
    crf::posterior_marginals(em.view(), &model.crf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> Model {
        let cfg = EncoderConfig {
            dim: 4,
            ff_dim: 8,
            layers: 1,
            heads: 2,
        };
        Model::init(&cfg, 10, 16, 3, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn total_is_sum_of_terms() {
        let model = small_model(1);
        let ex = Example {
            text_ids: vec![1, 2, 3],
            cross_ids: vec![1, 2, 3, 7, 8],
            gold: vec![0, 1, 2],
        };
        let (t, _) = sentence_loss(&model, &ex, Objective::ITA).unwrap();
        assert_abs_diff_eq!(t.total, t.text + t.cross + t.cva, epsilon = 1e-12);
        let joint = Objective { cva: false, ..Objective::ITA };
        let (j, _) = sentence_loss(&model, &ex, joint).unwrap();
        assert_eq!(j.total, j.text + j.cross);
        assert!(j.kl >= 0.0);
    }

    #[test]
    fn identical_views_cva_is_entropy() {
        let model = small_model(2);
        let ex = Example {
            text_ids: vec![4, 5],
            cross_ids: vec![4, 5],
            gold: vec![1, 1],
        };
        let (t, _) = sentence_loss(&model, &ex, Objective::ITA).unwrap();
        let q = cross_posteriors(&model, &ex).unwrap();
        let entropy: f64 = q.0.iter().map(|p| -p * (p + crf::PROB_EPS).ln()).sum();
        assert_abs_diff_eq!(t.cva, entropy, epsilon = 1e-12);
        assert_abs_diff_eq!(t.kl, 0.0, epsilon = 1e-12);
        assert_eq!(t.distance, 0.0);
    }

    #[test]
    fn named_tensors_are_stable() {
        let model = small_model(0);
        let names: Vec<String> = model.named().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names[0], "embed");
        assert_eq!(names.last().unwrap(), "crf.end");
        assert_eq!(names.len(), 2 + 16 + 5);
    }
}
