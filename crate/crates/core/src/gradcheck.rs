//! Finite-difference audit of the analytic gradients.
//!
//! Each loss term is checked separately against central differences on a
//! sample of coordinates of every tensor. For the alignment term the teacher
//! posteriors are computed once at the base parameters and held fixed while
//! perturbing, which is exactly the quantity the analytic gradient describes.

use std::fmt;

use ndarray::IxDyn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crf::{self, PosteriorTable};
use crate::error::Result;
use crate::model::{self, Example, Model, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Term {
    #[serde(rename = "L_T")]
    Text,
    #[serde(rename = "L_I+T")]
    Cross,
    #[serde(rename = "L_CVA")]
    Cva,
}

impl Term {
    pub const ALL: [Term; 3] = [Term::Text, Term::Cross, Term::Cva];

    fn objective(self) -> Objective {
        Objective {
            text: self == Term::Text,
            cross: self == Term::Cross,
            cva: self == Term::Cva,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Text => "L_T",
            Term::Cross => "L_I+T",
            Term::Cva => "L_CVA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error. Where the true gradient is
    /// zero the central difference still carries O(step²) truncation error,
    /// so such coordinates are compared absolutely at tolerance × floor.
    pub floor: f64,
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-4,
            samples_per_tensor: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorAudit {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermAudit {
    pub term: Term,
    pub tensors: Vec<TensorAudit>,
}

impl TermAudit {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientAudit {
    pub tolerance: f64,
    pub terms: Vec<TermAudit>,
    /// Largest absolute gradient flowing through the I+T encoder under the
    /// alignment term alone. The teacher is a constant, so this must be 0.
    pub teacher_path_max_abs: f64,
}

impl GradientAudit {
    pub fn passed(&self) -> bool {
        self.teacher_path_max_abs == 0.0 && self.terms.iter().all(|t| t.max_rel_error() <= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn loss_value(model: &Model, example: &Example, term: Term, teacher: &PosteriorTable) -> Result<f64> {
    match term {
        Term::Cva => {
            let (_, em) = model.emissions(&example.text_ids, example.len())?;
            let student = crf::posterior_marginals(em.view(), &model.crf)?;
            Ok(crf::cva_loss(teacher, &student)?.cross_entropy)
        }
        _ => Ok(model::sentence_loss_value(model, example, term.objective())?.total),
    }
}

/// Coordinates to perturb. Embedding rows are drawn from the tokens the
/// example uses, plus one unused row whose gradient must be zero.
fn sample_coords(
    name: &str,
    shape: &[usize],
    example: &Example,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let size: usize = shape.iter().product();
    if name == "embed" {
        let mut rows: Vec<usize> = example.text_ids.iter().chain(&example.cross_ids).copied().collect();
        rows.sort_unstable();
        rows.dedup();
        let mut coords: Vec<Vec<usize>> = (0..count)
            .map(|_| vec![*rows.choose(rng).expect("example has tokens"), rng.gen_range(0..shape[1])])
            .collect();
        if let Some(unused) = (0..shape[0]).find(|r| rows.binary_search(r).is_err()) {
            coords.push(vec![unused, 0]);
        }
        return coords;
    }
    let mut flat: Vec<usize> = (0..size).collect();
    flat.shuffle(rng);
    flat.truncate(count);
    flat.sort_unstable();
    flat.into_iter()
        .map(|mut f| {
            let mut idx = vec![0; shape.len()];
            for (d, &extent) in shape.iter().enumerate().rev() {
                idx[d] = f % extent;
                f /= extent;
            }
            idx
        })
        .collect()
}

fn set_coord(model: &mut Model, tensor: usize, at: &IxDyn, value: f64) {
    model.named_mut().swap_remove(tensor).2[at] = value;
}

fn audit_term(model: &Model, example: &Example, term: Term, config: &AuditConfig) -> Result<TermAudit> {
    let teacher = model::cross_posteriors(model, example)?;
    let (_, grad) = model::sentence_loss(model, example, term.objective())?;
    let dense = grad.to_dense(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let names: Vec<(String, Vec<usize>)> = model
        .named()
        .into_iter()
        .map(|(n, _, t)| (n, t.shape().to_vec()))
        .collect();
    for (ti, (name, shape)) in names.iter().enumerate() {
        let coords = sample_coords(name, shape, example, config.samples_per_tensor, &mut rng);
        let analytic_tensor = dense.named().swap_remove(ti).2.to_owned();
        let mut audit = TensorAudit {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for coord in coords {
            let at = IxDyn(&coord);
            let original = model.named()[ti].2[&at];
            set_coord(&mut probe, ti, &at, original + config.step);
            let plus = loss_value(&probe, example, term, &teacher)?;
            set_coord(&mut probe, ti, &at, original - config.step);
            let minus = loss_value(&probe, example, term, &teacher)?;
            set_coord(&mut probe, ti, &at, original);
            let numeric = (plus - minus) / (2.0 * config.step);
            let analytic = analytic_tensor[&at];
            audit.max_abs_error = audit.max_abs_error.max((analytic - numeric).abs());
            audit.max_rel_error = audit.max_rel_error.max(relative_error(analytic, numeric, config.floor));
        }
        tensors.push(audit);
    }
    Ok(TermAudit { term, tensors })
}

/// Check every loss term of `example` at `model`.
pub fn audit(model: &Model, example: &Example, config: &AuditConfig) -> Result<GradientAudit> {
    let terms = Term::ALL
        .iter()
        .map(|&t| audit_term(model, example, t, config))
        .collect::<Result<Vec<_>>>()?;
    let (_, paths) = model::sentence_gradients(model, example, Term::Cva.objective())?;
    let teacher_path_max_abs = paths
        .cross
        .map(|g| {
            g.to_dense(model)
                .named()
                .iter()
                .flat_map(|(_, _, t)| t.iter().map(|v| v.abs()))
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0);
    Ok(GradientAudit {
        tolerance: config.tolerance,
        terms,
        teacher_path_max_abs,
    })
}
