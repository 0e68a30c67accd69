//! Linear-chain CRF over `L` labels.
//!
//! A label sequence `y` of length `n` scores
//! `start[y0] + Σ emissions[i, yi] + Σ transitions[y(i-1), yi] + end[y(n-1)]`.
//! All chain computations run in log space.
//!
//! Besides likelihood, decoding and marginals, this module computes the
//! cross-view alignment loss between two posterior tables and its gradient
//! with respect to the student's emissions and CRF tables. The teacher table
//! is a constant: nothing is propagated into it.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Floor added to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[[prev, next]]`.
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfParams {
    pub fn zeros(num_labels: usize) -> Self {
        CrfParams {
            transitions: Array2::zeros((num_labels, num_labels)),
            start: Array1::zeros(num_labels),
            end: Array1::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &ArrayView2<f64>) -> Result<(usize, usize)> {
        let l = self.num_labels();
        if l == 0 {
            return Err(Error::Shape("CRF has no labels".into()));
        }
        if self.transitions.dim() != (l, l) || self.end.len() != l {
            return Err(Error::Shape("inconsistent CRF tables".into()));
        }
        let (n, cols) = emissions.dim();
        if cols != l {
            return Err(Error::Shape(format!("emissions have {cols} columns, CRF has {l} labels")));
        }
        if n == 0 {
            return Err(Error::Empty("emission table has no rows".into()));
        }
        Ok((n, l))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-space forward and backward tables.
///
/// `alpha[[i, l]]` covers positions `0..=i` ending in `l` (start and the
/// emission at `i` included); `beta[[i, l]]` covers positions after `i`
/// given `y_i = l` (end included, emission at `i` excluded).
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub log_z: f64,
}

pub fn forward_backward(emissions: ArrayView2<f64>, crf: &CrfParams) -> Result<ForwardBackward> {
    let (n, l) = crf.check(&emissions)?;
    let t = &crf.transitions;
    let mut alpha = Array2::zeros((n, l));
    for y in 0..l {
        alpha[[0, y]] = crf.start[y] + emissions[[0, y]];
    }
    for i in 1..n {
        for y in 0..l {
            let prev = alpha.row(i - 1);
            alpha[[i, y]] = log_sum_exp((0..l).map(|k| prev[k] + t[[k, y]])) + emissions[[i, y]];
        }
    }
    let mut beta = Array2::zeros((n, l));
    for y in 0..l {
        beta[[n - 1, y]] = crf.end[y];
    }
    for i in (0..n - 1).rev() {
        for y in 0..l {
            let next = beta.row(i + 1);
            beta[[i, y]] = log_sum_exp((0..l).map(|k| t[[y, k]] + emissions[[i + 1, k]] + next[k]));
        }
    }
    let last = alpha.row(n - 1);
    let log_z = log_sum_exp((0..l).map(|y| last[y] + crf.end[y]));
    Ok(ForwardBackward { alpha, beta, log_z })
}

pub fn score_sequence(emissions: ArrayView2<f64>, crf: &CrfParams, labels: &[usize]) -> Result<f64> {
    let (n, l) = crf.check(&emissions)?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} positions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
        return Err(Error::Shape(format!("label id {bad} out of range for {l} labels")));
    }
    let mut score = crf.start[labels[0]] + crf.end[labels[n - 1]];
    for (i, &y) in labels.iter().enumerate() {
        score += emissions[[i, y]];
        if i > 0 {
            score += crf.transitions[[labels[i - 1], y]];
        }
    }
    Ok(score)
}

/// `log Σ_y exp(score(y))` by the forward recursion.
pub fn log_partition(emissions: ArrayView2<f64>, crf: &CrfParams) -> Result<f64> {
    Ok(forward_backward(emissions, crf)?.log_z)
}

/// Negative log-likelihood of the gold sequence.
pub fn nll(emissions: ArrayView2<f64>, crf: &CrfParams, gold: &[usize]) -> Result<f64> {
    let score = score_sequence(emissions, crf, gold)?;
    Ok(log_partition(emissions, crf)? - score)
}

/// Highest-scoring sequence and its score. Ties go to the lowest label id.
pub fn viterbi(emissions: ArrayView2<f64>, crf: &CrfParams) -> Result<(Vec<usize>, f64)> {
    let (n, l) = crf.check(&emissions)?;
    let mut delta: Vec<f64> = (0..l).map(|y| crf.start[y] + emissions[[0, y]]).collect();
    let mut back = vec![vec![0usize; l]; n];
    for i in 1..n {
        let mut next = vec![0.0; l];
        for y in 0..l {
            let mut best = 0;
            let mut best_score = delta[0] + crf.transitions[[0, y]];
            for k in 1..l {
                let s = delta[k] + crf.transitions[[k, y]];
                if s > best_score {
                    best = k;
                    best_score = s;
                }
            }
            back[i][y] = best;
            next[y] = best_score + emissions[[i, y]];
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = delta[0] + crf.end[0];
    for y in 1..l {
        let s = delta[y] + crf.end[y];
        if s > best_score {
            last = y;
            best_score = s;
        }
    }
    let mut path = vec![last; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok((path, best_score))
}

/// Per-position label marginals, `n × L`, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable(pub Array2<f64>);

impl PosteriorTable {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

fn marginals_from(fb: &ForwardBackward) -> Array2<f64> {
    let mut q = &fb.alpha + &fb.beta;
    q.mapv_inplace(|v| (v - fb.log_z).exp());
    q
}

pub fn posterior_marginals(emissions: ArrayView2<f64>, crf: &CrfParams) -> Result<PosteriorTable> {
    let fb = forward_backward(emissions, crf)?;
    Ok(PosteriorTable(marginals_from(&fb)))
}

/// Cross-view alignment loss and its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaLoss {
    /// `-Σ_i Σ_l teacher[i,l] · ln(student[i,l] + ε)`.
    pub cross_entropy: f64,
    /// Entropy of the teacher table, `-Σ teacher · ln(teacher + ε)`.
    pub teacher_entropy: f64,
    /// `cross_entropy - teacher_entropy`.
    pub kl: f64,
}

pub fn cva_loss(teacher: &PosteriorTable, student: &PosteriorTable) -> Result<CvaLoss> {
    if teacher.0.dim() != student.0.dim() {
        return Err(Error::Shape(format!(
            "teacher {:?} vs student {:?}",
            teacher.0.dim(),
            student.0.dim()
        )));
    }
    let mut cross_entropy = 0.0;
    let mut teacher_entropy = 0.0;
    for (&p, &q) in teacher.0.iter().zip(student.0.iter()) {
        cross_entropy -= p * (q + PROB_EPS).ln();
        teacher_entropy -= p * (p + PROB_EPS).ln();
    }
    Ok(CvaLoss {
        cross_entropy,
        teacher_entropy,
        kl: cross_entropy - teacher_entropy,
    })
}

/// Gradient of a scalar loss with respect to emissions and CRF tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub emissions: Array2<f64>,
    pub crf: CrfParams,
}

/// Pairwise marginal `p(y_{i-1} = k, y_i = l)` for `i ≥ 1`.
fn pairwise(fb: &ForwardBackward, emissions: &ArrayView2<f64>, crf: &CrfParams, i: usize, k: usize, l: usize) -> f64 {
    (fb.alpha[[i - 1, k]] + crf.transitions[[k, l]] + emissions[[i, l]] + fb.beta[[i, l]] - fb.log_z).exp()
}

/// NLL and its gradient: expected feature counts minus gold counts.
pub fn nll_backward(emissions: ArrayView2<f64>, crf: &CrfParams, gold: &[usize]) -> Result<(f64, CrfGradient)> {
    let score = score_sequence(emissions, crf, gold)?;
    let fb = forward_backward(emissions, crf)?;
    let (n, l) = emissions.dim();
    let q = marginals_from(&fb);

    let mut grad_em = q.clone();
    for (i, &y) in gold.iter().enumerate() {
        grad_em[[i, y]] -= 1.0;
    }
    let mut grad_start = q.row(0).to_owned();
    grad_start[gold[0]] -= 1.0;
    let mut grad_end = q.row(n - 1).to_owned();
    grad_end[gold[n - 1]] -= 1.0;
    let mut grad_t = Array2::zeros((l, l));
    for i in 1..n {
        for k in 0..l {
            for y in 0..l {
                grad_t[[k, y]] += pairwise(&fb, &emissions, crf, i, k, y);
            }
        }
        grad_t[[gold[i - 1], gold[i]]] -= 1.0;
    }
    Ok((
        fb.log_z - score,
        CrfGradient {
            emissions: grad_em,
            crf: CrfParams {
                transitions: grad_t,
                start: grad_start,
                end: grad_end,
            },
        },
    ))
}

/// Cross-view alignment loss with the gradient taken through the student
/// marginals only.
///
/// With `G = ∂L/∂q` (`q` the student marginals), the gradient with respect
/// to any CRF input `θ` is `Σ G · ∂q/∂θ`. Since `q = ∂ log Z / ∂emissions`,
/// this equals the directional derivative of `∂ log Z / ∂θ` along `G`
/// placed on the emissions, which one tangent sweep through the
/// forward and backward recursions computes exactly.
pub fn cva_backward(
    teacher: &PosteriorTable,
    student_emissions: ArrayView2<f64>,
    crf: &CrfParams,
) -> Result<(CvaLoss, CrfGradient)> {
    let fb = forward_backward(student_emissions, crf)?;
    let q = marginals_from(&fb);
    let student = PosteriorTable(q);
    let loss = cva_loss(teacher, &student)?;
    let q = student.0;
    let (n, l) = q.dim();
    let t = &crf.transitions;

    // Direction on the emissions.
    let mut g = Array2::zeros((n, l));
    for ((i, y), v) in g.indexed_iter_mut() {
        *v = -teacher.0[[i, y]] / (q[[i, y]] + PROB_EPS);
    }

    let mut alpha_dot = Array2::<f64>::zeros((n, l));
    alpha_dot.row_mut(0).assign(&g.row(0));
    for i in 1..n {
        for y in 0..l {
            let lse = fb.alpha[[i, y]] - student_emissions[[i, y]];
            let mut acc = 0.0;
            for k in 0..l {
                let w = (fb.alpha[[i - 1, k]] + t[[k, y]] - lse).exp();
                acc += w * alpha_dot[[i - 1, k]];
            }
            alpha_dot[[i, y]] = acc + g[[i, y]];
        }
    }
    let mut beta_dot = Array2::<f64>::zeros((n, l));
    for i in (0..n - 1).rev() {
        for y in 0..l {
            let mut acc = 0.0;
            for k in 0..l {
                let w = (t[[y, k]] + student_emissions[[i + 1, k]] + fb.beta[[i + 1, k]] - fb.beta[[i, y]]).exp();
                acc += w * (g[[i + 1, k]] + beta_dot[[i + 1, k]]);
            }
            beta_dot[[i, y]] = acc;
        }
    }
    let z_dot: f64 = (0..l)
        .map(|y| (fb.alpha[[n - 1, y]] + crf.end[y] - fb.log_z).exp() * alpha_dot[[n - 1, y]])
        .sum();

    let mut grad_em = Array2::zeros((n, l));
    for ((i, y), v) in grad_em.indexed_iter_mut() {
        *v = q[[i, y]] * (alpha_dot[[i, y]] + beta_dot[[i, y]] - z_dot);
    }
    let mut grad_t = Array2::zeros((l, l));
    for i in 1..n {
        for k in 0..l {
            for y in 0..l {
                let xi = pairwise(&fb, &student_emissions, crf, i, k, y);
                grad_t[[k, y]] += xi * (alpha_dot[[i - 1, k]] + g[[i, y]] + beta_dot[[i, y]] - z_dot);
            }
        }
    }
    let grad_start = grad_em.row(0).to_owned();
    let grad_end = grad_em.row(n - 1).to_owned();
    Ok((
        loss,
        CrfGradient {
            emissions: grad_em,
            crf: CrfParams {
                transitions: grad_t,
                start: grad_start,
                end: grad_end,
            },
        },
    ))
}

/// Row sums of a posterior table; used by tests and diagnostics.
pub fn row_sums(table: &PosteriorTable) -> Array1<f64> {
    table.0.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, l: usize) -> (Array2<f64>, CrfParams) {
        let mut u = || rng.gen_range(-2.0..2.0);
        let em = Array2::from_shape_fn((n, l), |_| u());
        let crf = CrfParams {
            transitions: Array2::from_shape_fn((l, l), |_| u()),
            start: Array1::from_shape_fn(l, |_| u()),
            end: Array1::from_shape_fn(l, |_| u()),
        };
        (em, crf)
    }

    #[test]
    fn uniform_model_closed_forms() {
        let crf = CrfParams::zeros(2);
        let em = Array2::zeros((1, 2));
        assert_abs_diff_eq!(log_partition(em.view(), &crf).unwrap(), 2f64.ln(), epsilon = 1e-12);
        let em = Array2::zeros((3, 2));
        assert_abs_diff_eq!(log_partition(em.view(), &crf).unwrap(), 3.0 * 2f64.ln(), epsilon = 1e-12);
        let crf3 = CrfParams::zeros(3);
        let em = Array2::zeros((2, 3));
        assert_abs_diff_eq!(nll(em.view(), &crf3, &[0, 2]).unwrap(), 2.0 * 3f64.ln(), epsilon = 1e-12);
        let q = posterior_marginals(Array2::zeros((4, 3)).view(), &crf3).unwrap();
        for v in q.0.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
        let (path, score) = viterbi(Array2::zeros((4, 3)).view(), &crf3).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn score_sequence_boundaries() {
        let crf = CrfParams {
            transitions: array![[0.5, -1.0], [2.0, 0.25]],
            start: array![0.1, 0.2],
            end: array![0.3, 0.4],
        };
        let em = array![[1.0, 2.0]];
        assert_abs_diff_eq!(score_sequence(em.view(), &crf, &[1]).unwrap(), 0.2 + 2.0 + 0.4);
        assert_eq!(score_sequence(CrfParams::zeros(2).start.view().insert_axis(Axis(0)), &CrfParams::zeros(2), &[1]).unwrap(), 0.0);
        assert!(score_sequence(em.view(), &crf, &[0, 1]).is_err());
        assert!(score_sequence(em.view(), &crf, &[2]).is_err());
    }

    #[test]
    fn score_sequence_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (em, crf) = random_instance(&mut rng, 4, 3);
        let y = [2, 0, 1, 1];
        let direct = crf.start[2]
            + em[[0, 2]]
            + crf.transitions[[2, 0]]
            + em[[1, 0]]
            + crf.transitions[[0, 1]]
            + em[[2, 1]]
            + crf.transitions[[1, 1]]
            + em[[3, 1]]
            + crf.end[1];
        assert_abs_diff_eq!(score_sequence(em.view(), &crf, &y).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn single_position_marginal_is_softmax() {
        let crf = CrfParams {
            transitions: array![[3.0, -1.0], [0.0, 9.0]],
            start: array![0.5, -0.5],
            end: array![0.0, 1.0],
        };
        let em = array![[0.2, 0.7]];
        let q = posterior_marginals(em.view(), &crf).unwrap();
        let a: f64 = 0.5 + 0.2;
        let b: f64 = -0.5 + 0.7 + 1.0;
        let za = a.exp() / (a.exp() + b.exp());
        assert_abs_diff_eq!(q.0[[0, 0]], za, epsilon = 1e-12);
        assert_abs_diff_eq!(q.0[[0, 1]], 1.0 - za, epsilon = 1e-12);
    }

    #[test]
    fn one_hot_emissions_decode() {
        let mut em = Array2::zeros((5, 4));
        em.column_mut(2).fill(1.0);
        let (path, _) = viterbi(em.view(), &CrfParams::zeros(4)).unwrap();
        assert_eq!(path, vec![2; 5]);
    }

    #[test]
    fn high_margin_nll_vanishes() {
        let mut em = Array2::zeros((3, 3));
        let gold = [1, 0, 2];
        for (i, &y) in gold.iter().enumerate() {
            em[[i, y]] = 1000.0;
        }
        let v = nll(em.view(), &CrfParams::zeros(3), &gold).unwrap();
        assert!((0.0..=1e-6).contains(&v), "{v}");
    }

    #[test]
    fn cva_loss_examples() {
        let uniform = PosteriorTable(array![[0.5, 0.5]]);
        let loss = cva_loss(&uniform, &uniform).unwrap();
        assert_abs_diff_eq!(loss.cross_entropy, 2f64.ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(loss.kl, 0.0, epsilon = 1e-12);

        let one_hot = PosteriorTable(array![[0.0, 1.0, 0.0]]);
        let loss = cva_loss(&one_hot, &one_hot).unwrap();
        assert!(loss.cross_entropy.abs() < 1e-11);
        assert!(loss.kl.abs() < 1e-11);

        assert!(cva_loss(&uniform, &one_hot).is_err());
    }

    #[test]
    fn cva_loss_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut rand_table = || {
                let mut t = Array2::from_shape_fn((3, 4), |_| rng.gen_range(0.01..1.0));
                for mut row in t.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                PosteriorTable(t)
            };
            let p = rand_table();
            let q = rand_table();
            let loss = cva_loss(&p, &q).unwrap();
            let mut direct = 0.0;
            for i in 0..3 {
                for j in 0..4 {
                    direct += p.0[[i, j]] * (p.0[[i, j]] / q.0[[i, j]]).ln();
                }
            }
            assert_abs_diff_eq!(loss.kl, direct, epsilon = 1e-9);
            assert!(loss.kl >= 0.0);
        }
    }

    #[test]
    fn uniform_gold_zero_gradient_row() {
        let (_, grad) = nll_backward(Array2::zeros((2, 3)).view(), &CrfParams::zeros(3), &[0, 0]).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(grad.emissions[[i, 0]], 1.0 / 3.0 - 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(grad.emissions[[i, 1]], 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    fn central_diff(f: &dyn Fn(&Array2<f64>, &CrfParams) -> f64, em: &Array2<f64>, crf: &CrfParams, grad: &CrfGradient) -> f64 {
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for idx in 0..em.len() {
            let mut plus = em.clone();
            let mut minus = em.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&plus, crf) - f(&minus, crf)) / (2.0 * h);
            worst = worst.max(rel(fd, grad.emissions.as_slice().unwrap()[idx]));
        }
        let tables: [(fn(&mut CrfParams) -> &mut [f64], &[f64]); 3] = [
            (|c| c.transitions.as_slice_mut().unwrap(), grad.crf.transitions.as_slice().unwrap()),
            (|c| c.start.as_slice_mut().unwrap(), grad.crf.start.as_slice().unwrap()),
            (|c| c.end.as_slice_mut().unwrap(), grad.crf.end.as_slice().unwrap()),
        ];
        for (access, analytic) in tables {
            for idx in 0..analytic.len() {
                let mut plus = crf.clone();
                let mut minus = crf.clone();
                access(&mut plus)[idx] += h;
                access(&mut minus)[idx] -= h;
                let fd = (f(em, &plus) - f(em, &minus)) / (2.0 * h);
                worst = worst.max(rel(fd, analytic[idx]));
            }
        }
        worst
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let (em, crf) = random_instance(&mut rng, 5, 3);
            let gold: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
            let (_, grad) = nll_backward(em.view(), &crf, &gold).unwrap();
            let f = |e: &Array2<f64>, c: &CrfParams| nll(e.view(), c, &gold).unwrap();
            assert!(central_diff(&f, &em, &crf, &grad) < 1e-4);
        }
    }

    #[test]
    fn cva_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..10 {
            let (em_t, crf_t) = random_instance(&mut rng, 4, 3);
            let teacher = posterior_marginals(em_t.view(), &crf_t).unwrap();
            let (em, crf) = random_instance(&mut rng, 4, 3);
            let (_, grad) = cva_backward(&teacher, em.view(), &crf).unwrap();
            let f = |e: &Array2<f64>, c: &CrfParams| {
                let q = posterior_marginals(e.view(), c).unwrap();
                cva_loss(&teacher, &q).unwrap().cross_entropy
            };
            assert!(central_diff(&f, &em, &crf, &grad) < 1e-4);
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (em, crf) = random_instance(&mut rng, 5, 4);
        let c = 0.75;
        let shifted = em.mapv(|v| v + c);
        let z0 = log_partition(em.view(), &crf).unwrap();
        let z1 = log_partition(shifted.view(), &crf).unwrap();
        assert_abs_diff_eq!(z1 - z0, 5.0 * c, epsilon = 1e-10);
        let q0 = posterior_marginals(em.view(), &crf).unwrap();
        let q1 = posterior_marginals(shifted.view(), &crf).unwrap();
        assert!((&q0.0 - &q1.0).iter().all(|d| d.abs() < 1e-12));
        let (p0, s0) = viterbi(em.view(), &crf).unwrap();
        let (p1, s1) = viterbi(shifted.view(), &crf).unwrap();
        assert_eq!(p0, p1);
        assert_abs_diff_eq!(s1 - s0, 5.0 * c, epsilon = 1e-10);
    }

    #[test]
    fn rows_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (em, crf) = random_instance(&mut rng, 6, 4);
            let q = posterior_marginals(em.view(), &crf).unwrap();
            for s in row_sums(&q) {
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
            }
            assert!(q.0.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let crf = CrfParams::zeros(3);
        assert!(matches!(log_partition(Array2::zeros((0, 3)).view(), &crf), Err(Error::Empty(_))));
        assert!(matches!(log_partition(Array2::zeros((2, 2)).view(), &crf), Err(Error::Shape(_))));
    }
}
