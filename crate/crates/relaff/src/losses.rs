//! Training objectives: the relational similarity-alignment loss, the
//! regression losses (RMSE and 1-CCC), their weighted combination, and the
//! contrastive pretraining baseline. All are built from `tensor` ops so
//! their gradients come from the same checked backward rules.

use serde::{Deserialize, Serialize};

use crate::tensor::{
    add, add_scalar, cosine_matrix, div, ln, mean, mul, row, scale, softmax_rows, sqrt,
    stack_rows, sub, sum, transpose, Result, TensorError, Value,
};

pub const EPS_NORM: f64 = 1e-12;

/// Per-component affine map between a native labelling range and the range
/// used during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRange {
    pub native_lo: f64,
    pub native_hi: f64,
    pub train_lo: f64,
    pub train_hi: f64,
}

/// A labelling scale: per-component ranges plus an optional total-score
/// range for symptom scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScale {
    pub id: String,
    pub components: Vec<ComponentRange>,
    pub total: Option<ComponentRange>,
}

impl LabelScale {
    /// Affect dimensions, native and training range both [-1, 1].
    pub fn affect(c: usize) -> LabelScale {
        LabelScale {
            id: "affect".to_string(),
            components: vec![
                ComponentRange {
                    native_lo: -1.0,
                    native_hi: 1.0,
                    train_lo: -1.0,
                    train_hi: 1.0,
                };
                c
            ],
            total: None,
        }
    }

    /// Arousal annotated in [0,1], valence in [-1,1]; both train in [-1,1].
    pub fn affect_omg() -> LabelScale {
        LabelScale {
            id: "affect_omg".to_string(),
            components: vec![
                ComponentRange {
                    native_lo: 0.0,
                    native_hi: 1.0,
                    train_lo: -1.0,
                    train_hi: 1.0,
                },
                ComponentRange {
                    native_lo: -1.0,
                    native_hi: 1.0,
                    train_lo: -1.0,
                    train_hi: 1.0,
                },
            ],
            total: None,
        }
    }

    /// `n` symptoms rated 1-7; the total over `total_symptoms` symptoms is
    /// scaled back into [1,7] during training.
    pub fn panss(n: usize, total_symptoms: usize) -> LabelScale {
        LabelScale {
            id: "panss".to_string(),
            components: vec![
                ComponentRange {
                    native_lo: 1.0,
                    native_hi: 7.0,
                    train_lo: 1.0,
                    train_hi: 7.0,
                };
                n
            ],
            total: Some(ComponentRange {
                native_lo: total_symptoms as f64,
                native_hi: 7.0 * total_symptoms as f64,
                train_lo: 1.0,
                train_hi: 7.0,
            }),
        }
    }

    /// `n` symptoms rated 0-4 with the total scaled into [0,4].
    pub fn cains(n: usize) -> LabelScale {
        LabelScale {
            id: "cains".to_string(),
            components: vec![
                ComponentRange {
                    native_lo: 0.0,
                    native_hi: 4.0,
                    train_lo: 0.0,
                    train_hi: 4.0,
                };
                n
            ],
            total: Some(ComponentRange {
                native_lo: 0.0,
                native_hi: 4.0 * n as f64,
                train_lo: 0.0,
                train_hi: 4.0,
            }),
        }
    }

    pub fn c(&self) -> usize {
        self.components.len()
    }
}

/// A ground-truth label vector with its scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub y: Vec<f64>,
    pub scale: LabelScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleDirection {
    ToTrainRange,
    ToNativeRange,
}

impl LabelVector {
    pub fn new(y: Vec<f64>, scale: LabelScale) -> LabelVector {
        LabelVector { y, scale }
    }

    /// Affine map between the native and training ranges; round-trips to
    /// within 1e-12. Errors on out-of-range input.
    pub fn scaled(&self, direction: ScaleDirection) -> Result<LabelVector> {
        if self.y.len() != self.scale.components.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_labels",
                lhs: vec![self.y.len()],
                rhs: vec![self.scale.components.len()],
            });
        }
        let mut out = Vec::with_capacity(self.y.len());
        for (i, (v, r)) in self.y.iter().zip(self.scale.components.iter()).enumerate() {
            out.push(scale_component(*v, r, direction, i)?);
        }
        Ok(LabelVector {
            y: out,
            scale: self.scale.clone(),
        })
    }

    /// Training-range values shifted into a strictly positive band for
    /// cosine similarity, where the scale permits all-zero vectors.
    /// Components whose training range excludes zero pass through.
    pub fn for_similarity(&self) -> Vec<f64> {
        self.y
            .iter()
            .zip(self.scale.components.iter())
            .map(|(v, r)| {
                if r.train_lo <= 0.0 && r.train_hi >= 0.0 {
                    0.05 + (v - r.train_lo) / (r.train_hi - r.train_lo) * 0.95
                } else {
                    *v
                }
            })
            .collect()
    }
}

pub fn scale_component(
    v: f64,
    r: &ComponentRange,
    direction: ScaleDirection,
    index: usize,
) -> Result<f64> {
    let (lo, hi, tlo, thi) = match direction {
        ScaleDirection::ToTrainRange => (r.native_lo, r.native_hi, r.train_lo, r.train_hi),
        ScaleDirection::ToNativeRange => (r.train_lo, r.train_hi, r.native_lo, r.native_hi),
    };
    let tol = 1e-9 * (hi - lo).abs();
    if v < lo - tol || v > hi + tol {
        return Err(TensorError::Domain {
            op: "scale_labels",
            what: format!("component {index} value {v} outside [{lo}, {hi}]"),
        });
    }
    Ok(tlo + (v - lo) / (hi - lo) * (thi - tlo))
}

/// Cosine similarity matrix of a stack of rank-1 feature Values;
/// differentiable w.r.t. the rows.
pub fn cosine_similarity_matrix(rows: &[Value]) -> Result<Value> {
    cosine_matrix(&stack_rows(rows)?, EPS_NORM)
}

/// Cosine similarity matrix of plain label rows, as a constant.
pub fn label_similarity_matrix(rows: &[Vec<f64>]) -> Result<Value> {
    let b = rows.len();
    let vals: Vec<Value> = rows
        .iter()
        .map(|r| Value::constant(&[r.len()], r.clone()))
        .collect();
    let m = cosine_matrix(&stack_rows(&vals)?, EPS_NORM)?;
    Ok(Value::constant(&[b, b], m.data()))
}

/// Frobenius RMSE between two B x B similarity matrices:
/// sqrt((1/B^2) sum_ij (mhat_ij - m_ij)^2). Differentiable w.r.t. `mhat`
/// away from the zero-difference point.
pub fn relational_loss(mhat: &Value, m: &Value) -> Result<Value> {
    if mhat.shape() != m.shape() || mhat.shape().len() != 2 || mhat.shape()[0] != mhat.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "relational_loss",
            lhs: mhat.shape().to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    let d = sub(mhat, m)?;
    sqrt(&mean(&mul(&d, &d)?)?)
}

/// sqrt of the mean squared error over all entries.
pub fn rmse_loss(pred: &Value, target: &Value) -> Result<Value> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "rmse_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let d = sub(pred, target)?;
    sqrt(&mean(&mul(&d, &d)?)?)
}

/// Concordance correlation with population (1/N) moments:
/// 2 cov / (var_x + var_y + (mean_x - mean_y)^2).
pub fn ccc(x: &Value, y: &Value) -> Result<Value> {
    if x.shape() != y.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "ccc",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(TensorError::Domain {
            op: "ccc",
            what: format!("need at least 2 points, got {n}"),
        });
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let xc = add_scalar(x, &scale(&mx, -1.0)?)?;
    let yc = add_scalar(y, &scale(&my, -1.0)?)?;
    let cov = mean(&mul(&xc, &yc)?)?;
    let var_x = mean(&mul(&xc, &xc)?)?;
    let var_y = mean(&mul(&yc, &yc)?)?;
    let dm = sub(&mx, &my)?;
    let denom = add(&add(&var_x, &var_y)?, &mul(&dm, &dm)?)?;
    if denom.item() == 0.0 {
        return Err(TensorError::Domain {
            op: "ccc",
            what: "undefined: both inputs constant with equal means (0/0)".to_string(),
        });
    }
    div(&scale(&cov, 2.0)?, &denom)
}

/// Mean over labels of (1 - CCC) per column of (B, C) predictions.
pub fn ccc_loss(pred: &Value, target: &Value) -> Result<Value> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "ccc_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let c = pred.shape()[1];
    let pt = transpose(pred)?;
    let tt = transpose(target)?;
    let mut acc = Value::scalar(0.0);
    for j in 0..c {
        let one_minus = sub(&Value::scalar(1.0), &ccc(&row(&pt, j)?, &row(&tt, j)?)?)?;
        acc = add(&acc, &one_minus)?;
    }
    scale(&acc, 1.0 / c as f64)
}

/// L_total = L_reg + lambda * L_rel.
pub fn total_loss(l_reg: &Value, l_rel: &Value, lambda: f64) -> Result<Value> {
    if lambda < 0.0 {
        return Err(TensorError::Domain {
            op: "total_loss",
            what: format!("lambda must be nonnegative, got {lambda}"),
        });
    }
    add(l_reg, &scale(l_rel, lambda)?)
}

/// Normalized-temperature cross entropy over cosine similarities.
/// `anchors[i]` pairs with `positives[i]`; every other embedding of the
/// combined 2B set is a negative.
pub fn contrastive_loss(
    anchors: &[Value],
    positives: &[Value],
    temperature: f64,
) -> Result<Value> {
    let b = anchors.len();
    if b != positives.len() {
        return Err(TensorError::ShapeMismatch {
            op: "contrastive_loss",
            lhs: vec![b],
            rhs: vec![positives.len()],
        });
    }
    if b < 2 {
        return Err(TensorError::Domain {
            op: "contrastive_loss",
            what: "batch of 1 has no negatives".to_string(),
        });
    }
    let mut all: Vec<Value> = anchors.to_vec();
    all.extend_from_slice(positives);
    let n = 2 * b;
    let sims = cosine_matrix(&stack_rows(&all)?, EPS_NORM)?;
    // Mask self-similarity out of each softmax row.
    let mut mask = vec![0.0; n * n];
    for i in 0..n {
        mask[i * n + i] = -1e9;
    }
    let logits = add(&scale(&sims, 1.0 / temperature)?, &Value::constant(&[n, n], mask))?;
    let probs = softmax_rows(&logits)?;
    let mut acc = Value::scalar(0.0);
    for i in 0..b {
        let mut onehot = vec![0.0; n];
        onehot[b + i] = 1.0;
        let p = sum(&mul(&row(&probs, i)?, &Value::constant(&[n], onehot))?)?;
        acc = add(&acc, &ln(&p)?)?;
    }
    scale(&acc, -1.0 / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constv(shape: &[usize], data: Vec<f64>) -> Value {
        Value::constant(shape, data)
    }

    #[test]
    fn cosine_matrix_identical_rows_all_ones() {
        let rows = vec![
            constv(&[2], vec![1.0, 2.0]),
            constv(&[2], vec![2.0, 4.0]),
        ];
        let m = cosine_similarity_matrix(&rows).unwrap();
        for v in m.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_matrix_orthogonal_is_identity() {
        let rows = vec![
            constv(&[2], vec![1.0, 0.0]),
            constv(&[2], vec![0.0, 1.0]),
        ];
        let m = cosine_similarity_matrix(&rows).unwrap();
        assert_eq!(m.data(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cosine_matrix_hand_value() {
        let rows = vec![
            constv(&[2], vec![1.0, 0.0]),
            constv(&[2], vec![1.0, 1.0]),
        ];
        let m = cosine_similarity_matrix(&rows).unwrap();
        assert!((m.data()[1] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn relational_loss_zero_on_equal() {
        let m = constv(&[2, 2], vec![1.0, 0.3, 0.3, 1.0]);
        assert_eq!(relational_loss(&m, &m).unwrap().item(), 0.0);
    }

    #[test]
    fn relational_loss_orthogonal_vs_identical_case() {
        // features orthogonal -> mhat = I; labels identical -> m = all ones
        let mhat = constv(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = constv(&[2, 2], vec![1.0, 1.0, 1.0, 1.0]);
        let l = relational_loss(&mhat, &m).unwrap().item();
        assert!((l - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn relational_loss_b1_is_zero() {
        let m = constv(&[1, 1], vec![1.0]);
        assert_eq!(relational_loss(&m, &m).unwrap().item(), 0.0);
    }

    #[test]
    fn relational_loss_symmetric_in_arguments() {
        let a = constv(&[2, 2], vec![1.0, 0.2, 0.2, 1.0]);
        let b = constv(&[2, 2], vec![1.0, 0.8, 0.8, 1.0]);
        assert_eq!(
            relational_loss(&a, &b).unwrap().item(),
            relational_loss(&b, &a).unwrap().item()
        );
    }

    #[test]
    fn relational_loss_invariant_to_feature_rescaling() {
        let z1 = vec![
            Value::parameter(&[3], vec![0.4, 0.8, -0.1]),
            Value::parameter(&[3], vec![1.0, 0.2, 0.5]),
        ];
        let z2: Vec<Value> = z1
            .iter()
            .map(|v| Value::parameter(&[3], v.data().iter().map(|x| x * 3.7).collect()))
            .collect();
        let m = constv(&[2, 2], vec![1.0, 0.5, 0.5, 1.0]);
        let l1 = relational_loss(&cosine_similarity_matrix(&z1).unwrap(), &m)
            .unwrap()
            .item();
        let l2 = relational_loss(&cosine_similarity_matrix(&z2).unwrap(), &m)
            .unwrap()
            .item();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn rmse_loss_cases() {
        let a = constv(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rmse_loss(&a, &a).unwrap().item(), 0.0);
        let b = constv(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        assert!((rmse_loss(&b, &a).unwrap().item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_invariant_to_batch_permutation() {
        let a = constv(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let t = constv(&[2, 2], vec![0.0, 1.0, 5.0, 2.0]);
        let ap = constv(&[2, 2], vec![3.0, 4.0, 1.0, 2.0]);
        let tp = constv(&[2, 2], vec![5.0, 2.0, 0.0, 1.0]);
        assert!(
            (rmse_loss(&a, &t).unwrap().item() - rmse_loss(&ap, &tp).unwrap().item()).abs()
                < 1e-15
        );
    }

    #[test]
    fn ccc_perfect_and_anti() {
        let y = constv(&[4], vec![-1.0, -0.5, 0.5, 1.0]);
        assert!((ccc(&y, &y).unwrap().item() - 1.0).abs() < 1e-12);
        let neg = constv(&[4], vec![1.0, 0.5, -0.5, -1.0]);
        assert!((ccc(&neg, &y).unwrap().item() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_constant_prediction_with_matching_mean_is_zero() {
        let y = constv(&[3], vec![0.0, 1.0, 2.0]);
        let c = constv(&[3], vec![1.0, 1.0, 1.0]);
        assert_eq!(ccc(&c, &y).unwrap().item(), 0.0);
    }

    #[test]
    fn ccc_undefined_case_errors() {
        let a = constv(&[3], vec![1.0, 1.0, 1.0]);
        assert!(ccc(&a, &a).is_err());
    }

    #[test]
    fn ccc_loss_cases() {
        let y = constv(&[3, 2], vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert!(ccc_loss(&y, &y).unwrap().item().abs() < 1e-12);
        // one perfect column, one anti-perfect zero-mean column -> (0 + 2)/2
        let t = constv(&[3, 2], vec![0.0, -1.0, 0.5, 0.0, 1.0, 1.0]);
        let p = constv(&[3, 2], vec![0.0, 1.0, 0.5, 0.0, 1.0, -1.0]);
        assert!((ccc_loss(&p, &t).unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let r = Value::scalar(1.0);
        let l = Value::scalar(0.5);
        assert_eq!(total_loss(&r, &l, 0.0).unwrap().item(), 1.0);
        assert_eq!(total_loss(&r, &l, 2.0).unwrap().item(), 2.0);
        assert_eq!(total_loss(&r, &l, 1.0).unwrap().item(), 1.5);
        assert!(total_loss(&r, &l, -1.0).is_err());
    }

    #[test]
    fn contrastive_loss_limit_case() {
        // anchor == positive, orthogonal to the other pair: low temperature
        // drives the loss to zero
        let anchors = vec![
            Value::parameter(&[4], vec![1.0, 0.0, 0.0, 0.0]),
            Value::parameter(&[4], vec![0.0, 0.0, 1.0, 0.0]),
        ];
        let positives = vec![
            Value::parameter(&[4], vec![1.0, 0.0, 0.0, 0.0]),
            Value::parameter(&[4], vec![0.0, 0.0, 1.0, 0.0]),
        ];
        let l = contrastive_loss(&anchors, &positives, 0.01).unwrap().item();
        assert!(l < 1e-10, "loss = {l}");
    }

    #[test]
    fn contrastive_loss_rotation_invariant() {
        // rotate all embeddings by the same 2x2 rotation
        let rot = |v: &[f64], th: f64| {
            vec![
                v[0] * th.cos() - v[1] * th.sin(),
                v[0] * th.sin() + v[1] * th.cos(),
            ]
        };
        let raw = [
            vec![1.0, 0.2],
            vec![-0.3, 0.9],
            vec![0.8, 0.5],
            vec![0.1, -0.7],
        ];
        let mk = |rows: &[Vec<f64>]| -> (Vec<Value>, Vec<Value>) {
            (
                vec![
                    Value::parameter(&[2], rows[0].clone()),
                    Value::parameter(&[2], rows[1].clone()),
                ],
                vec![
                    Value::parameter(&[2], rows[2].clone()),
                    Value::parameter(&[2], rows[3].clone()),
                ],
            )
        };
        let (a1, p1) = mk(&raw);
        let rotated: Vec<Vec<f64>> = raw.iter().map(|v| rot(v, 1.1)).collect();
        let (a2, p2) = mk(&rotated);
        let l1 = contrastive_loss(&a1, &p1, 0.1).unwrap().item();
        let l2 = contrastive_loss(&a2, &p2, 0.1).unwrap().item();
        assert!((l1 - l2).abs() < 1e-10);
    }

    #[test]
    fn contrastive_loss_b2_matches_brute_force() {
        let rows = [
            vec![0.9, 0.1, 0.3],
            vec![-0.2, 0.8, 0.4],
            vec![0.7, 0.3, 0.2],
            vec![-0.1, 0.9, 0.5],
        ];
        let anchors = vec![
            Value::parameter(&[3], rows[0].clone()),
            Value::parameter(&[3], rows[1].clone()),
        ];
        let positives = vec![
            Value::parameter(&[3], rows[2].clone()),
            Value::parameter(&[3], rows[3].clone()),
        ];
        let tau = 0.25;
        let l = contrastive_loss(&anchors, &positives, tau).unwrap().item();

        // independent evaluation
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut expected = 0.0;
        for i in 0..2 {
            let target = 2 + i;
            let mut denom = 0.0;
            let mut num = 0.0;
            for j in 0..4 {
                if j == i {
                    continue;
                }
                let e = (cos(&rows[i], &rows[j]) / tau).exp();
                denom += e;
                if j == target {
                    num = e;
                }
            }
            expected += -(num / denom).ln();
        }
        expected /= 2.0;
        assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");
    }

    #[test]
    fn contrastive_loss_b1_errors() {
        let a = vec![Value::parameter(&[2], vec![1.0, 0.0])];
        let p = vec![Value::parameter(&[2], vec![1.0, 0.0])];
        assert!(contrastive_loss(&a, &p, 0.1).is_err());
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let theta = Value::parameter(&[3, 4], (0..12).map(|_| rng.gen_range(0.2..1.0)).collect());
        let target = constv(&[3, 4], (0..12).map(|_| rng.gen_range(0.2..1.0)).collect());
        let m = label_similarity_matrix(&[
            vec![0.3, 0.9],
            vec![0.8, 0.2],
            vec![0.5, 0.5],
        ])
        .unwrap();

        let err = grad_check(|t| rmse_loss(t, &target), &theta, 1e-5).unwrap();
        assert!(err < 1e-5, "rmse: {err}");

        let err = grad_check(|t| ccc_loss(t, &target), &theta, 1e-5).unwrap();
        assert!(err < 1e-5, "ccc: {err}");

        let err = grad_check(
            |t| relational_loss(&cosine_matrix(t, EPS_NORM)?, &m),
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "relational: {err}");

        let err = grad_check(
            |t| {
                let rows: Vec<Value> = (0..3).map(|i| row(t, i)).collect::<Result<_>>()?;
                contrastive_loss(
                    &[rows[0].clone(), rows[1].clone()],
                    &[rows[1].clone(), rows[2].clone()],
                    0.5,
                )
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "contrastive: {err}");
    }

    #[test]
    fn relational_gradient_orthogonal_to_radial_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Value::parameter(&[2, 3], (0..6).map(|_| rng.gen_range(0.3..1.0)).collect());
        let m = constv(&[2, 2], vec![1.0, 0.4, 0.4, 1.0]);
        let loss = relational_loss(&cosine_matrix(&z, EPS_NORM).unwrap(), &m).unwrap();
        crate::tensor::backward(&loss).unwrap();
        let g = z.grad().unwrap();
        let d = z.data();
        for i in 0..2 {
            let dot: f64 = (0..3).map(|j| g[i * 3 + j] * d[i * 3 + j]).sum();
            assert!(dot.abs() < 1e-12, "radial component {dot}");
        }
    }

    #[test]
    fn label_scaling_round_trip_and_midpoints() {
        // arousal 0.5 in [0,1] -> 0.0 in [-1,1]
        let lv = LabelVector::new(vec![0.5, 0.3], LabelScale::affect_omg());
        let t = lv.scaled(ScaleDirection::ToTrainRange).unwrap();
        assert!((t.y[0] - 0.0).abs() < 1e-12);
        let back = t.scaled(ScaleDirection::ToNativeRange).unwrap();
        for (a, b) in back.y.iter().zip(lv.y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        // PANSS total midpoint (7 symptoms, native 7-49) -> 4 in [1,7]
        let r = LabelScale::panss(3, 7).total.unwrap();
        let mid = scale_component(28.0, &r, ScaleDirection::ToTrainRange, 0).unwrap();
        assert!((mid - 4.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_errors() {
        let lv = LabelVector::new(vec![1.5, 0.0], LabelScale::affect(2));
        assert!(lv.scaled(ScaleDirection::ToTrainRange).is_err());
    }

    #[test]
    fn similarity_shift_avoids_zero_vectors() {
        let lv = LabelVector::new(vec![0.0, 0.0], LabelScale::affect(2));
        let s = lv.for_similarity();
        assert!(s.iter().all(|v| *v > 0.0));
        // PANSS components keep their values (range excludes zero)
        let lv = LabelVector::new(vec![3.0, 5.0], LabelScale::panss(2, 7));
        assert_eq!(lv.for_similarity(), vec![3.0, 5.0]);
    }
}
