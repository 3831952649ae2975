//! Forward ops and their backward rules.
//!
//! Every rule here is exercised by the finite-difference checker in the
//! module tests and again by the `gradcheck` CLI command.

use super::{backward, Result, TensorError, Value};

fn same_shape(op: &'static str, a: &Value, b: &Value) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank2(op: &'static str, v: &Value) -> Result<(usize, usize)> {
    match v.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(TensorError::BadShape {
            op,
            expected: "rank-2 array",
            shape: s.to_vec(),
        }),
    }
}

fn rank1(op: &'static str, v: &Value) -> Result<usize> {
    match v.shape() {
        [n] => Ok(*n),
        s => Err(TensorError::BadShape {
            op,
            expected: "rank-1 array",
            shape: s.to_vec(),
        }),
    }
}

pub fn add(a: &Value, b: &Value) -> Result<Value> {
    same_shape("add", a, b)?;
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(g);
            }
            if pb.requires_grad() {
                pb.accumulate_grad(g);
            }
        }),
    ))
}

pub fn sub(a: &Value, b: &Value) -> Result<Value> {
    same_shape("sub", a, b)?;
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x - y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(g);
            }
            if pb.requires_grad() {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                pb.accumulate_grad(&neg);
            }
        }),
    ))
}

pub fn mul(a: &Value, b: &Value) -> Result<Value> {
    same_shape("mul", a, b)?;
    let ad = a.data();
    let bd = b.data();
    let data: Vec<f64> = ad.iter().zip(bd.iter()).map(|(x, y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let c: Vec<f64> = g.iter().zip(bd.iter()).map(|(gi, y)| gi * y).collect();
                pa.accumulate_grad(&c);
            }
            if pb.requires_grad() {
                let c: Vec<f64> = g.iter().zip(ad.iter()).map(|(gi, x)| gi * x).collect();
                pb.accumulate_grad(&c);
            }
        }),
    ))
}

pub fn div(a: &Value, b: &Value) -> Result<Value> {
    same_shape("div", a, b)?;
    let ad = a.data();
    let bd = b.data();
    let data: Vec<f64> = ad.iter().zip(bd.iter()).map(|(x, y)| x / y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let c: Vec<f64> = g.iter().zip(bd.iter()).map(|(gi, y)| gi / y).collect();
                pa.accumulate_grad(&c);
            }
            if pb.requires_grad() {
                let c: Vec<f64> = g
                    .iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(gi, (x, y))| -gi * x / (y * y))
                    .collect();
                pb.accumulate_grad(&c);
            }
        }),
    ))
}

/// Multiply by a compile-time-known constant.
pub fn scale(a: &Value, c: f64) -> Result<Value> {
    let data: Vec<f64> = a.data().iter().map(|x| x * c).collect();
    let pa = a.clone();
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let contrib: Vec<f64> = g.iter().map(|x| x * c).collect();
            pa.accumulate_grad(&contrib);
        }),
    ))
}

pub fn relu(a: &Value) -> Result<Value> {
    let ad = a.data();
    let data: Vec<f64> = ad.iter().map(|x| x.max(0.0)).collect();
    let pa = a.clone();
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let c: Vec<f64> = g
                .iter()
                .zip(ad.iter())
                .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                .collect();
            pa.accumulate_grad(&c);
        }),
    ))
}

pub fn sqrt(a: &Value) -> Result<Value> {
    let ad = a.data();
    if ad.iter().any(|x| *x < 0.0) {
        return Err(TensorError::Domain {
            op: "sqrt",
            what: "negative input".to_string(),
        });
    }
    let out: Vec<f64> = ad.iter().map(|x| x.sqrt()).collect();
    let saved = out.clone();
    let pa = a.clone();
    Ok(Value::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g| {
            let c: Vec<f64> = g
                .iter()
                .zip(saved.iter())
                .map(|(gi, s)| gi / (2.0 * s))
                .collect();
            pa.accumulate_grad(&c);
        }),
    ))
}

pub fn ln(a: &Value) -> Result<Value> {
    let ad = a.data();
    if ad.iter().any(|x| *x <= 0.0) {
        return Err(TensorError::Domain {
            op: "ln",
            what: "non-positive input".to_string(),
        });
    }
    let out: Vec<f64> = ad.iter().map(|x| x.ln()).collect();
    let pa = a.clone();
    Ok(Value::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g| {
            let c: Vec<f64> = g.iter().zip(ad.iter()).map(|(gi, x)| gi / x).collect();
            pa.accumulate_grad(&c);
        }),
    ))
}

pub fn matmul(a: &Value, b: &Value) -> Result<Value> {
    let (m, ka) = rank2("matmul", a)?;
    let (kb, n) = rank2("matmul", b)?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let k = ka;
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aip * bd[p * n + j];
            }
        }
    }
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                // dL/da = g . b^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += gij * bd[p * n + j];
                        }
                    }
                }
                pa.accumulate_grad(&da);
            }
            if pb.requires_grad() {
                // dL/db = a^T . g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                pb.accumulate_grad(&db);
            }
        }),
    ))
}

pub fn transpose(a: &Value) -> Result<Value> {
    let (m, n) = rank2("transpose", a)?;
    let ad = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    let pa = a.clone();
    Ok(Value::from_op(
        vec![n, m],
        out,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] = g[j * m + i];
                }
            }
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Row-wise softmax with max-subtraction. Rank-1 input is one row.
pub fn softmax_rows(a: &Value) -> Result<Value> {
    let (m, n) = match a.shape() {
        [n] => (1usize, *n),
        [m, n] => (*m, *n),
        s => {
            return Err(TensorError::BadShape {
                op: "softmax",
                expected: "rank-1 or rank-2 array",
                shape: s.to_vec(),
            })
        }
    };
    let ad = a.data();
    if ad.iter().any(|x| x.is_nan()) {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &ad[i * n..(i + 1) * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out[i * n + j] = e;
            s += e;
        }
        for j in 0..n {
            out[i * n + j] /= s;
        }
    }
    let saved = out.clone();
    let pa = a.clone();
    Ok(Value::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g| {
            // dx = s .* (g - <g, s>) per row
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                let s = &saved[i * n..(i + 1) * n];
                let gr = &g[i * n..(i + 1) * n];
                let dot: f64 = s.iter().zip(gr.iter()).map(|(si, gi)| si * gi).sum();
                for j in 0..n {
                    da[i * n + j] = s[j] * (gr[j] - dot);
                }
            }
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Mean over the row axis: (m, n) -> (n). The temporal pooling op.
pub fn mean_rows(a: &Value) -> Result<Value> {
    let (m, n) = rank2("mean_rows", a)?;
    if m == 0 {
        return Err(TensorError::EmptyInput { op: "mean_rows" });
    }
    let ad = a.data();
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            out[j] += ad[i * n + j];
        }
    }
    for v in out.iter_mut() {
        *v /= m as f64;
    }
    let pa = a.clone();
    Ok(Value::from_op(
        vec![n],
        out,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] = g[j] / m as f64;
                }
            }
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Concatenate two rank-1 vectors.
pub fn concat(a: &Value, b: &Value) -> Result<Value> {
    let na = rank1("concat", a)?;
    let nb = rank1("concat", b)?;
    let mut data = a.data();
    data.extend_from_slice(&b.data());
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        vec![na + nb],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(&g[..na]);
            }
            if pb.requires_grad() {
                pb.accumulate_grad(&g[na..]);
            }
        }),
    ))
}

/// Stack rank-1 vectors of equal length into a (m, n) array.
pub fn stack_rows(rows: &[Value]) -> Result<Value> {
    if rows.is_empty() {
        return Err(TensorError::EmptyInput { op: "stack_rows" });
    }
    let n = rank1("stack_rows", &rows[0])?;
    let mut data = Vec::with_capacity(rows.len() * n);
    for r in rows {
        let rn = rank1("stack_rows", r)?;
        if rn != n {
            return Err(TensorError::ShapeMismatch {
                op: "stack_rows",
                lhs: vec![n],
                rhs: vec![rn],
            });
        }
        data.extend_from_slice(&r.data());
    }
    let parents: Vec<Value> = rows.to_vec();
    let captured = parents.clone();
    Ok(Value::from_op(
        vec![rows.len(), n],
        data,
        parents,
        Box::new(move |g| {
            for (i, r) in captured.iter().enumerate() {
                if r.requires_grad() {
                    r.accumulate_grad(&g[i * n..(i + 1) * n]);
                }
            }
        }),
    ))
}

/// Concatenate rank-2 arrays with equal row counts along the column axis.
pub fn concat_cols(parts: &[Value]) -> Result<Value> {
    if parts.is_empty() {
        return Err(TensorError::EmptyInput { op: "concat_cols" });
    }
    let (m, _) = rank2("concat_cols", &parts[0])?;
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            let (pm, pn) = rank2("concat_cols", p)?;
            if pm != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            Ok(pn)
        })
        .collect::<Result<_>>()?;
    let n: usize = widths.iter().sum();
    let mut data = vec![0.0; m * n];
    let mut off = 0;
    for (p, w) in parts.iter().zip(widths.iter()) {
        let pd = p.data();
        for i in 0..m {
            data[i * n + off..i * n + off + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
        }
        off += w;
    }
    let parents: Vec<Value> = parts.to_vec();
    let captured = parents.clone();
    Ok(Value::from_op(
        vec![m, n],
        data,
        parents,
        Box::new(move |g| {
            let mut off = 0;
            for (p, w) in captured.iter().zip(widths.iter()) {
                if p.requires_grad() {
                    let mut dp = vec![0.0; m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * n + off..i * n + off + w]);
                    }
                    p.accumulate_grad(&dp);
                }
                off += w;
            }
        }),
    ))
}

pub fn sum(a: &Value) -> Result<Value> {
    let s: f64 = a.data().iter().sum();
    let pa = a.clone();
    let n = a.len();
    Ok(Value::from_op(
        vec![1],
        vec![s],
        vec![a.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(&vec![g[0]; n]);
        }),
    ))
}

pub fn mean(a: &Value) -> Result<Value> {
    if a.is_empty() {
        return Err(TensorError::EmptyInput { op: "mean" });
    }
    let n = a.len();
    scale(&sum(a)?, 1.0 / n as f64)
}

/// Slice `len` entries of a rank-1 vector starting at `start`.
pub fn slice(a: &Value, start: usize, len: usize) -> Result<Value> {
    let n = rank1("slice", a)?;
    if start + len > n {
        return Err(TensorError::Domain {
            op: "slice",
            what: format!("range {start}..{} out of bounds for length {n}", start + len),
        });
    }
    let data = a.data()[start..start + len].to_vec();
    let pa = a.clone();
    Ok(Value::from_op(
        vec![len],
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; n];
            da[start..start + len].copy_from_slice(g);
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Extract row `i` of a rank-2 array as a rank-1 vector.
pub fn row(a: &Value, i: usize) -> Result<Value> {
    let (m, n) = rank2("row", a)?;
    if i >= m {
        return Err(TensorError::Domain {
            op: "row",
            what: format!("row {i} out of bounds for {m} rows"),
        });
    }
    let data = a.data()[i * n..(i + 1) * n].to_vec();
    let pa = a.clone();
    Ok(Value::from_op(
        vec![n],
        data,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; m * n];
            da[i * n..(i + 1) * n].copy_from_slice(g);
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Reinterpret a (1, n) array as rank-1 or the other way round. Free op.
pub fn reshape(a: &Value, shape: &[usize]) -> Result<Value> {
    if shape.iter().product::<usize>() != a.len() {
        return Err(TensorError::BadShape {
            op: "reshape",
            expected: "shape with matching element count",
            shape: shape.to_vec(),
        });
    }
    let pa = a.clone();
    Ok(Value::from_op(
        shape.to_vec(),
        a.data(),
        vec![a.clone()],
        Box::new(move |g| {
            pa.accumulate_grad(g);
        }),
    ))
}

/// Add a rank-1 bias to every row of a rank-2 array.
pub fn add_bias(a: &Value, b: &Value) -> Result<Value> {
    let (m, n) = rank2("add_bias", a)?;
    let nb = rank1("add_bias", b)?;
    if n != nb {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let bd = b.data();
    let data: Vec<f64> = a
        .data()
        .iter()
        .enumerate()
        .map(|(idx, x)| x + bd[idx % n])
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Ok(Value::from_op(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(g);
            }
            if pb.requires_grad() {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
                pb.accumulate_grad(&db);
            }
        }),
    ))
}

/// Broadcast-add a scalar Value to every entry.
pub fn add_scalar(a: &Value, s: &Value) -> Result<Value> {
    if s.len() != 1 {
        return Err(TensorError::BadShape {
            op: "add_scalar",
            expected: "scalar second operand",
            shape: s.shape().to_vec(),
        });
    }
    let sv = s.item();
    let data: Vec<f64> = a.data().iter().map(|x| x + sv).collect();
    let (pa, ps) = (a.clone(), s.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), s.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                pa.accumulate_grad(g);
            }
            if ps.requires_grad() {
                ps.accumulate_grad(&[g.iter().sum()]);
            }
        }),
    ))
}

/// Broadcast-multiply by a scalar Value.
pub fn mul_scalar(a: &Value, s: &Value) -> Result<Value> {
    if s.len() != 1 {
        return Err(TensorError::BadShape {
            op: "mul_scalar",
            expected: "scalar second operand",
            shape: s.shape().to_vec(),
        });
    }
    let sv = s.item();
    let ad = a.data();
    let data: Vec<f64> = ad.iter().map(|x| x * sv).collect();
    let (pa, ps) = (a.clone(), s.clone());
    Ok(Value::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), s.clone()],
        Box::new(move |g| {
            if pa.requires_grad() {
                let c: Vec<f64> = g.iter().map(|x| x * sv).collect();
                pa.accumulate_grad(&c);
            }
            if ps.requires_grad() {
                let d: f64 = g.iter().zip(ad.iter()).map(|(gi, x)| gi * x).sum();
                ps.accumulate_grad(&[d]);
            }
        }),
    ))
}

/// Per-row layer normalization with learnable gain and shift.
pub fn layer_norm(x: &Value, gamma: &Value, beta: &Value, eps: f64) -> Result<Value> {
    let (m, n) = rank2("layer_norm", x)?;
    if rank1("layer_norm", gamma)? != n || rank1("layer_norm", beta)? != n {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0; m * n];
    let mut xhat = vec![0.0; m * n];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let r = &xd[i * n..(i + 1) * n];
        let mu: f64 = r.iter().sum::<f64>() / n as f64;
        let var: f64 = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..n {
            let h = (r[j] - mu) * is;
            xhat[i * n + j] = h;
            out[i * n + j] = gd[j] * h + bd[j];
        }
    }
    let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Value::from_op(
        vec![m, n],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            if pg.requires_grad() {
                let mut dg = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                }
                pg.accumulate_grad(&dg);
            }
            if pb.requires_grad() {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
                pb.accumulate_grad(&db);
            }
            if px.requires_grad() {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    // u = gamma .* g_row
                    let mut mean_u = 0.0;
                    let mut mean_uh = 0.0;
                    for j in 0..n {
                        let u = gd[j] * g[i * n + j];
                        mean_u += u;
                        mean_uh += u * xhat[i * n + j];
                    }
                    mean_u /= n as f64;
                    mean_uh /= n as f64;
                    for j in 0..n {
                        let u = gd[j] * g[i * n + j];
                        dx[i * n + j] =
                            inv_std[i] * (u - mean_u - xhat[i * n + j] * mean_uh);
                    }
                }
                px.accumulate_grad(&dx);
            }
        }),
    ))
}

/// Pairwise cosine similarity of the rows of a (B, n) array: symmetric,
/// unit diagonal. Errors on rows with norm below `eps_norm`.
pub fn cosine_matrix(a: &Value, eps_norm: f64) -> Result<Value> {
    let (b, n) = rank2("cosine_matrix", a)?;
    let ad = a.data();
    let mut norms = vec![0.0; b];
    for i in 0..b {
        let r = &ad[i * n..(i + 1) * n];
        let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nr <= eps_norm {
            return Err(TensorError::Domain {
                op: "cosine_matrix",
                what: format!("row {i} has degenerate norm {nr:e}"),
            });
        }
        norms[i] = nr;
    }
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            if j < i {
                out[i * b + j] = out[j * b + i];
                continue;
            }
            if i == j {
                out[i * b + j] = 1.0;
                continue;
            }
            let ri = &ad[i * n..(i + 1) * n];
            let rj = &ad[j * n..(j + 1) * n];
            let dot: f64 = ri.iter().zip(rj.iter()).map(|(x, y)| x * y).sum();
            out[i * b + j] = dot / (norms[i] * norms[j]);
        }
    }
    let saved = out.clone();
    let pa = a.clone();
    Ok(Value::from_op(
        vec![b, b],
        out,
        vec![a.clone()],
        Box::new(move |g| {
            let mut da = vec![0.0; b * n];
            for i in 0..b {
                for j in 0..b {
                    let gij = g[i * b + j];
                    if gij == 0.0 || i == j {
                        continue;
                    }
                    let mij = saved[i * b + j];
                    let (ni, nj) = (norms[i], norms[j]);
                    for p in 0..n {
                        let zi = ad[i * n + p];
                        let zj = ad[j * n + p];
                        da[i * n + p] += gij * (zj / (ni * nj) - mij * zi / (ni * ni));
                        da[j * n + p] += gij * (zi / (ni * nj) - mij * zj / (nj * nj));
                    }
                }
            }
            pa.accumulate_grad(&da);
        }),
    ))
}

/// Elementwise multiply by a fixed mask scaled by 1/(1-p). Training-mode
/// dropout; the mask is supplied by the caller so runs stay deterministic.
pub fn dropout_mask(a: &Value, mask: &[bool], rate: f64) -> Result<Value> {
    let n = a.len();
    if mask.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "dropout",
            lhs: a.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let keep = 1.0 / (1.0 - rate);
    let m: Vec<f64> = mask.iter().map(|k| if *k { keep } else { 0.0 }).collect();
    mul(a, &Value::constant(a.shape(), m))
}

/// Combined gradient-check of `param` through an arbitrary scalar pipeline,
/// returning (err, analytic grads). Convenience over [`super::grad_check`]
/// for pipelines that also need the raw gradient.
pub fn grad_of<F>(f: F, param: &Value) -> Result<Vec<f64>>
where
    F: Fn(&Value) -> Result<Value>,
{
    param.zero_grad();
    let loss = f(param)?;
    backward(&loss)?;
    Ok(param.grad().unwrap_or_else(|| vec![0.0; param.len()]))
}
