//! Multi-pass memory attention between a context vector and the
//! candidate senses' gloss vectors.
//!
//! The memory starts as the context vector. Each pass scores every gloss
//! vector against the memory by dot product, normalizes the scores with
//! a max-subtracted softmax, pools the gloss vectors under those
//! weights, and rewrites the memory as
//! `relu(W . [memory : pooled : context] + b)`. The raw scores of the
//! final pass are the gloss evidence handed to the scorer.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Everything one pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPass {
    /// dot-product scores, one per sense, before normalization
    pub raw: Vec<f64>,
    /// softmax of `raw`; sums to one
    pub attention: Vec<f64>,
    /// attention-weighted sum of the gloss vectors
    pub pooled: Vec<f64>,
    /// memory after this pass's update
    pub memory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub passes: Vec<AttentionPass>,
}

impl AttentionTrace {
    pub fn final_raw(&self) -> &[f64] {
        &self.passes.last().expect("at least one pass").raw
    }

    pub fn final_attention(&self) -> &[f64] {
        &self.passes.last().expect("at least one pass").attention
    }
}

/// The memory starts as the context vector.
pub fn init_memory(context: &Array1<f64>) -> Array1<f64> {
    context.clone()
}

/// One scoring step: raw dot products against the memory, then a
/// max-subtracted softmax over the candidate senses.
pub fn attention_pass(gloss: &[Array1<f64>], memory: &Array1<f64>) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = gloss.iter().map(|g| g.dot(memory)).collect();
    (raw.clone(), softmax(&raw))
}

pub(crate) fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Memory rewrite: pool the gloss vectors under the attention weights,
/// then `relu(W . [memory : pooled : context] + b)`.
pub fn update_memory(
    memory: &Array1<f64>,
    attention: &[f64],
    gloss: &[Array1<f64>],
    context: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let d = memory.len();
    if context.len() != d
        || gloss.iter().any(|g| g.len() != d)
        || gloss.len() != attention.len()
        || w.nrows() != d
        || w.ncols() != 3 * d
        || b.len() != d
    {
        return Err(Error::ShapeMismatch(format!(
            "update_memory: memory {d}, context {}, w {:?}, b {}, {} glosses / {} weights",
            context.len(),
            w.dim(),
            b.len(),
            gloss.len(),
            attention.len()
        )));
    }
    let mut pooled = Array1::zeros(d);
    for (g, &phi) in gloss.iter().zip(attention) {
        pooled.scaled_add(phi, g);
    }
    let mut stacked = Array1::zeros(3 * d);
    stacked.slice_mut(ndarray::s![0..d]).assign(memory);
    stacked.slice_mut(ndarray::s![d..2 * d]).assign(&pooled);
    stacked.slice_mut(ndarray::s![2 * d..]).assign(context);
    let next = (w.dot(&stacked) + b).mapv(|v| v.max(0.0));
    Ok((next, pooled))
}

/// Runs the configured number of passes and records every intermediate.
pub fn run_attention(
    gloss: &[Array1<f64>],
    context: &Array1<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    passes: usize,
) -> Result<AttentionTrace> {
    if gloss.is_empty() {
        return Err(Error::InvalidArgument("no gloss vectors".into()));
    }
    if passes == 0 {
        return Err(Error::InvalidArgument("at least one attention pass is required".into()));
    }
    let mut memory = init_memory(context);
    let mut trace = AttentionTrace { passes: Vec::with_capacity(passes) };
    for _ in 0..passes {
        let (raw, attention) = attention_pass(gloss, &memory);
        let (next, pooled) = update_memory(&memory, &attention, gloss, context, w, b)?;
        trace.passes.push(AttentionPass {
            raw,
            attention,
            pooled: pooled.to_vec(),
            memory: next.to_vec(),
        });
        memory = next;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Arr, ParamId, ParamStore, Tape};
    use ndarray::arr1;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut StdRng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn memory_initializes_to_the_context() {
        let c = arr1(&[0.5, -1.0, 2.0, 0.0]);
        assert_eq!(init_memory(&c), c);
        assert_eq!(init_memory(&Array1::<f64>::zeros(4)), Array1::<f64>::zeros(4));
        assert_eq!(init_memory(&c).len(), 4);
    }

    #[test]
    fn equal_scores_give_uniform_attention() {
        let g = vec![arr1(&[1.0, 0.0]), arr1(&[1.0, 0.0])];
        let (raw, phi) = attention_pass(&g, &arr1(&[2.0, 5.0]));
        assert_eq!(raw, vec![2.0, 2.0]);
        assert_eq!(phi, vec![0.5, 0.5]);
    }

    #[test]
    fn analytic_softmax_two_thirds_one_third() {
        let phi = softmax(&[2f64.ln(), 0.0]);
        assert!((phi[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((phi[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_candidate_gets_all_the_attention() {
        let g = vec![arr1(&[0.3, -0.4])];
        let (_, phi) = attention_pass(&g, &arr1(&[1.0, 1.0]));
        assert_eq!(phi, vec![1.0]);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let phi = softmax(&[1e4, -1e4, 0.0]);
        assert!(phi.iter().all(|p| p.is_finite()));
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_memory_update_clamps_at_zero() {
        let g = vec![arr1(&[1.0, 2.0])];
        let c = arr1(&[0.5, 0.5]);
        let w = Array2::zeros((2, 6));
        let (next, _) = update_memory(&c, &[1.0], &g, &c, &w, &arr1(&[0.0, 0.0])).unwrap();
        assert_eq!(next, arr1(&[0.0, 0.0]));
        // a negative bias entry clamps to zero, a positive one passes
        let (next, _) = update_memory(&c, &[1.0], &g, &c, &w, &arr1(&[-3.0, 0.7])).unwrap();
        assert_eq!(next, arr1(&[0.0, 0.7]));
    }

    #[test]
    fn one_hot_attention_pools_exactly_that_gloss() {
        let g = vec![arr1(&[1.0, 2.0]), arr1(&[-5.0, 3.0])];
        let c = arr1(&[0.0, 0.0]);
        let w = Array2::from_elem((2, 6), 0.1);
        let (_, pooled) = update_memory(&c, &[0.0, 1.0], &g, &c, &w, &arr1(&[0.0, 0.0])).unwrap();
        assert_eq!(pooled, g[1]);
    }

    #[test]
    fn update_memory_rejects_bad_shapes() {
        let g = vec![arr1(&[1.0, 2.0])];
        let c = arr1(&[0.0, 0.0]);
        let w = Array2::zeros((2, 5)); // should be 2 x 6
        assert!(matches!(
            update_memory(&c, &[1.0], &g, &c, &w, &arr1(&[0.0, 0.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn single_pass_trace_has_one_record() {
        let mut rng = StdRng::seed_from_u64(5);
        let g = vec![rand_vec(&mut rng, 3), rand_vec(&mut rng, 3)];
        let c = rand_vec(&mut rng, 3);
        let w = Array2::from_shape_fn((3, 9), |_| rng.random_range(-0.5..0.5));
        let b = rand_vec(&mut rng, 3);
        let trace = run_attention(&g, &c, &w, &b, 1).unwrap();
        assert_eq!(trace.passes.len(), 1);
        assert_eq!(trace.final_raw().len(), 2);
    }

    #[test]
    fn identical_gloss_vectors_stay_uniform_across_passes() {
        let mut rng = StdRng::seed_from_u64(9);
        let shared = rand_vec(&mut rng, 4);
        let g = vec![shared.clone(), shared.clone(), shared];
        let c = rand_vec(&mut rng, 4);
        let w = Array2::from_shape_fn((4, 12), |_| rng.random_range(-0.5..0.5));
        let b = rand_vec(&mut rng, 4);
        let trace = run_attention(&g, &c, &w, &b, 3).unwrap();
        for pass in &trace.passes {
            for phi in &pass.attention {
                assert!((phi - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_sums_to_one_and_permutation_symmetry_holds() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..40 {
            let senses = rng.random_range(2..6);
            let d = rng.random_range(2..6);
            let g: Vec<Array1<f64>> = (0..senses).map(|_| rand_vec(&mut rng, d)).collect();
            let c = rand_vec(&mut rng, d);
            let w = Array2::from_shape_fn((d, 3 * d), |_| rng.random_range(-0.5..0.5));
            let b = rand_vec(&mut rng, d);
            let trace = run_attention(&g, &c, &w, &b, 3).unwrap();
            for pass in &trace.passes {
                let total: f64 = pass.attention.iter().sum();
                assert!((total - 1.0).abs() < 1e-6);
                assert!(pass.attention.iter().all(|&p| p > 0.0 && p <= 1.0));
                assert!(pass.memory.iter().all(|&m| m >= 0.0));
            }

            // reversing the sense order reverses phi and leaves p, m intact
            let mut rev = g.clone();
            rev.reverse();
            let rtrace = run_attention(&rev, &c, &w, &b, 3).unwrap();
            for (pass, rpass) in trace.passes.iter().zip(&rtrace.passes) {
                let mut flipped = rpass.attention.clone();
                flipped.reverse();
                for (a, b) in pass.attention.iter().zip(&flipped) {
                    assert!((a - b).abs() < 1e-12);
                }
                for (a, b) in pass.pooled.iter().zip(&rpass.pooled) {
                    assert!((a - b).abs() < 1e-12);
                }
                for (a, b) in pass.memory.iter().zip(&rpass.memory) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    /// The tape-built attention used in training must agree with the
    /// straight-line implementation above.
    #[test]
    fn tape_attention_matches_straight_line_recurrence() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..20 {
            let senses = rng.random_range(1..5);
            let d = rng.random_range(2..5);
            let passes = rng.random_range(1..4);
            let g: Vec<Array1<f64>> = (0..senses).map(|_| rand_vec(&mut rng, d)).collect();
            let c = rand_vec(&mut rng, d);
            let w = Array2::from_shape_fn((d, 3 * d), |_| rng.random_range(-0.5..0.5));
            let b = rand_vec(&mut rng, d);

            let want = run_attention(&g, &c, &w, &b, passes).unwrap();

            let store = ParamStore::new();
            let mut tape = Tape::new(&store);
            let mut g_mat = Arr::zeros((d, senses));
            for (j, gv) in g.iter().enumerate() {
                g_mat.column_mut(j).assign(gv);
            }
            let g_var = tape.constant(g_mat);
            let c_var = tape.constant(c.clone().insert_axis(ndarray::Axis(1)));
            let w_var = tape.constant(w.clone());
            let b_var = tape.constant(b.clone().insert_axis(ndarray::Axis(1)));

            let mut memory = c_var;
            for p in 0..passes {
                let raw = tape.matmul_ta(g_var, memory);
                let phi = tape.softmax(raw);
                let pooled = tape.matmul(g_var, phi);
                let stacked = tape.concat_rows(vec![memory, pooled, c_var]);
                let lin = tape.matmul(w_var, stacked);
                let lin = tape.add_col_broadcast(lin, b_var);
                memory = tape.relu(lin);

                let raw_v = tape.value(raw).column(0).to_vec();
                let phi_v = tape.value(phi).column(0).to_vec();
                let mem_v = tape.value(memory).column(0).to_vec();
                for (a, b) in raw_v.iter().zip(&want.passes[p].raw) {
                    assert!((a - b).abs() < 1e-12);
                }
                for (a, b) in phi_v.iter().zip(&want.passes[p].attention) {
                    assert!((a - b).abs() < 1e-12);
                }
                for (a, b) in mem_v.iter().zip(&want.passes[p].memory) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    /// Analytic gradients of a projection of the final attention with
    /// respect to W, b, the gloss vectors, and the context match central
    /// finite differences.
    #[test]
    fn attention_gradients_match_finite_differences()  {
        let mut outer = StdRng::seed_from_u64(33);
        for trial in 0..10 {
            let senses = outer.random_range(2..5);
            let d = outer.random_range(2..5);
            let passes = 3;
            let mut store = ParamStore::new();
            let mut rng = StdRng::seed_from_u64(100 + trial);
            store.register("g", Arr::from_shape_fn((d, senses), |_| rng.random_range(-1.0..1.0)));
            store.register("c", Arr::from_shape_fn((d, 1), |_| rng.random_range(-1.0..1.0)));
            store.register("w", Arr::from_shape_fn((d, 3 * d), |_| rng.random_range(-0.5..0.5)));
            store.register("b", Arr::from_shape_fn((d, 1), |_| rng.random_range(-0.5..0.5)));
            let proj = Arr::from_shape_fn((senses, 1), |_| rng.random_range(-1.0..1.0));

            let loss_of = |store: &ParamStore| -> (f64, std::collections::HashMap<ParamId, Arr>) {
                let mut tape = Tape::new(store);
                let g = tape.param(ParamId(0));
                let c = tape.param(ParamId(1));
                let w = tape.param(ParamId(2));
                let b = tape.param(ParamId(3));
                let mut memory = c;
                let mut phi = None;
                for _ in 0..passes {
                    let raw = tape.matmul_ta(g, memory);
                    let p = tape.softmax(raw);
                    phi = Some(p);
                    let pooled = tape.matmul(g, p);
                    let stacked = tape.concat_rows(vec![memory, pooled, c]);
                    let lin = tape.matmul(w, stacked);
                    let lin = tape.add_col_broadcast(lin, b);
                    memory = tape.relu(lin);
                }
                let proj_var = tape.constant(proj.clone());
                let loss = tape.matmul_ta(proj_var, phi.unwrap());
                let grads = tape.backward(loss);
                (tape.value(loss)[(0, 0)], grads)
            };

            let (_, analytic) = loss_of(&store);
            let eps = 1e-5;
            for pid in 0..4 {
                let pid = ParamId(pid);
                let dim = store.get(pid).raw_dim();
                for r in 0..dim[0] {
                    for cidx in 0..dim[1] {
                        let orig = store.get_mut(pid)[(r, cidx)];
                        store.get_mut(pid)[(r, cidx)] = orig + eps;
                        let (up, _) = loss_of(&store);
                        store.get_mut(pid)[(r, cidx)] = orig - eps;
                        let (down, _) = loss_of(&store);
                        store.get_mut(pid)[(r, cidx)] = orig;
                        let numeric = (up - down) / (2.0 * eps);
                        let a = analytic.get(&pid).map(|g| g[(r, cidx)]).unwrap_or(0.0);
                        let denom = a.abs().max(numeric.abs());
                        if denom > 1e-7 {
                            assert!(
                                (a - numeric).abs() / denom < 1e-3,
                                "trial {trial} param {pid:?} [{r},{cidx}]: {a} vs {numeric}"
                            );
                        }
                    }
                }
            }
        }
    }
}
