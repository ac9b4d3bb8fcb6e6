//! Oracle cross-checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, log_sum_exp, Tensor, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::config::TrainConfig;
use crate::crf::{inside, inside_graph, tree_entropy, viterbi, SpanScores};
use crate::error::Result;
use crate::model::Model;
use crate::oracle::{enumerate_trees, exact_argmax, exact_bound, exact_entropy, exact_partition, ReferenceRnng};
use crate::treebank::{actions_to_tree, count_trees, TreeRepr};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, worst: f64, tolerance: f64) -> Self {
        Check {
            name,
            passed: worst <= tolerance,
            detail: format!("worst {worst:.3e}, tolerance {tolerance:.0e}"),
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Runs every cross-check on random instances up to `max_len` words
/// (capped at 8), `trials` instances per length.
pub fn run(max_len: usize, trials: usize, seed: u64) -> Result<Vec<Check>> {
    let max_len = max_len.clamp(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (mut z_err, mut h_err, mut v_bad) = (0.0f64, 0.0f64, 0usize);
    for len in 2..=max_len {
        for _ in 0..trials {
            let s = SpanScores::random(len, 3.0, &mut rng);
            let chart = inside(&s);
            z_err = z_err.max(rel(chart.log_z(), exact_partition(&s)?));
            h_err = h_err.max((tree_entropy(&chart) - exact_entropy(&s)?).abs());
            if viterbi(&s).0 != exact_argmax(&s)?.0 {
                v_bad += 1;
            }
        }
    }
    out.push(Check::new("inside partition matches enumeration", z_err, 1e-10));
    out.push(Check::new("chart entropy matches enumeration", h_err, 1e-8));
    out.push(Check {
        name: "viterbi matches enumeration argmax",
        passed: v_bad == 0,
        detail: format!("{v_bad} mismatches"),
    });
    let ties = viterbi(&SpanScores::zeros(max_len)).0 == TreeRepr::left_branching(max_len)?;
    out.push(Check {
        name: "uniform scores decode to the left-branching tree",
        passed: ties,
        detail: String::new(),
    });

    let mut bij_bad = 0;
    for len in 1..=max_len {
        let trees = enumerate_trees(len)?;
        if trees.len().to_string() != count_trees(len)?.to_string() {
            bij_bad += 1;
        }
        for t in &trees {
            let (n, spans) = actions_to_tree(t.actions())?;
            if n != len || &spans != t.spans() {
                bij_bad += 1;
            }
        }
    }
    out.push(Check {
        name: "tree/action bijection and tree counts",
        passed: bij_bad == 0,
        detail: format!("{bij_bad} failures"),
    });

    let values: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let logz = grad_check(&[Tensor::vector(values.clone())], |g, x| Ok(inside_graph(g, x[0], 5)?.log_z), DEFAULT_STEP, DEFAULT_TOLERANCE)?;
    let ent = grad_check(
        &[Tensor::vector(values)],
        |g, x| inside_graph(g, x[0], 5)?.entropy(g),
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )?;
    out.push(Check::new("log Z gradient", logz.max_rel_err, DEFAULT_TOLERANCE));
    out.push(Check::new("entropy gradient", ent.max_rel_err, DEFAULT_TOLERANCE));

    let cfg = TrainConfig {
        word_dim: 6,
        q_hidden: 5,
        mlp_hidden: 5,
        max_len: 8,
        init_range: 0.5,
        ..TrainConfig::default()
    };
    let (mut joint_err, mut gap_err) = (0.0f64, 0.0f64);
    let mut bound_ok = true;
    for trial in 0..trials.min(10) {
        let model = Model::new(&cfg, 8, &mut rng)?;
        let len = 2 + trial % (max_len.min(5) - 1);
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..8)).collect();
        let reference = ReferenceRnng::new(&model.params)?;
        let mut joints = Vec::new();
        for t in enumerate_trees(len)? {
            let (a, b) = model.joint_terms(&tokens, &t)?;
            let (c, d) = reference.joint_terms(&tokens, &t)?;
            joint_err = joint_err.max(rel(a + b, c + d));
            joints.push(a + b);
        }
        let bound = exact_bound(&model, &tokens)?;
        joint_err = joint_err.max(rel(log_sum_exp(&joints), bound.log_marginal));
        bound_ok &= bound.elbo <= bound.log_marginal + 1e-12;
        gap_err = gap_err.max((bound.log_marginal - bound.elbo - bound.posterior_kl).abs());
    }
    out.push(Check::new("generative model matches the reference pass", joint_err, 1e-8));
    out.push(Check {
        name: "ELBO bounds the marginal with gap equal to KL",
        passed: bound_ok && gap_err <= 1e-8,
        detail: format!("worst gap error {gap_err:.3e}"),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run(6, 5, 1).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
