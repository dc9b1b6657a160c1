//! Central-difference verification of tape gradients.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
    /// Coordinates where either gradient came out non-finite.
    pub non_finite: Vec<(String, usize)>,
    /// Number of coordinates compared.
    pub checked: usize,
}

/// Compares tape gradients against central differences.
///
/// `build` must deterministically construct a scalar loss from the given
/// parameter leaves; it is re-invoked with perturbed copies, so any noise it
/// needs has to be fixed beforehand and passed in as constants. Per tensor at
/// most `max_coords` coordinates are probed (all of them when the tensor is
/// small). The relative error of a coordinate is
/// `|analytic - fd| / max(1e-8, |analytic| + |fd|)`.
pub fn grad_check<F>(
    params: &[(String, Tensor)],
    build: F,
    eps: f64,
    max_coords: usize,
    rng: &mut ChaCha20Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(CoreError::Config(format!(
            "grad_check step {eps} outside [1e-4, 1e-2]"
        )));
    }
    if max_coords == 0 {
        return Err(CoreError::Config("grad_check needs max_coords >= 1".into()));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(CoreError::Shape {
            op: "grad_check",
            detail: format!("loss shape {:?}", tape.value(loss).shape()),
        });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, (_, t))| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        non_finite: Vec::new(),
        checked: 0,
    };
    let mut work: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();

    for (pi, (name, tensor)) in params.iter().enumerate() {
        let n = tensor.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            // Sample distinct coordinates.
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_coords {
                picked.insert(rng.gen_range(0..n));
            }
            picked.into_iter().collect()
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let lp = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let lm = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic[pi].data()[ci];
            if !fd.is_finite() || !an.is_finite() {
                report.non_finite.push((name.clone(), ci));
                continue;
            }
            let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), ci));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rejects_step_outside_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let params = vec![("x".to_string(), Tensor::full(&[2], 1.0))];
        let err = grad_check(
            &params,
            |t, vs| Ok(t.sum_all(vs[0])),
            1e-6,
            8,
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn sum_of_squares_checks_tightly() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = vec![(
            "x".to_string(),
            Tensor::new(vec![2, 3], vec![0.6, -1.2, 0.3, 2.0, -0.4, 1.1]).unwrap(),
        )];
        let rep = grad_check(
            &params,
            |t, vs| {
                let sq = t.hadamard(vs[0], vs[0])?;
                Ok(t.sum_all(sq))
            },
            1e-3,
            16,
            &mut rng,
        )
        .unwrap();
        assert!(rep.non_finite.is_empty());
        assert!(rep.max_rel_err < 1e-5, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn every_primitive_checks_under_1e3_over_seeds_and_shapes() {
        // Random shapes with every axis <= 8, 100 seeds, all primitives in
        // one composite graph per seed.
        for seed in 0..100u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let r = rng.gen_range(2..=8usize);
            let c = rng.gen_range(2..=8usize);
            let params = vec![
                ("a".to_string(), Tensor::randn(&[r, c], 0.8, &mut rng)),
                ("b".to_string(), Tensor::randn(&[c, r], 0.8, &mut rng)),
                ("g".to_string(), Tensor::randn(&[c], 0.3, &mut rng)),
                ("bias".to_string(), Tensor::randn(&[c], 0.5, &mut rng)),
                ("s".to_string(), Tensor::randn(&[1], 0.5, &mut rng)),
            ];
            let labels: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let lookup_rows: Vec<usize> = (0..3).map(|_| rng.gen_range(0..r)).collect();
            let mut ones = Tensor::full(&[c], 1.0);
            for v in ones.data_mut() {
                *v += 0.01;
            }
            let labels2 = labels.clone();
            let rows2 = lookup_rows.clone();
            let gamma_init = ones.clone();

            let rep = grad_check(
                &params,
                move |t, vs| {
                    let (a, b, g, bias, s) = (vs[0], vs[1], vs[2], vs[3], vs[4]);
                    let gm = t.constant(gamma_init.clone());
                    let gsum = t.add(g, gm)?;
                    let prod = t.matmul(a, b, false, false)?; // (r, r)
                    let back = t.matmul(prod, a, false, false)?; // (r, c)
                    let biased = t.add_bias(back, bias)?;
                    let ln = t.layernorm(biased, gsum, bias, 1e-5)?;
                    let act = t.gelu(ln);
                    let soft = t.softmax_rows(act);
                    let picked = t.gather_row_cols(soft, &labels2)?;
                    let lg = t.ln(picked);
                    let l2 = t.l2_normalize_rows(act);
                    let looked = t.lookup(l2, &rows2)?;
                    // Keep relu and sqrt inputs away from their kinks so the
                    // central difference stays on one branch; the kink
                    // behavior itself is covered by dedicated tests below.
                    let shifted = t.add_const(looked, 2.0);
                    let rel = t.relu(shifted);
                    let summed = t.sum_all(rel);
                    let sq = t.hadamard(ln, ln)?;
                    let sq = t.add_const(sq, 0.25);
                    let rooted = t.sqrt(sq);
                    let scaled = t.mul_scalar_var(rooted, s)?;
                    let sliced = t.slice_cols(scaled, 0..c.min(2))?;
                    let sliced = t.slice_rows(sliced, 0..r.min(3))?;
                    let joined = t.concat_rows(&[sliced, sliced])?;
                    let m1 = t.mean_all(joined);
                    let m2 = t.mean_all(lg);
                    let m3 = t.scale(summed, 0.1);
                    let p1 = t.add(m1, m2)?;
                    t.add(p1, m3)
                },
                // The smallest allowed step: deep chains compound the
                // O(eps^2) truncation term, and some sampled coordinates
                // carry tiny gradients that amplify it in relative terms.
                1e-4,
                6,
                &mut rng,
            )
            .unwrap();
            assert!(rep.non_finite.is_empty(), "seed {seed}: non-finite");
            assert!(
                rep.max_rel_err < 1e-3,
                "seed {seed}: rel err {} at {:?}",
                rep.max_rel_err,
                rep.worst
            );
        }
    }

    #[test]
    fn relu_gradient_is_zero_on_negative_branch() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap());
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sqrt_gradient_checks_away_from_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let params = vec![(
            "x".to_string(),
            Tensor::new(vec![3], vec![0.5, 2.0, 9.0]).unwrap(),
        )];
        let rep = grad_check(
            &params,
            |t, vs| {
                let r = t.sqrt(vs[0]);
                Ok(t.sum_all(r))
            },
            1e-3,
            8,
            &mut rng,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "rel err {}", rep.max_rel_err);
    }
}
