use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::arch::{self, CostMode, GateChoice, LayerChoice, SearchSpace};
use crate::objectives::cosface_loss;
use crate::tensor::{grad_check, Tape, Tensor};

use super::*;

/// Two layers, three tasks, 8x8 images in 4x4 patches (5 tokens).
fn toy() -> SupernetConfig {
    let space = SearchSpace::new(
        vec![2, 4],
        vec![1.0, 2.0],
        2,
        3,
        8,
        2,
        5,
        &[],
        Some(16),
    )
    .unwrap();
    SupernetConfig::new(space, 8, 4, 6, vec![3, 4, 2]).unwrap()
}

/// One layer, two tasks, 4x4 images in 2x2 patches; small enough for
/// numeric gradient checking.
fn tiny() -> SupernetConfig {
    let space = SearchSpace::new(
        vec![1, 2],
        vec![0.5, 1.0],
        1,
        2,
        4,
        2,
        5,
        &[],
        Some(4),
    )
    .unwrap();
    SupernetConfig::new(space, 4, 2, 3, vec![2, 3]).unwrap()
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Replaces every parameter with healthy-magnitude noise so tests do not
/// run at the tiny init scale.
fn randomize(params: &mut SupernetParams, rng: &mut ChaCha20Rng) {
    params.visit_mut(|_, t| {
        let noisy = Tensor::randn(t.shape(), 0.3, rng);
        *t = noisy;
    });
}

fn random_images(cfg: &SupernetConfig, batch: usize, rng: &mut ChaCha20Rng) -> Tensor {
    Tensor::randn(&[batch, cfg.pixels()], 1.0, rng)
}

#[test]
fn config_rejects_mismatched_geometry() {
    let cfg = toy();
    // Patch size must divide the image.
    let mut bad = cfg.clone();
    bad.image_size = 9;
    assert!(bad.validate().is_err());
    // Token count must equal patches + 1.
    let mut bad = cfg.clone();
    bad.patch_size = 8;
    assert!(bad.validate().is_err());
    // Class counts must cover every task, each with at least 2 classes.
    let mut bad = cfg.clone();
    bad.classes_per_task = vec![3, 4];
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.classes_per_task = vec![3, 4, 1];
    assert!(bad.validate().is_err());
    // Cosine losses need at least 2 embedding dims.
    let mut bad = cfg.clone();
    bad.feature_dim = 1;
    assert!(bad.validate().is_err());
    assert!(cfg.validate().is_ok());
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let cfg = toy();
    let a = SupernetParams::init(&cfg, &mut rng(7)).unwrap();
    let b = SupernetParams::init(&cfg, &mut rng(7)).unwrap();
    let c = SupernetParams::init(&cfg, &mut rng(8)).unwrap();
    let mut flat_a = Vec::new();
    a.visit(|_, t| flat_a.extend_from_slice(t.data()));
    let mut flat_b = Vec::new();
    b.visit(|_, t| flat_b.extend_from_slice(t.data()));
    let mut flat_c = Vec::new();
    c.visit(|_, t| flat_c.extend_from_slice(t.data()));
    assert_eq!(flat_a, flat_b);
    assert_ne!(flat_a, flat_c);
}

#[test]
fn gate_probs_sum_to_one_and_match_modes() {
    let mut r = rng(1);
    // Equal logits give an exact even split in expectation mode.
    let p = gumbel_gate_probs([0.3, 0.3], 1.0, &mut r, GateMode::Expectation).unwrap();
    assert_eq!(p, [0.5, 0.5]);
    // Any finite logits: both entries in [0, 1], summing to one exactly.
    for _ in 0..200 {
        let l = [r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0)];
        let tau = r.gen_range(0.05..5.0);
        for mode in [GateMode::Sample, GateMode::Expectation, GateMode::Hard] {
            let p = gumbel_gate_probs(l, tau, &mut r, mode).unwrap();
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)), "{p:?}");
            assert_eq!(p[0] + p[1], 1.0);
        }
    }
    // Sampling needs a positive temperature; logits must be finite.
    assert!(gumbel_gate_probs([0.0, 0.0], 0.0, &mut r, GateMode::Sample).is_err());
    assert!(gumbel_gate_probs([f64::NAN, 0.0], 1.0, &mut r, GateMode::Expectation).is_err());
}

#[test]
fn gumbel_sampling_sharpens_with_low_temperature() {
    let mut r = rng(2024);
    let mut confident = 0;
    for _ in 0..1000 {
        let p = gumbel_gate_probs([5.0, -5.0], 0.1, &mut r, GateMode::Sample).unwrap();
        if p[0] > 0.99 {
            confident += 1;
        }
    }
    assert!(confident >= 999, "only {confident}/1000 draws were confident");
}

#[test]
fn hard_mode_is_one_hot_with_shared_ties() {
    let mut r = rng(3);
    assert_eq!(
        gumbel_gate_probs([2.0, 1.0], 1.0, &mut r, GateMode::Hard).unwrap(),
        [1.0, 0.0]
    );
    assert_eq!(
        gumbel_gate_probs([1.0, 2.0], 1.0, &mut r, GateMode::Hard).unwrap(),
        [0.0, 1.0]
    );
    assert_eq!(
        gumbel_gate_probs([0.0, 0.0], 1.0, &mut r, GateMode::Hard).unwrap(),
        [1.0, 0.0]
    );
}

#[test]
fn gate_decision_applies_both_threshold() {
    // Softmax of (3, -1) puts ~0.98 on the shared path: a clear winner.
    assert_eq!(gate_decision([3.0, -1.0], 0.2), GateChoice::SharedOnly);
    assert_eq!(gate_decision([-3.0, 1.0], 0.2), GateChoice::PrivateOnly);
    // A 0.1-logit edge leaves the probabilities within the threshold.
    assert_eq!(gate_decision([0.1, 0.0], 0.2), GateChoice::Both);
    assert_eq!(gate_decision([0.05, 0.0], 0.2), GateChoice::Both);
    // Zero threshold always picks a side, shared on exact ties.
    assert_eq!(gate_decision([0.0, 0.0], 0.0), GateChoice::SharedOnly);
}

#[test]
fn patchify_lays_out_patches_row_major() {
    let cfg = tiny();
    let img = Tensor::new(vec![1, 16], (0..16).map(f64::from).collect()).unwrap();
    let rows = patchify(&cfg, &img).unwrap();
    assert_eq!(rows.shape(), &[4, 4]);
    assert_eq!(rows.row(0), &[0.0, 1.0, 4.0, 5.0]);
    assert_eq!(rows.row(1), &[2.0, 3.0, 6.0, 7.0]);
    assert_eq!(rows.row(2), &[8.0, 9.0, 12.0, 13.0]);
    assert_eq!(rows.row(3), &[10.0, 11.0, 14.0, 15.0]);
}

#[test]
fn dropped_block_is_bit_exact_identity() {
    let cfg = toy();
    let mut r = rng(11);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let mut tape = Tape::new();
    let sp = stage(&mut tape, &params, false);
    for _ in 0..50 {
        let x = tape.constant(Tensor::randn(&[5, 8], 1.0, &mut r));
        let flops_before = tape.matmul_flops();
        let choice = LayerChoice {
            heads: 4,
            mlp_ratio: 2.0,
            keep: false,
            gates: vec![GateChoice::Both; 3],
        };
        let out = block_forward(
            &mut tape,
            x,
            &sp.layers[0],
            &cfg.space,
            &choice,
            0,
            &GateCoeff::Fixed([0.5, 0.5]),
            cfg.ln_eps,
        )
        .unwrap();
        assert_eq!(tape.value(out).data(), tape.value(x).data());
        assert_eq!(tape.matmul_flops(), flops_before, "identity must build no ops");
    }
}

#[test]
fn one_sided_gates_ignore_the_unused_path() {
    let cfg = toy();
    let mut r = rng(12);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let arch = cfg.space.max_arch(GateChoice::Both);
    let images = random_images(&cfg, 2, &mut r);
    let patch_rows = patchify(&cfg, &images).unwrap();
    let task = 1;

    let run = |p: &SupernetParams, gate: [f64; 2]| {
        let mut tape = Tape::new();
        let sp = stage(&mut tape, p, false);
        let gates = vec![GateCoeff::Fixed(gate); 2];
        let emb =
            forward_embeddings(&mut tape, &sp, &cfg, &arch, task, &patch_rows, &gates).unwrap();
        tape.value(emb).clone()
    };

    // Shared-only routing: clobbering the private path changes nothing.
    let base = run(&params, [1.0, 0.0]);
    let mut mutated = params.clone();
    for l in &mut mutated.layers {
        l.private[task] = Ffn {
            w1: Tensor::randn(l.private[task].w1.shape(), 9.0, &mut r),
            b1: Tensor::randn(l.private[task].b1.shape(), 9.0, &mut r),
            w2: Tensor::randn(l.private[task].w2.shape(), 9.0, &mut r),
            b2: Tensor::randn(l.private[task].b2.shape(), 9.0, &mut r),
        };
    }
    assert_eq!(base.data(), run(&mutated, [1.0, 0.0]).data());

    // Private-only routing: clobbering the shared path changes nothing.
    let base = run(&params, [0.0, 1.0]);
    let mut mutated = params.clone();
    for l in &mut mutated.layers {
        l.shared = Ffn {
            w1: Tensor::randn(l.shared.w1.shape(), 9.0, &mut r),
            b1: Tensor::randn(l.shared.b1.shape(), 9.0, &mut r),
            w2: Tensor::randn(l.shared.w2.shape(), 9.0, &mut r),
            b2: Tensor::randn(l.shared.b2.shape(), 9.0, &mut r),
        };
    }
    assert_eq!(base.data(), run(&mutated, [0.0, 1.0]).data());
}

#[test]
fn narrow_heads_equal_zero_masked_full_width() {
    let cfg = toy();
    let mut r = rng(13);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);

    // Independent oracle: run at full width with the masked heads' output
    // rows zeroed, so their (nonzero) attention results are annihilated at
    // the projection. Only the slicing behavior is under test.
    let w = 2 * cfg.space.head_dim(); // 2 of 4 heads
    let mut masked = params.clone();
    let d = cfg.space.embed_dim();
    for row in w..masked.layers[0].wo.rows() {
        for col in 0..d {
            masked.layers[0].wo.set(row, col, 0.0);
        }
    }

    let x = Tensor::randn(&[5, 8], 1.0, &mut r);
    let run = |p: &SupernetParams, heads: usize| {
        let mut tape = Tape::new();
        let sp = stage(&mut tape, p, false);
        let choice = LayerChoice {
            heads,
            mlp_ratio: 1.0,
            keep: true,
            gates: vec![GateChoice::Both; 3],
        };
        let xv = tape.constant(x.clone());
        let out = block_forward(
            &mut tape,
            xv,
            &sp.layers[0],
            &cfg.space,
            &choice,
            0,
            &GateCoeff::Fixed([0.5, 0.5]),
            cfg.ln_eps,
        )
        .unwrap();
        tape.value(out).clone()
    };

    let sliced = run(&params, 2);
    let oracle = run(&masked, 4);
    for (a, b) in sliced.data().iter().zip(oracle.data()) {
        assert_eq!(a, b, "sliced {a} vs masked oracle {b}");
    }
}

#[test]
fn whole_model_gradients_match_numeric_check() {
    let cfg = tiny();
    let mut r = rng(21);
    let mut template = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut template, &mut r);

    let images = random_images(&cfg, 2, &mut r);
    let patch_rows = patchify(&cfg, &images).unwrap();
    let labels = vec![0usize, 1];
    let task = 0;
    // Narrow sub-network, so gradients must flow through genuine slices.
    let arch = crate::arch::Architecture {
        layers: vec![LayerChoice {
            heads: 1,
            mlp_ratio: 0.5,
            keep: true,
            gates: vec![GateChoice::Both; 2],
        }],
    };

    let mut named: Vec<(String, Tensor)> = Vec::new();
    template.visit(|n, t| named.push((n.to_string(), t.clone())));
    let slots = named.len();
    named.push(("gate0.logits".into(), Tensor::new(vec![1, 2], vec![0.4, -0.3]).unwrap()));

    let tpl = template.clone();
    let cfg2 = cfg.clone();
    let report = grad_check(
        &named,
        move |tape, vars| {
            let sp = restage(&tpl, &vars[..slots])?;
            let probs = tape.softmax_rows(vars[slots]);
            let p_shared = tape.slice_cols(probs, 0..1)?;
            let p_private = tape.slice_cols(probs, 1..2)?;
            let gates = vec![GateCoeff::Vars {
                shared: p_shared,
                private: p_private,
            }];
            let emb = forward_embeddings(tape, &sp, &cfg2, &arch, task, &patch_rows, &gates)?;
            cosface_loss(tape, emb, sp.heads[task].classifier, &labels, 16.0, 0.2)
        },
        1e-4,
        150,
        &mut r,
    )
    .unwrap();
    assert!(
        report.max_rel_err < 1e-3,
        "worst relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
    assert!(report.non_finite.is_empty(), "non-finite slots: {:?}", report.non_finite);
}

#[test]
fn stage_flat_matches_visit_order() {
    let cfg = toy();
    let params = SupernetParams::init(&cfg, &mut rng(5)).unwrap();
    let mut tape = Tape::new();
    let sp = stage(&mut tape, &params, true);
    let flat = sp.flat();
    let mut expected: Vec<Tensor> = Vec::new();
    params.visit(|_, t| expected.push(t.clone()));
    assert_eq!(flat.len(), expected.len());
    for (v, t) in flat.iter().zip(&expected) {
        assert_eq!(tape.value(*v).shape(), t.shape());
        assert_eq!(tape.value(*v).data(), t.data());
    }
}

#[test]
fn all_layers_dropped_reduces_to_stem_and_head() {
    let cfg = toy();
    let mut r = rng(31);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let images = random_images(&cfg, 3, &mut r);
    let patch_rows = patchify(&cfg, &images).unwrap();
    let task = 2;
    let arch = crate::arch::Architecture {
        layers: vec![
            LayerChoice {
                heads: 2,
                mlp_ratio: 1.0,
                keep: false,
                gates: vec![GateChoice::SharedOnly; 3],
            };
            2
        ],
    };

    let mut tape = Tape::new();
    let sp = stage(&mut tape, &params, false);
    let gates = vec![GateCoeff::Fixed([0.0, 0.0]); 2];
    let via_model =
        forward_embeddings(&mut tape, &sp, &cfg, &arch, task, &patch_rows, &gates).unwrap();

    // Reference composed independently: stem, final norm, head only.
    let mut ref_tape = Tape::new();
    let pr = ref_tape.constant(patch_rows.clone());
    let pw = ref_tape.constant(params.patch_w.clone());
    let pb = ref_tape.constant(params.patch_b.clone());
    let proj = ref_tape.matmul(pr, pw, false, false).unwrap();
    let proj = ref_tape.add_bias(proj, pb).unwrap();
    let cls = ref_tape.constant(params.cls.clone());
    let mut parts = Vec::new();
    for i in 0..3 {
        parts.push(cls);
        parts.push(ref_tape.slice_rows(proj, i * 4..(i + 1) * 4).unwrap());
    }
    let tokens = ref_tape.concat_rows(&parts).unwrap();
    let pos = ref_tape.constant(params.pos.clone());
    let pos3 = ref_tape.concat_rows(&[pos, pos, pos]).unwrap();
    let x = ref_tape.add(tokens, pos3).unwrap();
    let fg = ref_tape.constant(params.final_g.clone());
    let fb = ref_tape.constant(params.final_b.clone());
    let x = ref_tape.layernorm(x, fg, fb, cfg.ln_eps).unwrap();
    let cls_rows = ref_tape.lookup(x, &[0, 5, 10]).unwrap();
    let hw = ref_tape.constant(params.heads[task].w.clone());
    let hb = ref_tape.constant(params.heads[task].b.clone());
    let emb = ref_tape.matmul(cls_rows, hw, false, false).unwrap();
    let emb = ref_tape.add_bias(emb, hb).unwrap();

    assert_eq!(tape.value(via_model).data(), ref_tape.value(emb).data());
}

#[test]
fn forward_flops_match_cost_accounting() {
    let cfg = toy();
    let mut r = rng(41);
    let params = SupernetParams::init(&cfg, &mut r).unwrap();
    let gates = GateState::new(2, 3);
    for trial in 0..10 {
        let arch = arch::sample_uniform(&cfg.space, &mut r);
        let task = trial % 3;
        let report = arch::cost(
            &arch,
            &cfg.space,
            &CostMode::Trimmed(BTreeSet::from([task])),
        )
        .unwrap();
        for batch in [1usize, 3] {
            let images = random_images(&cfg, batch, &mut r);
            let patch_rows = patchify(&cfg, &images).unwrap();
            let coeffs =
                resolve_gate_coeffs(&arch, task, &gates, GatePolicy::FromArch, &mut r).unwrap();
            let gate_inputs: Vec<GateCoeff> = coeffs.into_iter().map(GateCoeff::Fixed).collect();
            let mut tape = Tape::new();
            let sp = stage(&mut tape, &params, false);
            forward_tokens(&mut tape, &sp, &cfg, &arch, task, &patch_rows, &gate_inputs).unwrap();
            assert_eq!(
                tape.matmul_flops(),
                batch as u64 * report.flops,
                "arch {} task {task} batch {batch}",
                arch.encode()
            );
        }
    }
}

#[test]
fn trimmed_model_matches_hard_gated_supernet() {
    let cfg = toy();
    let mut r = rng(51);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let mut gates = GateState::new(2, 3);
    for l in 0..2 {
        for t in 0..3 {
            gates
                .set_logits(l, t, [r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5)])
                .unwrap();
        }
    }
    let tasks = BTreeSet::from([0usize, 2]);
    let delta = DEFAULT_BOTH_DELTA;
    let mut checked_both = false;
    for _ in 0..8 {
        let arch = arch::sample_uniform(&cfg.space, &mut r);
        let trimmed = extract_subnet(&cfg, &params, &gates, &arch, &tasks, delta).unwrap();
        checked_both |= trimmed
            .manifest
            .decisions
            .iter()
            .flatten()
            .any(|&(_, d)| d == GateChoice::Both);
        let images = random_images(&cfg, 3, &mut r);
        for &task in &tasks {
            let full = run_embeddings(
                &cfg,
                &params,
                &gates,
                &arch,
                task,
                &images,
                GatePolicy::Hard { delta },
                &mut r,
            )
            .unwrap();
            let cut = trimmed.forward(&images, task).unwrap();
            assert_eq!(full.shape(), cut.shape());
            let worst = full
                .data()
                .iter()
                .zip(cut.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst <= 1e-6, "arch {} task {task}: diff {worst}", arch.encode());
        }
    }
    assert!(checked_both, "logits never produced a kept-both gate; weak test");
}

#[test]
fn trimmed_extraction_decides_paths_from_logits() {
    let cfg = toy();
    let mut r = rng(61);
    let params = SupernetParams::init(&cfg, &mut r).unwrap();
    let arch = cfg.space.max_arch(GateChoice::Both);
    let tasks = BTreeSet::from([1usize]);

    // Lopsided logits: shared everywhere, no private tensors stored.
    let mut gates = GateState::new(2, 3);
    for l in 0..2 {
        gates.set_logits(l, 1, [3.0, -1.0]).unwrap();
    }
    let trimmed = extract_subnet(&cfg, &params, &gates, &arch, &tasks, 0.2).unwrap();
    for layer in trimmed.layers.iter().flatten() {
        assert_eq!(layer.paths.len(), 1);
        assert_eq!(layer.paths[0].0, PathKind::Shared);
    }
    for d in trimmed.manifest.decisions.iter().flatten() {
        assert_eq!(*d, (1usize, GateChoice::SharedOnly));
    }

    // Near-tied logits keep both paths.
    let mut gates = GateState::new(2, 3);
    for l in 0..2 {
        gates.set_logits(l, 1, [0.05, 0.0]).unwrap();
    }
    let trimmed = extract_subnet(&cfg, &params, &gates, &arch, &tasks, 0.2).unwrap();
    for layer in trimmed.layers.iter().flatten() {
        let kinds: Vec<PathKind> = layer.paths.iter().map(|(k, _)| *k).collect();
        assert_eq!(kinds, vec![PathKind::Shared, PathKind::Private(1)]);
    }
}

#[test]
fn trimmed_param_count_drops_other_tasks() {
    let cfg = toy();
    let mut r = rng(71);
    let params = SupernetParams::init(&cfg, &mut r).unwrap();
    let gates = GateState::new(2, 3); // zero logits: every decision keeps both
    let arch = cfg.space.max_arch(GateChoice::Both);
    let tasks = BTreeSet::from([1usize]);
    let trimmed = extract_subnet(&cfg, &params, &gates, &arch, &tasks, 0.2).unwrap();
    let expected = params.numel()
        - params.private_numel(0)
        - params.private_numel(2)
        - params.head_numel(0)
        - params.head_numel(2);
    assert_eq!(trimmed.num_params(), expected);
    assert!(trimmed.num_params() < params.numel());
}

#[test]
fn trimmed_save_load_roundtrip_is_stable() {
    let cfg = toy();
    let mut r = rng(81);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let mut gates = GateState::new(2, 3);
    for l in 0..2 {
        for t in 0..3 {
            gates
                .set_logits(l, t, [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
                .unwrap();
        }
    }
    let arch = arch::sample_uniform(&cfg.space, &mut r);
    let tasks = BTreeSet::from([0usize, 1]);
    let trimmed = extract_subnet(&cfg, &params, &gates, &arch, &tasks, 0.2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("model.bin");
    let p2 = dir.path().join("model2.bin");
    trimmed.save(&p1).unwrap();
    let loaded = TrimmedModel::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    assert_eq!(loaded.manifest.arch, trimmed.manifest.arch);
    assert_eq!(loaded.manifest.tasks, trimmed.manifest.tasks);
    assert_eq!(loaded.manifest.decisions, trimmed.manifest.decisions);
    assert_eq!(loaded.manifest.cost, trimmed.manifest.cost);
    assert_eq!(loaded.num_params(), trimmed.num_params());

    // Values survive at f32 precision, so forwards agree to that scale.
    let images = random_images(&cfg, 2, &mut r);
    let a = trimmed.forward(&images, 0).unwrap();
    let b = loaded.forward(&images, 0).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-4, "diff {worst}");
}

#[test]
fn checkpoint_roundtrip_preserves_everything() {
    let cfg = toy();
    let mut r = rng(91);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let mut gates = GateState::new(2, 3);
    gates.set_logits(1, 2, [0.25, -0.75]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("ckpt.bin");
    let p2 = dir.path().join("ckpt2.bin");
    save_checkpoint(&p1, &cfg, &params, &gates).unwrap();
    let (cfg2, params2, gates2) = load_checkpoint(&p1).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(gates2, gates);
    save_checkpoint(&p2, &cfg2, &params2, &gates2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    // Loaded values are exactly the f32 narrowing of the originals.
    let mut originals = Vec::new();
    params.visit(|_, t| originals.push(t.clone()));
    let mut idx = 0;
    params2.visit(|_, t| {
        for (got, want) in t.data().iter().zip(originals[idx].data()) {
            assert_eq!(*got, (*want as f32) as f64);
        }
        idx += 1;
    });
}

#[test]
fn extraction_rejects_bad_requests() {
    let cfg = toy();
    let params = SupernetParams::init(&cfg, &mut rng(3)).unwrap();
    let gates = GateState::new(2, 3);
    let arch = cfg.space.max_arch(GateChoice::Both);
    assert!(extract_subnet(&cfg, &params, &gates, &arch, &BTreeSet::new(), 0.2).is_err());
    assert!(extract_subnet(&cfg, &params, &gates, &arch, &BTreeSet::from([7usize]), 0.2).is_err());
    assert!(extract_subnet(&cfg, &params, &gates, &arch, &BTreeSet::from([0usize]), -0.1).is_err());
    let small_gates = GateState::new(1, 3);
    assert!(
        extract_subnet(&cfg, &params, &small_gates, &arch, &BTreeSet::from([0usize]), 0.2).is_err()
    );
    // Requesting a task absent from the extraction fails at forward time.
    let trimmed =
        extract_subnet(&cfg, &params, &gates, &arch, &BTreeSet::from([1usize]), 0.2).unwrap();
    let images = random_images(&cfg, 1, &mut rng(4));
    assert!(trimmed.forward(&images, 0).is_err());
}

#[test]
fn run_embeddings_is_deterministic_for_deterministic_policies() {
    let cfg = toy();
    let mut r = rng(101);
    let mut params = SupernetParams::init(&cfg, &mut r).unwrap();
    randomize(&mut params, &mut r);
    let mut gates = GateState::new(2, 3);
    gates.set_logits(0, 0, [0.9, -0.2]).unwrap();
    let arch = arch::sample_uniform(&cfg.space, &mut r);
    let images = random_images(&cfg, 2, &mut r);
    for policy in [
        GatePolicy::Expectation,
        GatePolicy::Hard { delta: 0.2 },
        GatePolicy::FromArch,
    ] {
        let a =
            run_embeddings(&cfg, &params, &gates, &arch, 0, &images, policy, &mut rng(1)).unwrap();
        let b =
            run_embeddings(&cfg, &params, &gates, &arch, 0, &images, policy, &mut rng(2)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
