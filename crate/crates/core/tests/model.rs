mod common;

use bitplane::model::{train, TrainConfig};
use bitplane::{hessian_vec, nll, objective_grad, ConvLogisticModel, PatchBatch};
use common::*;
use rand::Rng;

fn random_model(lambda: usize, side: usize, scale: f64, seed: u64) -> ConvLogisticModel {
    let mut r = rng(seed);
    let p = (lambda - 1) * side * side + 1;
    let params: Vec<f64> = (0..p).map(|_| r.gen_range(-scale..scale)).collect();
    ConvLogisticModel::from_params(lambda, side, &params).unwrap()
}

/// Labels drawn from a random logistic model, so the fit is non-trivial.
fn teacher_batch(lambda: usize, side: usize, m: usize, seed: u64) -> PatchBatch {
    let mut r = rng(seed);
    let base = random_batch(lambda, side, m, &mut r);
    let teacher = random_model(lambda, side, 0.6, seed + 1000);
    let labels = (0..m)
        .map(|i| {
            let a = teacher.predict_activation(base.sample(i).0).unwrap();
            (r.gen::<f64>() < a) as u8
        })
        .collect();
    PatchBatch::new(lambda, side, base.features().to_vec(), labels).unwrap()
}

fn copy_task(m: usize, seed: u64) -> PatchBatch {
    let mut r = rng(seed);
    let base = random_batch(2, 3, m, &mut r);
    let labels = (0..m).map(|i| base.sample(i).0[4]).collect();
    PatchBatch::new(2, 3, base.features().to_vec(), labels).unwrap()
}

#[test]
fn objective_matches_scalar_loop() {
    let batch = teacher_batch(3, 3, 80, 1);
    let model = random_model(3, 3, 0.4, 2);
    let (f, _) = objective_grad(&model, &batch, 0.3).unwrap();
    assert!((f - scalar_objective(&model.params(), &batch, 0.3)).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    for lambda in 2..=4 {
        for side in [3, 5] {
            let batch = teacher_batch(lambda, side, 50, 10 + lambda as u64 * side as u64);
            let model = random_model(lambda, side, 0.3, 20 + lambda as u64);
            for rho in [0.0, 0.5] {
                let (_, g) = objective_grad(&model, &batch, rho).unwrap();
                let theta = model.params();
                let h = 1e-5;
                let fd: Vec<f64> = (0..theta.len())
                    .map(|j| {
                        let (mut up, mut dn) = (theta.clone(), theta.clone());
                        up[j] += h;
                        dn[j] -= h;
                        (scalar_objective(&up, &batch, rho) - scalar_objective(&dn, &batch, rho))
                            / (2.0 * h)
                    })
                    .collect();
                let err = rel_err(&g, &fd);
                assert!(err < 1e-5, "λ={lambda} L={side} ρ={rho}: {err}");
            }
        }
    }
}

#[test]
fn hessian_vector_matches_gradient_differences() {
    for lambda in 2..=4 {
        for side in [3, 5] {
            let batch = teacher_batch(lambda, side, 50, 30 + lambda as u64);
            let model = random_model(lambda, side, 0.3, 40 + side as u64);
            let mut r = rng(50 + lambda as u64);
            let v: Vec<f64> = (0..model.param_count()).map(|_| r.gen_range(-1.0..1.0)).collect();
            let rho = 0.2;
            let hv = hessian_vec(&model, &batch, rho, &v).unwrap();
            let eps = 1e-5;
            let shifted = |s: f64| {
                let p: Vec<f64> = model.params().iter().zip(&v).map(|(a, b)| a + s * b).collect();
                let m = ConvLogisticModel::from_params(lambda, side, &p).unwrap();
                objective_grad(&m, &batch, rho).unwrap().1
            };
            let (gp, gm) = (shifted(eps), shifted(-eps));
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let err = rel_err(&hv, &fd);
            assert!(err < 1e-4, "λ={lambda} L={side}: {err}");
        }
    }
}

#[test]
fn hessian_is_positive_semidefinite() {
    let batch = teacher_batch(3, 3, 60, 5);
    let model = random_model(3, 3, 1.0, 6);
    let mut r = rng(7);
    for _ in 0..20 {
        let v: Vec<f64> = (0..model.param_count()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let hv = hessian_vec(&model, &batch, 0.0, &v).unwrap();
        let quad: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        assert!(quad >= 0.0);
    }
}

#[test]
fn newton_trace_is_monotone() {
    let batch = teacher_batch(3, 5, 2000, 8);
    let (model, report) = train(&batch, &TrainConfig::default()).unwrap();
    assert!(report.converged);
    let mut prev = report.initial_objective;
    for step in &report.steps {
        assert!(step.objective <= prev);
        prev = step.objective;
    }
    assert!(report.final_objective <= report.initial_objective);
    let zero = ConvLogisticModel::zeros(3, 5).unwrap();
    assert!(nll(&model, &batch).unwrap() <= nll(&zero, &batch).unwrap());
}

#[test]
fn cg_cap_does_not_change_the_optimum() {
    let batch = teacher_batch(3, 5, 2000, 9);
    let full = train(&batch, &TrainConfig::default()).unwrap().1;
    let capped = train(
        &batch,
        &TrainConfig {
            cg_max_iters: Some(5),
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .1;
    assert!(full.converged && capped.converged);
    assert!((full.final_objective - capped.final_objective).abs() < 1e-6);
}

#[test]
fn sample_order_does_not_matter() {
    let batch = teacher_batch(2, 5, 3000, 10);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut r = rng(11);
    for i in (1..order.len()).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let shuffled = batch.permuted(&order);
    let model = random_model(2, 5, 0.2, 12);
    let (f1, g1) = objective_grad(&model, &batch, 1e-3).unwrap();
    let (f2, g2) = objective_grad(&model, &shuffled, 1e-3).unwrap();
    assert!((f1 - f2).abs() <= 1e-9 * f1.abs());
    assert!(rel_err(&g2, &g1) <= 1e-9);
    let (m1, r1) = train(&batch, &TrainConfig::default()).unwrap();
    let (m2, r2) = train(&shuffled, &TrainConfig::default()).unwrap();
    assert!((r1.final_nll_bits - r2.final_nll_bits).abs() <= 1e-9 * r1.final_nll_bits);
    assert!(rel_err(&m2.params(), &m1.params()) < 1e-6);
}

#[test]
fn copy_task_is_learned() {
    let train_batch = copy_task(10_000, 13);
    let (model, report) = train(&train_batch, &TrainConfig::default()).unwrap();
    assert!(report.final_nll_bits < 0.01, "{report:?}");
    let held_out = copy_task(5_000, 14);
    assert!(nll(&model, &held_out).unwrap() < 0.01);
    let center = model.kernel(0)[4];
    let others = model
        .kernel(0)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != 4)
        .fold(0.0f64, |m, (_, w)| m.max(w.abs()));
    assert!(center > 10.0 * others, "center {center}, others {others}");
}

#[test]
fn coin_flip_labels_stay_near_one_bit() {
    let mut r = rng(15);
    let batch = random_batch(2, 3, 10_000, &mut r);
    let (model, report) = train(&batch, &TrainConfig::default()).unwrap();
    assert!((report.final_nll_bits - 1.0).abs() < 0.02);
    let held_out = random_batch(2, 3, 10_000, &mut r);
    assert!((nll(&model, &held_out).unwrap() - 1.0).abs() < 0.02);
    // sampling noise of the estimate, not shrinkage, sets the weight scale here
    assert!(model.kernel_max_norm() < 0.25);
}

#[test]
fn training_is_reproducible() {
    let batch = teacher_batch(2, 3, 500, 16);
    let (a, ra) = train(&batch, &TrainConfig::default()).unwrap();
    let (b, rb) = train(&batch, &TrainConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
