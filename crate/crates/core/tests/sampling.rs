//! Monte Carlo checks of the plug-in variances and the net-benefit interval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use winseq::design::Allocation;
use winseq::hce::{evaluate_pair, Arm};
use winseq::sim::{generate_subject, generate_trial, GenerationSpec};
use winseq::winstats::{staged_statistics, variance_u, WinLoss};

fn alternative() -> GenerationSpec {
    GenerationSpec {
        kendall_tau: 0.3,
        lambda: vec![0.08, 0.1],
        beta: vec![0.2, 0.2, 0.25],
        baseline_probs: vec![0.25; 4],
        censor_upper: 12.0,
        terminal_index: 1,
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

#[test]
fn plug_in_variances_match_replication_variance() {
    let spec = alternative();
    let alloc = Allocation::even(1).unwrap();
    let (total, reps) = (120, 5000);
    let (mut uw, mut ul, mut nb) = (Vec::new(), Vec::new(), Vec::new());
    let (mut vw, mut vl, mut vnb) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..reps {
        let trial = generate_trial(&spec, &alloc, total, 41, r).unwrap();
        let st = staged_statistics(&trial.treatment, &trial.control, &spec.schema(), &[(60, 60)])
            .unwrap()
            .remove(0);
        uw.push(st.estimates.tau_w());
        ul.push(st.estimates.tau_l());
        vw.push(variance_u(&st.estimates, WinLoss::Win));
        vl.push(variance_u(&st.estimates, WinLoss::Loss));
        let d = st.net_benefit.unwrap();
        nb.push(d.estimate);
        vnb.push(d.variance);
    }
    for (name, xs, vs) in [("U_w", &uw, &vw), ("U_l", &ul, &vl), ("NB", &nb, &vnb)] {
        let (emp, plug) = (sample_var(xs), mean(vs));
        assert!(
            (plug / emp - 1.0).abs() < 0.10,
            "{name}: empirical {emp}, plug-in {plug}"
        );
    }
}

/// `τ_w − τ_l` from one million independent treatment/control pairs.
fn true_net_benefit(spec: &GenerationSpec) -> (f64, f64) {
    let schema = spec.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let pairs = 1_000_000;
    let mut sum = 0i64;
    let mut sq = 0i64;
    for _ in 0..pairs {
        let a = generate_subject(spec, Arm::Treatment, &mut rng).unwrap();
        let b = generate_subject(spec, Arm::Control, &mut rng).unwrap();
        let r = evaluate_pair(&a, &b, &schema).unwrap();
        let d = r.phi_w as i64 - r.phi_l as i64;
        sum += d;
        sq += d * d;
    }
    let m = sum as f64 / pairs as f64;
    let var = sq as f64 / pairs as f64 - m * m;
    (m, (var / pairs as f64).sqrt())
}

#[test]
fn net_benefit_interval_covers_the_truth() {
    let spec = alternative();
    let (truth, truth_se) = true_net_benefit(&spec);
    assert!(truth_se < 1e-3);
    let alloc = Allocation::even(1).unwrap();
    let reps = 2000;
    let mut covered = 0;
    for r in 0..reps {
        let trial = generate_trial(&spec, &alloc, 800, 43, r).unwrap();
        let st = staged_statistics(&trial.treatment, &trial.control, &spec.schema(), &[(400, 400)])
            .unwrap()
            .remove(0);
        let (lo, hi) = st.net_benefit.unwrap().ci95;
        covered += (lo <= truth && truth <= hi) as u32;
    }
    let rate = covered as f64 / reps as f64;
    assert!((rate - 0.95).abs() <= 0.015, "coverage {rate} around Δτ = {truth}");
}
