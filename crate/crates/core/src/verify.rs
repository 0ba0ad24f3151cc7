//! Self-contained runtime check suite.
//!
//! Each check re-derives an invariant the library is built on: analytic
//! gradients against finite differences, closed-form reductions, simplex
//! identities, and frozen hash vectors. The CLI `verify` subcommand prints
//! one line per check and fails the process if any check fails.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dao::DaoModule;
use crate::data::{Tokenizer, CLASS_SCORE_RANGES};
use crate::graph::Tape;
use crate::losses::{
    self, balance_coeffs, imbalance_loss_value, score_to_class, NUM_CLASSES,
};
use crate::math;
use crate::metrics::ConfusionMatrix;
use crate::model::{Model, ModelConfig};
use crate::nn::{finite_diff, Binder, GradientMap, Mode, ParameterStore};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::rng::{stream, Rng};
use crate::tensor::Tensor;

/// Outcome of a single named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

/// Run every check and collect the outcomes.
pub fn run_all() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> core::result::Result<String, String>); 10] = [
        ("balance-simplex", check_balance_simplex),
        ("score-class-mapping", check_score_class_mapping),
        ("imbalance-reduces-to-ce", check_imbalance_reduces_to_ce),
        ("imbalance-naive-oracle", check_imbalance_naive_oracle),
        ("knob-gradients", check_knob_gradients),
        ("model-gradients", check_model_gradients),
        ("task-weights-even-at-init", check_even_split_at_init),
        ("weighted-recall-is-accuracy", check_weighted_recall),
        ("optimizer-replay", check_optimizer_replay),
        ("schedule-and-hash-vectors", check_schedule_and_hashes),
    ];
    checks
        .iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckResult {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn check_balance_simplex() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(11, stream::INIT);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a = math::exp(rng.range(-6.0, 6.0));
        let b = math::exp(rng.range(-6.0, 6.0));
        let c = balance_coeffs(a, b).map_err(|e| format!("{e}"))?;
        let gap = (c.lambda_r + c.lambda_c - 1.0).abs();
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("simplex gap {gap:e} at norms ({a}, {b})"));
        }
        let swapped = balance_coeffs(b, a).map_err(|e| format!("{e}"))?;
        if swapped.lambda_r.to_bits() != c.lambda_c.to_bits() {
            return Err(format!("asymmetry at norms ({a}, {b})"));
        }
    }
    let d = balance_coeffs(0.0, 0.0).map_err(|e| format!("{e}"))?;
    if !d.degenerate || d.lambda_r != 0.5 {
        return Err("degenerate pair should fall back to the even split".into());
    }
    Ok(format!("10000 draws, worst simplex gap {worst:e}"))
}

fn check_score_class_mapping() -> core::result::Result<String, String> {
    let cases = [
        (-1.0, 0),
        (-0.501, 0),
        (-0.5, 1),
        (-0.05, 1),
        (-0.049, 2),
        (0.0, 2),
        (0.049, 2),
        (0.05, 3),
        (0.499, 3),
        (0.5, 3),
        (0.501, 4),
        (1.0, 4),
    ];
    for (y, want) in cases {
        let got = score_to_class(y).map_err(|e| format!("{e}"))?;
        if got != want {
            return Err(format!("score {y} mapped to {got}, want {want}"));
        }
    }
    let mut prev = 0usize;
    for i in 0..=100_000u32 {
        let y = -1.0 + 2.0 * f64::from(i) / 100_000.0;
        let k = score_to_class(y).map_err(|e| format!("{e}"))?;
        if k < prev {
            return Err(format!("class decreased to {k} at score {y}"));
        }
        prev = k;
    }
    for (k, (lo, hi)) in CLASS_SCORE_RANGES.iter().enumerate() {
        for y in [*lo, *hi, 0.5 * (lo + hi)] {
            let got = score_to_class(y).map_err(|e| format!("{e}"))?;
            if got != k {
                return Err(format!("range endpoint {y} of class {k} mapped to {got}"));
            }
        }
    }
    if score_to_class(f64::NAN).is_ok() {
        return Err("NaN score must be rejected".into());
    }
    Ok("12 boundary cases, 100001-point grid monotone, generator ranges consistent".into())
}

fn random_batch(rng: &mut Rng) -> (Vec<usize>, [f64; NUM_CLASSES]) {
    let n = 2 + rng.below(30);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(rng.below(NUM_CLASSES));
    }
    let mut l_ck = [0.0; NUM_CLASSES];
    for l in &mut l_ck {
        *l = math::exp(rng.range(-2.0, 1.5));
    }
    (labels, l_ck)
}

fn check_imbalance_reduces_to_ce() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(23, stream::INIT);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (labels, l_ck) = random_batch(&mut rng);
        let stats = losses::class_stats(&labels).map_err(|e| format!("{e}"))?;
        let mut ce = 0.0;
        for k in stats.present() {
            ce += stats.share(k) * l_ck[k];
        }
        let got = imbalance_loss_value(&l_ck, &stats, 0.0, 0.0);
        let gap = (got - ce).abs();
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("reduction gap {gap:e} (got {got}, want {ce})"));
        }
    }
    Ok(format!("200 batches, worst gap {worst:e}"))
}

fn check_imbalance_naive_oracle() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(29, stream::INIT);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (labels, l_ck) = random_batch(&mut rng);
        let alpha = rng.range(0.0, 4.0);
        let beta = rng.range(0.0, 3.0);
        let stats = losses::class_stats(&labels).map_err(|e| format!("{e}"))?;
        let got = imbalance_loss_value(&l_ck, &stats, alpha, beta);
        let n = labels.len() as f64;
        let mut want = 0.0;
        for k in 0..NUM_CLASSES {
            let c = stats.count(k);
            if c == 0 {
                continue;
            }
            let p = c as f64 / n;
            want += math::powf(p, -beta) * (p * l_ck[k] - alpha * math::ln(p));
        }
        let gap = (got - want).abs();
        worst = worst.max(gap);
        if gap > 1e-10 {
            return Err(format!("oracle gap {gap:e}"));
        }
    }
    Ok(format!("200 random batches, worst gap {worst:e}"))
}

fn check_knob_gradients() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(31, stream::INIT);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (labels, l_ck) = random_batch(&mut rng);
        let alpha = rng.range(0.05, 3.0);
        let beta = rng.range(0.05, 2.5);
        let lam_c = rng.range(0.1, 0.9);
        let w_c = rng.range(0.1, 0.9);
        let stats = losses::class_stats(&labels).map_err(|e| format!("{e}"))?;
        let f = |a: f64, b: f64| lam_c * w_c * imbalance_loss_value(&l_ck, &stats, a, b);
        let fd_a = (f(alpha + h, beta) - f(alpha - h, beta)) / (2.0 * h);
        let fd_b = (f(alpha, beta + h) - f(alpha, beta - h)) / (2.0 * h);
        let v = losses::class_weights(&stats, beta);
        let an_a = losses::alpha_grad(lam_c, w_c, &v, &stats);
        let an_b = losses::beta_grad(lam_c, w_c, &stats, &l_ck, alpha, beta);
        for (an, fd, which) in [(an_a, fd_a, "alpha"), (an_b, fd_b, "beta")] {
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            if rel > 1e-5 {
                return Err(format!(
                    "{which} gradient mismatch: analytic {an}, finite-difference {fd}, rel {rel:e}"
                ));
            }
        }
    }
    Ok(format!("100 draws, worst relative error {worst:e}"))
}

fn check_model_gradients() -> core::result::Result<String, String> {
    let cfg = ModelConfig {
        vocab_size: 13,
        d_embed: 4,
        d_hidden: 4,
        d_mid: 3,
        dropout: 0.0,
        lora_rank: None,
        adapter_dropout: 0.0,
    };
    let mut rng = Rng::seeded(37, stream::INIT);
    let model = Model::init(cfg, &mut rng).map_err(|e| format!("{e}"))?;
    let tokens: Vec<Vec<u32>> = alloc::vec![
        alloc::vec![1, 5, 9],
        alloc::vec![2, 2, 7, 11],
        alloc::vec![3],
    ];
    let scores = [0.4, -0.2, 0.0];
    let labels = [3usize, 1, 2];

    let loss = |params: &ParameterStore| -> crate::error::Result<f64> {
        let tape = Tape::new();
        let mut binder = Binder::new(params);
        let mut drop_rng = Rng::seeded(0, stream::DROPOUT);
        let heads = model.forward(&tape, &mut binder, &tokens, Mode::Eval, &mut drop_rng)?;
        let l_r = losses::mse_loss(&tape, &heads.scores, &scores)?;
        let pc = losses::cross_entropy_per_class(&heads.logits, &labels)?;
        Ok(l_r.add(&pc.mean)?.item())
    };

    let tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let mut drop_rng = Rng::seeded(0, stream::DROPOUT);
    let heads = model
        .forward(&tape, &mut binder, &tokens, Mode::Eval, &mut drop_rng)
        .map_err(|e| format!("{e}"))?;
    let l_r = losses::mse_loss(&tape, &heads.scores, &scores).map_err(|e| format!("{e}"))?;
    let pc = losses::cross_entropy_per_class(&heads.logits, &labels).map_err(|e| format!("{e}"))?;
    let total = l_r.add(&pc.mean).map_err(|e| format!("{e}"))?;
    tape.backward(&total).map_err(|e| format!("{e}"))?;
    let grads = binder.grads();

    let mut fd_params = model.params.clone();
    let fd = finite_diff(loss, &mut fd_params, 1e-6).map_err(|e| format!("{e}"))?;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (name, fd_tensor) in fd.iter() {
        let an_tensor = grads
            .get(name)
            .ok_or_else(|| format!("missing gradient for {name}"))?;
        for (an, fd) in an_tensor.data().iter().zip(fd_tensor.data()) {
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!(
                    "{name}: analytic {an}, finite-difference {fd}, rel {rel:e}"
                ));
            }
            checked += 1;
        }
    }
    if checked < 100 {
        return Err(format!("only {checked} coordinates checked"));
    }
    Ok(format!(
        "{checked} coordinates, worst relative error {worst:e}"
    ))
}

fn check_even_split_at_init() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(41, stream::INIT);
    let dao = DaoModule::init(&mut rng).map_err(|e| format!("{e}"))?;
    let (w_r, w_c) = dao.weights_value(0.73, 1.21).map_err(|e| format!("{e}"))?;
    if w_r.to_bits() != 0.5f64.to_bits() || w_c.to_bits() != 0.5f64.to_bits() {
        return Err(format!("fresh weights ({w_r}, {w_c}), want exactly (0.5, 0.5)"));
    }
    if dao.alpha() != 0.1 || dao.beta() != 1.0 {
        return Err("knob initial values drifted".into());
    }
    Ok("fresh task weights are exactly (0.5, 0.5)".into())
}

fn check_weighted_recall() -> core::result::Result<String, String> {
    let mut rng = Rng::seeded(43, stream::INIT);
    for _ in 0..500 {
        let n = 1 + rng.below(200);
        let mut truth = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        for _ in 0..n {
            truth.push(rng.below(NUM_CLASSES));
            pred.push(rng.below(NUM_CLASSES));
        }
        let cm = ConfusionMatrix::from_pairs(&truth, &pred).map_err(|e| format!("{e}"))?;
        if cm.weighted_recall().to_bits() != cm.accuracy().to_bits() {
            return Err(format!(
                "weighted recall {} != accuracy {}",
                cm.weighted_recall(),
                cm.accuracy()
            ));
        }
    }
    Ok("500 random confusion matrices, bitwise equal".into())
}

fn check_optimizer_replay() -> core::result::Result<String, String> {
    let mut params = ParameterStore::new();
    params
        .insert(
            "p",
            Tensor::new(alloc::vec![2, 2], alloc::vec![1.0, -2.0, 0.5, 3.0])
                .map_err(|e| format!("{e}"))?,
        )
        .map_err(|e| format!("{e}"))?;
    let cfg = AdamConfig {
        weight_decay: 0.1,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(cfg).map_err(|e| format!("{e}"))?;
    let grad = [0.3, -0.1, 0.7, 0.05];

    let mut m = [0.0f64; 4];
    let mut v = [0.0f64; 4];
    let mut want = [1.0, -2.0, 0.5, 3.0];
    let lr = 0.01;
    for t in 1..=5u32 {
        let mut grads = GradientMap::new();
        grads.insert(
            "p",
            Tensor::new(alloc::vec![2, 2], grad.to_vec()).map_err(|e| format!("{e}"))?,
        );
        opt.step(&mut params, &grads, lr).map_err(|e| format!("{e}"))?;
        for i in 0..4 {
            m[i] = 0.9 * m[i] + 0.1 * grad[i];
            v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - math::powf(0.9, f64::from(t)));
            let v_hat = v[i] / (1.0 - math::powf(0.999, f64::from(t)));
            want[i] -= lr * (m_hat / (math::sqrt(v_hat) + 1e-8) + 0.1 * want[i]);
        }
    }
    let got = params.get("p").expect("inserted").data();
    for i in 0..4 {
        if (got[i] - want[i]).abs() > 1e-12 {
            return Err(format!(
                "coordinate {i}: got {}, hand replay {}",
                got[i], want[i]
            ));
        }
    }
    Ok("5 steps match a hand replay within 1e-12".into())
}

fn check_schedule_and_hashes() -> core::result::Result<String, String> {
    let s = LrSchedule::new(2e-3, 10, 100).map_err(|e| format!("{e}"))?;
    if s.lr_at(0) != 0.0 {
        return Err("warmup must start at zero".into());
    }
    if (s.lr_at(10) - 2e-3).abs() > 1e-18 {
        return Err("rate at warmup end must be the base rate".into());
    }
    if s.lr_at(100).abs() > 1e-18 || s.lr_at(500).abs() > 1e-18 {
        return Err("rate at and past the horizon must be zero".into());
    }
    let mid = s.lr_at(55);
    if (mid - 1e-3).abs() > 1e-12 {
        return Err(format!("cosine midpoint {mid}, want 1e-3"));
    }

    let vectors: [(&str, u64); 3] = [
        ("", 0xcbf29ce484222325),
        ("a", 0xaf63dc4c8601ec8c),
        ("foobar", 0x85944171f73967e8),
    ];
    for (input, want) in vectors {
        let got = crate::data::fnv1a64(input.as_bytes());
        if got != want {
            return Err(format!("hash of {input:?} is {got:#x}, want {want:#x}"));
        }
    }
    let tok = Tokenizer::new(64).map_err(|e| format!("{e}"))?;
    let ids = tok.encode("Hello, WORLD! hello");
    if ids.len() != 3 || ids[0] != ids[2] || ids.iter().any(|&i| i == 0 || i >= 64) {
        return Err(format!("tokenizer normalization broke: {ids:?}"));
    }
    Ok("schedule endpoints, hash vectors, tokenizer normalization".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_all();
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert!(all_passed(&results));
        assert_eq!(results.len(), 10);
    }
}
