use std::collections::HashMap;

use super::*;
use crate::error::Error;
use crate::rng;

fn scm_from(text: &str) -> DiscreteScm {
    DiscreteScm::from_json(text).unwrap()
}

/// `y ~ Bern(0.3)`, `x = y XOR Bern(0.2)`.
fn noisy_channel() -> DiscreteScm {
    scm_from(
        r#"{"version": 1, "variables": [
            {"name": "y", "cardinality": 2, "exogenous": [0.7, 0.3], "mechanism": [0, 1]},
            {"name": "x", "cardinality": 2, "parents": ["y"], "exogenous": [0.8, 0.2], "mechanism": [[0, 1], [1, 0]]}
        ], "roles": {"target": "y", "inputs": ["x"]}}"#,
    )
}

/// `z → y`, `z → x`, `y → x`, with the predictor free to read `z`.
fn confounded() -> DiscreteScm {
    scm_from(
        r#"{"version": 1, "variables": [
            {"name": "z", "cardinality": 2, "exogenous": [0.4, 0.6], "mechanism": [0, 1]},
            {"name": "y", "cardinality": 2, "parents": ["z"], "exogenous": [0.75, 0.25], "mechanism": [[0, 1], [1, 0]]},
            {"name": "x", "cardinality": 2, "parents": ["y", "z"], "exogenous": [0.9, 0.1],
             "mechanism": [[[0, 1], [1, 1]], [[1, 0], [0, 1]]]}
        ], "roles": {"target": "y", "backdoor": ["z"], "inputs": ["x"]}}"#,
    )
}

fn identity(input: &str) -> TablePredictor {
    TablePredictor::deterministic(vec![input.into()], 2, &[0, 1])
}

#[test]
fn tv_matches_hand_enumeration() {
    let scm = noisy_channel();
    let p = identity("x");
    // P(ŷ=1 | y=1) = 0.8 and P(ŷ=1 | y=0) = 0.2
    assert!((tv(&scm, &p, 0, 1, 1).unwrap() - 0.6).abs() < 1e-15);
    assert!((tv(&scm, &p, 1, 0, 1).unwrap() + 0.6).abs() < 1e-15);
    assert_eq!(tv(&scm, &p, 1, 1, 0).unwrap(), 0.0);
    assert_eq!(tv(&scm, &TablePredictor::constant(2, 1), 0, 1, 1).unwrap(), 0.0);
}

#[test]
fn confounded_model_by_hand() {
    let scm = confounded();
    let a = PathwayAnalysis::new(&scm, &identity("x")).unwrap();
    // P(z=1 | y=0) = 0.6·0.25 / (0.4·0.75 + 0.6·0.25) = 1/3
    let se_hand = {
        // ŷ_{y1=1} = x(y=1, z, u_x): z=0 → 1 unless flip, z=1 → 0 unless flip
        let p1_given_z = [0.9, 0.1];
        let pz_y0 = [2.0 / 3.0, 1.0 / 3.0];
        let pz_y1 = [0.4 * 0.25 / 0.55, 0.6 * 0.75 / 0.55];
        let e = |pz: [f64; 2]| pz[0] * p1_given_z[0] + pz[1] * p1_given_z[1];
        e(pz_y0) - e(pz_y1)
    };
    assert!((a.ctf_se(0, 1, 1).unwrap() - se_hand).abs() < 1e-14, "{} vs {se_hand}", a.ctf_se(0, 1, 1).unwrap());
    let c = Conditioning { y: 0, mediators: vec![], backdoor: vec![1] };
    let e = a.ctf_effects(0, 1, 1, &c).unwrap();
    assert_eq!(e.ie, 0.0);
}

#[test]
fn zero_probability_conditioning_is_an_error() {
    let scm = scm_from(
        r#"{"version": 1, "variables": [
            {"name": "y", "cardinality": 3, "exogenous": [0.5, 0.5], "mechanism": [0, 1]},
            {"name": "x", "cardinality": 2, "parents": ["y"], "exogenous": [1.0], "mechanism": [[0], [1], [1]]}
        ], "roles": {"target": "y", "inputs": ["x"]}}"#,
    );
    let p = TablePredictor::deterministic(vec!["x".into()], 3, &[0, 1]);
    assert!(matches!(tv(&scm, &p, 0, 2, 1), Err(Error::UndefinedConditional(_))));
    let c = Conditioning { y: 2, mediators: vec![], backdoor: vec![] };
    assert!(matches!(ctf_effects(&scm, &p, 0, 1, 1, &c), Err(Error::UndefinedConditional(_))));
    assert!(matches!(tv(&scm, &p, 0, 3, 1), Err(Error::Input(_))));
}

fn sweep_configs() -> Vec<RandomSamConfig> {
    let base = RandomSamConfig::default();
    vec![
        base,
        RandomSamConfig { mediators: 2, ..base },
        RandomSamConfig { backdoor: 2, mediators: 0, ..base },
        RandomSamConfig { pure_input: false, ..base },
        RandomSamConfig { target_cardinality: 3, inputs: 1, ..base },
    ]
}

const KINDS: [PredictorKind; 4] =
    [PredictorKind::Stochastic, PredictorKind::Deterministic, PredictorKind::FirstInput, PredictorKind::Constant];

fn instances(count: usize) -> Vec<(DiscreteScm, TablePredictor)> {
    let configs = sweep_configs();
    (0..count)
        .map(|i| {
            let seed = rng::derive_seed(77, i as u64);
            let scm = random_sam(&configs[i % configs.len()], seed).unwrap();
            let p = random_predictor(&scm, KINDS[(i / configs.len()) % KINDS.len()], seed).unwrap();
            (scm, p)
        })
        .collect()
}

#[test]
fn decomposition_identity_on_random_instances() {
    let mut worst: f64 = 0.0;
    let mut alternative: f64 = 0.0;
    for (scm, p) in instances(120) {
        let report = pathway_report(&scm, &p).unwrap();
        worst = worst.max(report.max_residual);
        alternative = alternative.max(report.max_alternative_residual);
    }
    assert!(worst <= 1e-12, "{worst}");
    // the y1-conditioned reading is not an identity
    assert!(alternative > 1e-3, "{alternative}");
}

#[test]
fn constant_predictor_has_only_zero_terms() {
    let scm = random_sam(&RandomSamConfig::default(), 3).unwrap();
    let report = pathway_report(&scm, &TablePredictor::constant(2, 0)).unwrap();
    for e in &report.entries {
        assert_eq!((e.tv, e.ctf_stable, e.ctf_ie, e.ctf_se, e.decomposition_residual), (0.0, 0.0, 0.0, 0.0, 0.0));
    }
}

#[test]
fn report_serialises() {
    let scm = random_sam(&RandomSamConfig::default(), 5).unwrap();
    let p = random_predictor(&scm, PredictorKind::Stochastic, 5).unwrap();
    let report = pathway_report(&scm, &p).unwrap();
    let back: PathwayReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.entries.len(), 2 * 2);
}

/// Independent twin-world evaluation: recursive, name-based solving of each
/// world and direct accumulation of every probability.
mod oracle {
    use super::*;

    pub fn states(scm: &DiscreteScm) -> Vec<(HashMap<String, usize>, f64)> {
        let mut out = vec![(HashMap::new(), 1.0)];
        for v in scm.variables() {
            let mut next = Vec::new();
            for (u, p) in &out {
                for (i, q) in v.exogenous.iter().enumerate() {
                    let mut u2: HashMap<String, usize> = u.clone();
                    u2.insert(v.name.clone(), i);
                    next.push((u2, p * q));
                }
            }
            out = next;
        }
        out
    }

    pub fn value(scm: &DiscreteScm, u: &HashMap<String, usize>, fixed: &HashMap<String, usize>, name: &str) -> usize {
        if let Some(&v) = fixed.get(name) {
            return v;
        }
        let var = scm.variables().iter().find(|v| v.name == name).unwrap();
        let mut idx = 0;
        for p in &var.parents {
            let card = scm.cardinality(p).unwrap();
            idx = idx * card + value(scm, u, fixed, p);
        }
        var.mechanism[idx * var.exogenous.len() + u[name]]
    }

    pub fn prediction(
        scm: &DiscreteScm,
        pred: &TablePredictor,
        u: &HashMap<String, usize>,
        fixed: &HashMap<String, usize>,
        yhat: usize,
    ) -> f64 {
        let mut row = 0;
        for name in &pred.inputs {
            row = row * scm.cardinality(name).unwrap() + value(scm, u, fixed, name);
        }
        pred.table[row][yhat]
    }

    /// `(stable, ie, se)` at `C`.
    pub fn effects(
        scm: &DiscreteScm,
        pred: &TablePredictor,
        y0: usize,
        y1: usize,
        yhat: usize,
        c: &Conditioning,
    ) -> (f64, f64, f64) {
        let roles = scm.roles();
        let none = HashMap::new();
        let do_y = |y: usize| HashMap::from([(roles.target.clone(), y)]);
        let (mut pc, mut nested, mut at0, mut at1) = (0.0, 0.0, 0.0, 0.0);
        let (mut py0, mut py1, mut se0, mut se1) = (0.0, 0.0, 0.0, 0.0);
        for (u, p) in states(scm) {
            let y = value(scm, &u, &none, &roles.target);
            let pred_y1 = prediction(scm, pred, &u, &do_y(y1), yhat);
            if y == y0 {
                py0 += p;
                se0 += p * pred_y1;
            }
            if y == y1 {
                py1 += p;
                se1 += p * pred_y1;
            }
            let observed_w: Vec<usize> = roles.mediators.iter().map(|m| value(scm, &u, &none, m)).collect();
            let observed_z: Vec<usize> = roles.backdoor.iter().map(|z| value(scm, &u, &none, z)).collect();
            if y != c.y || observed_w != c.mediators || observed_z != c.backdoor {
                continue;
            }
            pc += p;
            let mut fixed = do_y(y1);
            for m in &roles.mediators {
                fixed.insert(m.clone(), value(scm, &u, &do_y(y0), m));
            }
            nested += p * prediction(scm, pred, &u, &fixed, yhat);
            at0 += p * prediction(scm, pred, &u, &do_y(y0), yhat);
            at1 += p * pred_y1;
        }
        ((nested - at0) / pc, (nested - at1) / pc, se0 / py0 - se1 / py1)
    }
}

fn all_conditionings(scm: &DiscreteScm) -> Vec<Conditioning> {
    let roles = scm.roles();
    let cards: Vec<usize> = roles.mediators.iter().chain(&roles.backdoor).map(|n| scm.cardinality(n).unwrap()).collect();
    let k = scm.cardinality(&roles.target).unwrap();
    let mut out = Vec::new();
    let cells: usize = cards.iter().product();
    for y in 0..k {
        for mut cell in 0..cells {
            let mut vals = vec![0; cards.len()];
            for d in (0..cards.len()).rev() {
                vals[d] = cell % cards[d];
                cell /= cards[d];
            }
            let (w, z) = vals.split_at(roles.mediators.len());
            out.push(Conditioning { y, mediators: w.to_vec(), backdoor: z.to_vec() });
        }
    }
    out
}

#[test]
fn effects_match_twin_world_oracle() {
    for (scm, p) in instances(25) {
        let a = PathwayAnalysis::new(&scm, &p).unwrap();
        let k = a.target_cardinality();
        for c in all_conditionings(&scm) {
            for (y0, y1) in [(0, 1), (1, 0), (0, k - 1)] {
                let got = a.ctf_effects(y0, y1, 1, &c).unwrap();
                let (stable, ie, se) = oracle::effects(&scm, &p, y0, y1, 1, &c);
                assert!((got.stable - stable).abs() < 1e-12);
                assert!((got.ie - ie).abs() < 1e-12);
                assert!((got.se - se).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn no_mediator_means_no_indirect_effect() {
    let scm = random_sam(&RandomSamConfig { mediators: 0, pure_input: false, ..Default::default() }, 11).unwrap();
    let p = random_predictor(&scm, PredictorKind::Stochastic, 11).unwrap();
    let cert = stability_certificate(&scm, &p).unwrap();
    assert_eq!(cert.max_ie, 0.0);
}

#[test]
fn predictor_of_pure_input_is_stable_by_construction() {
    for seed in 0..10 {
        let scm = random_sam(&RandomSamConfig { mediators: 2, backdoor: 2, ..Default::default() }, seed).unwrap();
        let p = random_predictor(&scm, PredictorKind::FirstInput, seed).unwrap();
        let cert = stability_certificate(&scm, &p).unwrap();
        assert!(cert.is_ci, "{cert:?}");
        assert!(cert.max_ie <= 1e-12 && cert.max_se <= 1e-12 && cert.de_spread <= 1e-12, "{cert:?}");
    }
}

#[test]
fn independence_implies_stability_on_sweep() {
    let mut ci_count = 0;
    for (scm, p) in instances(200) {
        let a = PathwayAnalysis::new(&scm, &p).unwrap();
        let cert = a.certificate();
        if cert.is_ci {
            ci_count += 1;
            assert!(cert.max_ie <= 1e-12 && cert.max_se <= 1e-12 && cert.de_spread <= 1e-12, "{cert:?}");
            // constant direct effect equals the total variation for every C
            for c in all_conditionings(&scm) {
                let e = a.ctf_effects(0, 1, 1, &c).unwrap();
                assert!((e.stable - a.tv(0, 1, 1).unwrap()).abs() <= 1e-12);
            }
        }
    }
    assert!(ci_count >= 50, "{ci_count}");
}

#[test]
fn predictor_copying_a_confounder_is_not_stable() {
    let scm = confounded();
    let cert = stability_certificate(&scm, &identity("z")).unwrap();
    assert!(!cert.is_ci);
    assert!(cert.max_se > 0.1, "{cert:?}");
}

#[test]
fn maximizer_on_noiseless_channel_is_identity() {
    let scm = scm_from(
        r#"{"version": 1, "variables": [
            {"name": "y", "cardinality": 2, "exogenous": [0.35, 0.65], "mechanism": [0, 1]},
            {"name": "x", "cardinality": 2, "parents": ["y"], "exogenous": [1.0], "mechanism": [[0], [1]]}
        ], "roles": {"target": "y", "inputs": ["x"]}}"#,
    );
    let check = mle_stable_maximizer_check(&scm).unwrap();
    assert!(check.holds);
    assert_eq!(check.mle_table, vec![0, 1]);
    assert!((check.max_stable - 2.0).abs() < 1e-12);
    assert_eq!(check.ci_tables, 4);
}

#[test]
fn uninformative_channel_ties_at_zero() {
    let scm = scm_from(
        r#"{"version": 1, "variables": [
            {"name": "y", "cardinality": 2, "exogenous": [0.5, 0.5], "mechanism": [0, 1]},
            {"name": "x", "cardinality": 3, "exogenous": [0.2, 0.3, 0.5], "mechanism": [0, 1, 2]}
        ], "roles": {"target": "y", "inputs": ["x"]}}"#,
    );
    let check = mle_stable_maximizer_check(&scm).unwrap();
    assert!(check.holds);
    assert_eq!(check.ci_tables, check.tables);
    assert!(check.max_stable.abs() < 1e-12 && check.mle_stable.abs() < 1e-12);
}

#[test]
fn maximizer_holds_on_tiny_random_models() {
    let base = RandomSamConfig { mediators: 0, backdoor: 1, inputs: 2, ..Default::default() };
    let configs = [
        base,
        RandomSamConfig { mediators: 1, backdoor: 0, ..base },
        RandomSamConfig { target_cardinality: 3, ..base },
    ];
    for i in 0..12 {
        let scm = random_sam(&configs[i % 3], 500 + i as u64).unwrap();
        let check = mle_stable_maximizer_check(&scm).unwrap();
        assert!(check.holds, "{check:?}");
        // more independent tables than the constant ones
        assert!(check.ci_tables > scm.cardinality("y").unwrap(), "{check:?}");
    }
}

#[test]
fn maximizer_rejects_large_models() {
    let scm = random_sam(&RandomSamConfig { inputs: 3, ..Default::default() }, 1).unwrap();
    assert!(matches!(mle_stable_maximizer_check(&scm), Err(Error::Capacity(_))));
    let wide = random_sam(&RandomSamConfig { cardinality: 4, mediators: 0, backdoor: 0, inputs: 1, ..Default::default() }, 1)
        .unwrap();
    assert!(matches!(mle_stable_maximizer_check(&wide), Err(Error::Capacity(_))));
}

#[test]
fn enumeration_agrees_with_forward_sampling() {
    let scm = random_sam(&RandomSamConfig { mediators: 1, backdoor: 1, inputs: 1, ..Default::default() }, 21).unwrap();
    let joint = enumerate_joint(&scm).unwrap();
    assert!((joint.total() - 1.0).abs() < 1e-12);
    let n = 1_000_000usize;
    let mut r = rng::stream(99, rng::streams::EXOGENOUS);
    let nvars = scm.variables().len();
    let none = vec![None; nvars];
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut u = vec![0; nvars];
    for _ in 0..n {
        for (i, v) in scm.variables().iter().enumerate() {
            let x = rng::uniform(&mut r);
            let mut acc = 0.0;
            u[i] = v.exogenous.len() - 1;
            for (j, p) in v.exogenous.iter().enumerate() {
                acc += p;
                if x < acc {
                    u[i] = j;
                    break;
                }
            }
        }
        *counts.entry(scm.solve(&u, &none)).or_default() += 1;
    }
    for (assignment, &p) in &joint.probabilities {
        let freq = counts.get(assignment).copied().unwrap_or(0) as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma, "{assignment:?}: {freq} vs {p}");
    }
    // marginal cells as well
    for v in scm.variables() {
        let marginal = joint.marginal(&[v.name.as_str()]).unwrap();
        let idx = scm.index_of(&v.name).unwrap();
        for (val, &p) in &marginal {
            let c: usize = counts.iter().filter(|(a, _)| a[idx] == val[0]).map(|(_, c)| c).sum();
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() <= 3.0 * sigma);
        }
    }
}
