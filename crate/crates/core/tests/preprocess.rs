mod common;

use common::oracle::{close, pca_oracle};
use common::small_bundle;
use plcshield::detect::{AttackLabel, ForestConfig};
use plcshield::preprocess::{fit_minmax, fit_pca, run_rfe, PipelineModels};
use plcshield::telemetry::FeatureVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..10.0)).collect();
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            (0..d).map(|j| scales[j] * (rng.random_range(-1.0..1.0) + 0.5 * z * (j % 3) as f64)).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn minmax_maps_fit_data_onto_unit_box(seed in any::<u64>(), n in 2usize..60) {
        let mut rows = random_rows(seed, n, 14);
        for r in &mut rows {
            r[3] = 42.0;
        }
        let b = fit_minmax(&rows).unwrap();
        let out: Vec<Vec<f64>> = rows.iter().map(|r| b.apply(r).unwrap()).collect();
        for j in 0..14 {
            let col: Vec<f64> = out.iter().map(|r| r[j]).collect();
            prop_assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
            if j == 3 {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!(col.contains(&0.0) && col.contains(&1.0), "column {}", j);
            }
        }
        let mut wild = rows[0].clone();
        wild[0] = 1e9;
        wild[1] = -1e9;
        let w = b.apply(&wild).unwrap();
        prop_assert_eq!((w[0], w[1]), (1.0, 0.0));
    }

    #[test]
    fn pca_matches_dense_eigensolver(seed in any::<u64>(), n in 20usize..=200) {
        let rows = random_rows(seed, n, 14);
        let model = fit_pca(&rows, 14).unwrap();
        let (values, vectors, mean) = pca_oracle(&rows);
        for j in 0..14 {
            prop_assert!(close(model.eigenvalues[j], values[j], 1e-6), "eigenvalue {}", j);
            let dot: f64 = model.components[j].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            prop_assert!((dot.abs() - 1.0).abs() < 1e-6, "axis {} dot {}", j, dot);
            let sign = dot.signum();
            for r in rows.iter().take(20) {
                let got = model.project(r).unwrap()[j];
                let want: f64 = sign * vectors[j].iter().zip(r.iter().zip(&mean)).map(|(a, (x, m))| a * (x - m)).sum::<f64>();
                prop_assert!((got - want).abs() < 1e-6 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn projection_variance_equals_eigenvalue(seed in any::<u64>(), n in 20usize..=200) {
        let rows = random_rows(seed, n, 14);
        let model = fit_pca(&rows, 2).unwrap();
        let proj: Vec<Vec<f64>> = rows.iter().map(|r| model.project(r).unwrap()).collect();
        for j in 0..2 {
            let mean = proj.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            let var = proj.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(close(var, model.eigenvalues[j], 1e-6));
        }
        let evr = &model.explained_variance_ratio;
        prop_assert!(evr[0] >= evr[1] && evr.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn frozen_pipeline_survives_serialization(seed in any::<u64>()) {
        let bundle = small_bundle();
        let text = serde_json::to_string(&bundle.pipeline).unwrap();
        let back: PipelineModels = serde_json::from_str(&text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let mut a = [0.0; 14];
            for v in a.iter_mut() {
                *v = rng.random_range(0.0..2000.0);
            }
            let f = FeatureVector::from_array(a);
            let (x, y) = (bundle.pipeline.embed(&f).unwrap(), back.embed(&f).unwrap());
            prop_assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
            let (x, y) = (bundle.pipeline.classifier_row(&f).unwrap(), back.classifier_row(&f).unwrap());
            prop_assert_eq!(x, y);
        }
    }
}

#[test]
fn rfe_bookkeeping() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<AttackLabel> = (0..300).map(|i| AttackLabel::ALL[i % 3]).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| {
            let c = AttackLabel::ALL.iter().position(|x| x == l).unwrap() as f64;
            vec![c + rng.random_range(-0.3..0.3), rng.random(), rng.random(), c * 2.0 + rng.random_range(-2.0..2.0), rng.random()]
        })
        .collect();
    let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
    let config = ForestConfig { n_trees: 30, ..ForestConfig::with_seed(1) };
    let sel = run_rfe(&rows, &labels, &names, &[0, 1, 2, 3, 4], &config, 9).unwrap();
    let trace = &sel.rfe_accuracy_trace;
    assert_eq!(trace[0].features.len(), 5);
    for w in trace.windows(2) {
        assert_eq!(w[1].features.len() + 1, w[0].features.len());
        assert_eq!(w[0].dropped.as_ref(), w[0].features.iter().find(|f| !w[1].features.contains(f)));
    }
    let best = trace.iter().map(|s| s.validation_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(sel.best_accuracy(), best);
    let chosen = trace.iter().find(|s| s.features == sel.kept_after_rfe).unwrap();
    assert_eq!(chosen.validation_accuracy, best);
    assert!(sel.kept_after_rfe.contains(&"f0".to_string()));
    let single = vec![AttackLabel::Ex1; 300];
    assert!(run_rfe(&rows, &single, &names, &[0, 1], &config, 9).is_err());
}
