use rand::Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::corpus::{Condition, Quantifier};

const TOY_LEN: usize = 6;

fn toy_table() -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let entries = (0..12).map(|i| {
        (
            format!("w{i}"),
            (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
    });
    EmbeddingTable::from_entries(3, entries).unwrap()
}

fn toy_point(id: usize, words: &[usize], label: Quantifier) -> Datapoint {
    let mut s_t = vec!["<qnt>".to_string()];
    s_t.extend(words.iter().map(|w| format!("w{w}")));
    Datapoint {
        id: format!("p{id}"),
        s_p: vec![],
        s_t,
        s_f: vec![],
        label,
        source_ref: "toy".into(),
    }
}

fn toy_data() -> Vec<Datapoint> {
    vec![
        toy_point(0, &[1, 2, 3, 4, 5], Quantifier::Most),
        toy_point(1, &[6, 7], Quantifier::None),
        toy_point(2, &[8, 99, 9], Quantifier::AFew),
        toy_point(3, &[10, 11, 1, 2], Quantifier::All),
    ]
}

fn toy_config(family: Family) -> ModelConfig {
    ModelConfig {
        hidden_units: 4,
        dropout_rate: 0.25,
        seed: 5,
        max_len: TOY_LEN,
        off_grid: true,
        fasttext_dim: 3,
        fasttext_buckets: 7,
        ..ModelConfig::new(family, Condition::OneSent)
    }
}

fn toy_model(family: Family) -> Model<f64> {
    Model::for_data(toy_config(family), &toy_data(), Some(&toy_table())).unwrap()
}

fn probs(m: &Model<f64>, batch: &EncodedBatch) -> Vec<f64> {
    let mut g = Graph::new(&m.params);
    let p = m.forward(&mut g, batch, Some(&toy_table()), None).unwrap();
    g.value(p).data().to_vec()
}

#[test]
fn rows_are_distributions_for_every_family() {
    for family in Family::ALL {
        let m = toy_model(family);
        let batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
        let p = probs(&m, &batch);
        for row in p.chunks(NUM_CLASSES) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{family}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let m32: Model<f32> = m.cast();
        let p32 = m32.probabilities(&batch, Some(&toy_table()), 3).unwrap();
        for row in p32.data().chunks(NUM_CLASSES) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6, "{family}");
        }
    }
}

#[test]
fn extra_padding_changes_nothing() {
    for family in Family::ALL {
        let mut cfg = toy_config(family);
        cfg.max_len = TOY_LEN + 4;
        let m: Model<f64> = Model::for_data(cfg, &toy_data(), Some(&toy_table())).unwrap();
        let full = m.encode(&toy_data(), Some(&toy_table())).unwrap();
        for i in 0..full.batch {
            let one = full.select(&[i]);
            let tight = if family == Family::BowConc {
                one.clone()
            } else {
                one.trimmed()
            };
            let padded = if family == Family::BowConc {
                one.clone()
            } else {
                one.with_len(one.lengths()[0] + 3)
            };
            let a = probs(&m, &tight);
            let b = probs(&m, &padded);
            assert_eq!(a, b, "{family} row {i}");
            // alongside a longer example in the same batch
            let pair = full.select(&[i, 0]);
            assert_eq!(&probs(&m, &pair)[..NUM_CLASSES], &a[..], "{family} row {i} paired");
        }
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    for family in Family::ALL {
        let m = toy_model(family);
        let batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
        let base = probs(&m, &batch);
        let perm = [2, 0, 3, 1];
        let shuffled = probs(&m, &batch.select(&perm));
        for (k, &i) in perm.iter().enumerate() {
            let a = &shuffled[k * NUM_CLASSES..(k + 1) * NUM_CLASSES];
            let b = &base[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{family}");
            }
        }
    }
}

#[test]
fn inference_is_deterministic_and_training_mode_is_not() {
    let m = toy_model(Family::BowSum);
    let batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
    assert_eq!(probs(&m, &batch), probs(&m, &batch));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new(&m.params);
    let p = m.forward(&mut g, &batch, Some(&toy_table()), Some(&mut rng)).unwrap();
    assert_ne!(g.value(p).data(), &probs(&m, &batch)[..]);
}

/// Moves every parameter off its initial value. At init the first state of
/// every sequence is exactly zero, where the cosine score is not differentiable.
fn jittered(mut m: Model<f64>) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for v in m.params.get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    m
}

#[test]
fn every_family_passes_finite_differences() {
    for family in Family::ALL {
        let m = jittered(toy_model(family));
        let batch = m.prepare(&m.encode(&toy_data(), Some(&toy_table())).unwrap());
        let report = grad_check(&m.params, 1e-5, |p| {
            let probe = Model {
                params: p.clone(),
                ..m.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            probe.loss_and_grad(&batch, Some(&toy_table()), Some(&mut rng))
        })
        .unwrap();
        assert!(report.passes(1e-4), "{family}: {report:?}");
    }
}

#[test]
fn bow_conc_with_tiled_weights_matches_bow_sum() {
    let sum = toy_model(Family::BowSum);
    let mut conc = toy_model(Family::BowConc);
    let w = sum.params.get(sum.params.by_name("head.hidden.w").unwrap()).clone();
    let tiled: Vec<f64> = (0..TOY_LEN).flat_map(|_| w.data().to_vec()).collect();
    let id = conc.params.by_name("head.hidden.w").unwrap();
    *conc.params.get_mut(id) = Tensor::new(&[TOY_LEN * 3, 4], tiled).unwrap();
    for name in ["head.hidden.b", "head.out.w", "head.out.b"] {
        let src = sum.params.get(sum.params.by_name(name).unwrap()).clone();
        let dst = conc.params.by_name(name).unwrap();
        *conc.params.get_mut(dst) = src;
    }
    let single = vec![
        toy_point(0, &[], Quantifier::Some),
        toy_point(1, &[4], Quantifier::Some),
    ];
    let single: Vec<Datapoint> = single
        .into_iter()
        .map(|mut d| {
            d.s_t.retain(|t| t != "<qnt>");
            d
        })
        .filter(|d| !d.s_t.is_empty())
        .collect();
    let table = toy_table();
    let mut data = toy_data();
    data.extend(single);
    for dp in &data {
        let b = sum.encode(std::slice::from_ref(dp), Some(&table)).unwrap();
        let a = probs(&sum, &b);
        let c = probs(&conc, &b);
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12, "{}", dp.id);
        }
    }
}

fn copy_param(from: &Model<f64>, to: &mut Model<f64>, name: &str) {
    let t = from.params.get(from.params.by_name(name).unwrap()).clone();
    let id = to.params.by_name(name).unwrap();
    *to.params.get_mut(id) = t;
}

#[test]
fn bilstm_with_silent_backward_layer_matches_lstm() {
    let lstm = toy_model(Family::Lstm);
    let mut bi = toy_model(Family::Bilstm);
    for name in [
        "lstm.kernel",
        "lstm.recurrent",
        "lstm.bias",
        "head.hidden.b",
        "head.out.w",
        "head.out.b",
    ] {
        copy_param(&lstm, &mut bi, name);
    }
    for name in ["lstm_back.kernel", "lstm_back.recurrent", "lstm_back.bias"] {
        let id = bi.params.by_name(name).unwrap();
        bi.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    // forward rows as in the lstm, backward rows arbitrary since their input is zero
    let w = lstm
        .params
        .get(lstm.params.by_name("head.hidden.w").unwrap())
        .data()
        .to_vec();
    let mut stacked = w.clone();
    stacked.extend((0..w.len()).map(|i| i as f64 * 0.37 - 1.0));
    let id = bi.params.by_name("head.hidden.w").unwrap();
    *bi.params.get_mut(id) = Tensor::new(&[8, 4], stacked).unwrap();
    let batch = lstm.encode(&toy_data(), Some(&toy_table())).unwrap();
    assert_eq!(probs(&lstm, &batch), probs(&bi, &batch));
}

#[test]
fn constant_attention_scores_give_masked_mean() {
    let mut m = toy_model(Family::AttLstm);
    let id = m.params.by_name("attention.v").unwrap();
    m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let table = toy_table();
    let batch = m.encode(&toy_data(), Some(&table)).unwrap();
    let got = probs(&m, &batch);

    let mut g = Graph::new(&m.params);
    let mask: Mask = batch.mask.clone().into();
    let x = g.input(m.embed(&batch, Some(&table)).unwrap());
    let out = lstm_sequence(&mut g, x, &mask, &m.lstm_params("lstm").unwrap(), Direction::Forward).unwrap();
    let mean = g.masked_mean_time(out.states, &mask).unwrap();
    let p = m.head(&mut g, mean, None).unwrap();
    for (a, b) in got.iter().zip(g.value(p).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn predict_breaks_ties_toward_lowest_index() {
    let uniform = Tensor::new(&[2, 9], vec![1.0 / 9.0; 18]).unwrap();
    assert_eq!(argmax_rows(&uniform), [0, 0]);
    assert_eq!(Quantifier::from_index(argmax_rows(&uniform)[0]), Some(Quantifier::AFew));
    let mut row = vec![0.05; 9];
    row[Quantifier::None.index()] = 0.6;
    let t = Tensor::new(&[1, 9], row).unwrap();
    assert_eq!(argmax_rows(&t), [Quantifier::None.index()]);
    let m = toy_model(Family::Cnn);
    let batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
    assert_eq!(m.predict(&batch, Some(&toy_table())).unwrap().len(), 4);
}

#[test]
fn condition_mismatch_is_rejected() {
    let m = toy_model(Family::Lstm);
    let mut batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
    batch.condition = Condition::ThreeSent;
    let mut g = Graph::new(&m.params);
    assert!(matches!(
        m.forward(&mut g, &batch, Some(&toy_table()), None),
        Err(Error::Config(_))
    ));
}

#[test]
fn off_grid_values_need_the_override() {
    let mut c = ModelConfig::new(Family::Lstm, Condition::OneSent);
    c.hidden_units = 32;
    assert!(c.validate().is_err());
    c.off_grid = true;
    c.validate().unwrap();
    let grid = ablation_grid(&ModelConfig::new(Family::Cnn, Condition::OneSent));
    assert_eq!(grid.len(), 18);
    let labels: std::collections::HashSet<_> = grid.iter().map(|c| c.cell_label()).collect();
    assert_eq!(labels.len(), 18);
    assert_eq!(grid[0].cell_label(), "adagrad/h64/d0.25");
    assert_eq!(grid[17].cell_label(), "nadam/h128/d0.75");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for family in Family::ALL {
        let m: Model<f32> = toy_model(family).cast();
        let path = dir.path().join(format!("{family}.ckpt"));
        save_checkpoint(&m, serde_json::json!({"best_epoch": 3}), &path).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.extra["best_epoch"], 3);
        assert_eq!(back.model.config, m.config);
        let batch = m.encode(&toy_data(), Some(&toy_table())).unwrap();
        let a = m.probabilities(&batch, Some(&toy_table()), 8).unwrap();
        let b = back.model.probabilities(&batch, Some(&toy_table()), 8).unwrap();
        assert_eq!(a, b, "{family}");
    }
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"QCLZCKPT\x01\x00").unwrap();
    assert!(matches!(load_checkpoint::<f32>(&bad), Err(Error::Checkpoint(_))));
}

#[test]
fn token_ids_in_padded_slots_are_ignored() {
    for family in Family::ALL {
        let m = toy_model(family);
        let batch = m.prepare(&m.encode(&toy_data(), Some(&toy_table())).unwrap());
        let mut noisy = batch.clone();
        for (ix, real) in noisy.indices.iter_mut().zip(&batch.mask) {
            if !real {
                *ix = 3;
            }
        }
        assert_eq!(probs(&m, &batch), probs(&m, &noisy), "{family}");
    }
}
