use proptest::prelude::*;
use sparqlcopy::copynet::{
    copy_distribution, copy_gate, copy_step, greedy_decode, step_loss, train, Batching, CandidateTable, Checkpoint,
    LrSchedule, Model, OptimizerConfig, Target, TrainConfig,
};
use sparqlcopy::corpus::synthetic::{self, SyntheticConfig};
use sparqlcopy::corpus::{annotate_tag_within, Scheme};
use sparqlcopy::sparqltok::tokenize_query;
use sparqlcopy::vocab::{build_vocabularies, Example};
use sparqlcopy::{ModelF32, ModelF64};

fn small_examples() -> (Vec<Example>, Vec<Example>) {
    let c = synthetic::generate(&SyntheticConfig {
        train_per_template: 4,
        validation_per_template: 1,
        test_per_template: 1,
        seed: 3,
    })
    .unwrap();
    let convert = |entries: &[sparqlcopy::corpus::Entry]| -> Vec<Example> {
        entries
            .iter()
            .map(|e| {
                let t = c.templates.iter().find(|t| Some(&t.id) == e.template_id.as_ref()).unwrap();
                Example {
                    id: e.id.clone(),
                    question: annotate_tag_within(e, t, &c.bindings[&e.id]).unwrap(),
                    query: tokenize_query(&e.query).unwrap(),
                }
            })
            .collect()
    };
    (convert(&c.split.train), convert(&c.split.validation))
}

fn config(epochs: usize, batch_size: usize, grad_accum: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batching: Batching { batch_size, grad_accum },
        optimizer: OptimizerConfig::adam(0.01),
        schedule: LrSchedule::Constant,
        clip_norm: Some(5.0),
        seed: 9,
        shuffle: true,
    }
}

fn fresh_model(train_ex: &[Example]) -> ModelF64 {
    let vocab = build_vocabularies(train_ex, Scheme::TagWithin).unwrap();
    Model::toy(vocab, train_ex, 16, true, 4)
}

fn table(n_positions: usize, tokens: &[usize]) -> CandidateTable {
    let pairs: Vec<(usize, String)> = tokens
        .iter()
        .enumerate()
        .filter(|(p, _)| *p < n_positions)
        .map(|(p, t)| (p, format!("dbr:K{t}")))
        .collect();
    CandidateTable::new(&pairs)
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn p_t_is_a_distribution(
        logits in prop::collection::vec(-8.0f64..8.0, 6),
        b in prop::collection::vec(-2.0f64..2.0, 5),
        att in simplex(7),
        owners in prop::collection::vec(0usize..4, 7),
    ) {
        let t = table(7, &owners);
        let d = copy_step(&logits, &att, &b, &t).unwrap();
        let sum: f64 = d.p_t.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(d.p_t.iter().all(|&p| p >= 0.0));
        prop_assert_eq!(d.p_t.len(), logits.len() + t.len());
    }

    /// Duplicated candidates get the summed softmax mass of their positions.
    #[test]
    fn copy_mass_pools_over_positions(att in simplex(6), owners in prop::collection::vec(0usize..3, 6)) {
        let t = table(6, &owners);
        let p_c = copy_distribution(&att, &t).unwrap();
        let z: f64 = att.iter().map(|a| a.exp()).sum();
        for (c, tok) in t.tokens.iter().enumerate() {
            let want: f64 = owners
                .iter()
                .enumerate()
                .filter(|(_, o)| format!("dbr:K{o}") == *tok)
                .map(|(p, _)| att[p].exp() / z)
                .sum();
            prop_assert!((p_c[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn step_loss_is_minus_log_probability(
        logits in prop::collection::vec(-5.0f64..5.0, 5),
        b in prop::collection::vec(-1.0f64..1.0, 4),
        att in simplex(4),
        pick in 0usize..7,
    ) {
        let t = table(4, &[0, 1, 1, 2]);
        let d = copy_step(&logits, &att, &b, &t).unwrap();
        let target = if pick < 5 { Target::Generate(pick) } else { Target::Copy(pick - 5) };
        let idx = if pick < 5 { pick } else { 5 + pick - 5 };
        let g = step_loss(&logits, &att, &b, &t, target).unwrap();
        prop_assert!((g.loss + d.p_t[idx].ln()).abs() < 1e-9);
    }
}

#[test]
fn gate_reads_only_the_s_logits() {
    let b = [1.0, -0.5, 0.25];
    let short = copy_gate(&[0.3, 0.1, -0.7], &b).unwrap();
    let want = 1.0 / (1.0 + (-(0.3 - 0.05 - 0.175_f64)).exp());
    assert!((short - want).abs() < 1e-15);
    assert!(copy_gate(&[0.3, 0.1], &b).is_err());
}

#[test]
fn forced_copy_emits_the_candidate_token() {
    // gate saturated towards copy, all attention on the second masked slot
    let logits = [0.0, 0.0, 0.0];
    let t = CandidateTable::new(&[(1, "dbr:A".into()), (4, "dbr:B".into())]);
    let mut att = [0.0; 6];
    att[4] = 40.0;
    let z: f64 = att.iter().map(|a: &f64| a.exp()).sum();
    let att: Vec<f64> = att.iter().map(|a| a.exp() / z).collect();
    let d = copy_step(&logits, &att, &[50.0, 50.0, 50.0], &t).unwrap();
    assert_eq!(d.argmax(), 3 + t.index_of("dbr:B").unwrap());
}

#[test]
fn decoding_stops_at_max_length() {
    let (train_ex, _) = small_examples();
    let model = fresh_model(&train_ex);
    let p = greedy_decode(&model, "x", &train_ex[0].question, 3).unwrap();
    assert!(p.tokens.len() <= 3);
    if p.tokens.len() == 3 {
        assert!(p.truncated);
    }
    let long = greedy_decode(&model, "x", &train_ex[0].question, 200).unwrap();
    assert_eq!(long.truncated, long.tokens.len() == 200);
}

#[test]
fn accumulation_matches_one_large_batch() {
    let (train_ex, val_ex) = small_examples();
    let run = |batch, accum| {
        let mut m = fresh_model(&train_ex);
        let tr = m.encode_all(&train_ex).unwrap();
        let va = m.encode_all(&val_ex).unwrap();
        train(&mut m, &tr, &va, &config(2, batch, accum), None, |_| Ok(())).unwrap();
        m.params
    };
    let a = run(4, 4);
    let b = run(16, 1);
    let max = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(max < 1e-6, "max parameter difference {max}");
}

#[test]
fn resuming_reproduces_an_uninterrupted_run() {
    let (train_ex, val_ex) = small_examples();
    let mut full = fresh_model(&train_ex);
    let tr = full.encode_all(&train_ex).unwrap();
    let va = full.encode_all(&val_ex).unwrap();
    let full_report = train(&mut full, &tr, &va, &config(4, 8, 1), None, |_| Ok(())).unwrap();

    let mut first = fresh_model(&train_ex);
    let mut saved: Option<Checkpoint> = None;
    train(&mut first, &tr, &va, &config(2, 8, 1), None, |ck| {
        saved = Some(ck.clone());
        Ok(())
    })
    .unwrap();
    // the checkpoint goes through its on-disk text form
    let text = serde_json::to_string(&saved.unwrap()).unwrap();
    let restored: Checkpoint = serde_json::from_str(&text).unwrap();
    let mut resumed = fresh_model(&train_ex);
    let report = train(&mut resumed, &tr, &va, &config(4, 8, 1), Some(restored), |_| Ok(())).unwrap();
    assert_eq!(report.log, full_report.log);
    assert_eq!(resumed.params, full.params);
}

#[test]
fn best_epoch_has_the_lowest_validation_loss() {
    let (train_ex, val_ex) = small_examples();
    let mut m = fresh_model(&train_ex);
    let tr = m.encode_all(&train_ex).unwrap();
    let va = m.encode_all(&val_ex).unwrap();
    let report = train(&mut m, &tr, &va, &config(6, 8, 1), None, |_| Ok(())).unwrap();
    let min = report
        .log
        .iter()
        .min_by(|a, b| a.validation_loss.total_cmp(&b.validation_loss))
        .unwrap();
    assert_eq!(report.best_epoch, min.epoch);
    // the model holds the best epoch's parameters
    assert!((m.mean_loss(&va).unwrap() - min.validation_loss).abs() < 1e-12);
}

#[test]
fn callback_errors_stop_training() {
    let (train_ex, val_ex) = small_examples();
    let mut m = fresh_model(&train_ex);
    let tr = m.encode_all(&train_ex).unwrap();
    let va = m.encode_all(&val_ex).unwrap();
    let r = train(&mut m, &tr, &va, &config(5, 8, 1), None, |ck| {
        if ck.epoch == 2 {
            Err(sparqlcopy::Error::Interrupted(2))
        } else {
            Ok(())
        }
    });
    assert!(matches!(r, Err(sparqlcopy::Error::Interrupted(2))));
}

#[test]
fn single_precision_model_trains() {
    let (train_ex, val_ex) = small_examples();
    let vocab = build_vocabularies(&train_ex, Scheme::TagWithin).unwrap();
    let mut m: ModelF32 = Model::toy(vocab, &train_ex, 16, true, 4);
    let tr = m.encode_all(&train_ex).unwrap();
    let va = m.encode_all(&val_ex).unwrap();
    let before = m.mean_loss(&va).unwrap();
    let report = train(&mut m, &tr, &va, &config(3, 8, 1), None, |_| Ok(())).unwrap();
    assert!(report.best_validation_loss < before);
    let d = greedy_decode(&m, "x", &val_ex[0].question, 40).unwrap();
    assert!(d.tokens.len() <= 40);
}

#[test]
fn generation_only_model_never_copies() {
    let (train_ex, _) = small_examples();
    let vocab = build_vocabularies(&train_ex, Scheme::TagWithin).unwrap();
    let m: ModelF64 = Model::toy(vocab, &train_ex, 16, false, 4);
    assert!(m.gate_weights().is_empty());
    let enc = m.encode_all(&train_ex).unwrap();
    assert!(enc.iter().all(|e| e.table.is_empty()));
    assert!(enc.iter().flat_map(|e| &e.targets).all(|t| matches!(t, Target::Generate(_))));
}
