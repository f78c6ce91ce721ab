use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::tokenizer::{label_token, MIN_VOCAB};
use crate::data::{format_prompt, Instance, Lang};
use crate::lora::LoraConfig;
use crate::model::{Mode, Model, ModelConfig};
use crate::numerics::Graph;

fn tiny_model() -> Model {
    let cfg = ModelConfig {
        vocab_size: MIN_VOCAB,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 8,
        max_seq: 64,
        ..ModelConfig::default()
    };
    Model::build(&cfg, 1).unwrap()
}

fn bank(model: &Model, granularity: Granularity) -> AdapterBank {
    let cfg = LoraConfig {
        rank: 2,
        alpha: 2.0,
        ..LoraConfig::default()
    };
    AdapterBank::init(model, &cfg, granularity, true).unwrap()
}

fn inst(id: &str, text: &str) -> Instance {
    Instance {
        id: id.into(),
        lang: Lang::En,
        text: text.into(),
        gold_l1: Label::NotSexist,
        gold_l2: None,
        gold_l3: None,
    }
}

/// Final hidden state at the scoring position of `inst`'s level prompt.
fn hidden_last(model: &mut Model, bank: &mut AdapterBank, key: &str, inst: &Instance, level: Level) -> Vec<f64> {
    let prompt = format_prompt(inst, level, None, model.config().max_seq).unwrap();
    bank.with_adapter(model, key, |m| {
        let m: &Model = m;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = m.hidden(&mut g, &bound, prompt.input(), Mode::Eval, &mut rng)?;
        Ok(g.value(h).row(prompt.input().len() - 1).to_vec())
    })
    .unwrap()
}

/// Sets the label rows of `key`'s saved lm_head so `inst` scores exactly
/// `scores` at `level`.
fn force(model: &mut Model, bank: &mut AdapterBank, key: &str, inst: &Instance, level: Level, scores: &[f64]) {
    let h = hidden_last(model, bank, key, inst, level);
    let hh: f64 = h.iter().map(|x| x * x).sum();
    let mut set = bank.take(key).unwrap();
    let head = &mut set.saved.as_mut().unwrap().lm_head;
    let d = h.len();
    for (&label, &s) in level.labels().iter().zip(scores) {
        let t = label_token(label);
        for (j, &hj) in h.iter().enumerate() {
            head.data_mut()[t * d + j] = s * hj / hh;
        }
    }
    bank.insert(key, set);
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

#[test]
fn forced_not_sexist_short_circuits_without_scoring_children() {
    let mut m = tiny_model();
    let mut b = bank(&m, Granularity::PerLevel);
    let x = inst("a", "hello");
    force(&mut m, &mut b, "level1", &x, Level::ONE, &[-3.0, 3.0]);
    let p = predict_hierarchical(&mut m, &mut b, &x).unwrap();
    assert_eq!(p.y1, Label::NotSexist);
    assert_eq!((p.y2, p.y3.clone()), (None, None));
    assert!(p.p2.is_none() && p.p3.is_none(), "child levels were evaluated");
    assert_eq!(
        p.record("a").to_line(),
        r#"{"id":"a","label_task1":"NOT_SEXIST","label_task2":"-","labels_task3":"-"}"#
    );
}

#[test]
fn forced_sexist_direct_runs_every_level() {
    let mut m = tiny_model();
    let mut b = bank(&m, Granularity::PerLevel);
    let x = inst("a", "hello");
    force(&mut m, &mut b, "level1", &x, Level::ONE, &[3.0, -3.0]);
    force(&mut m, &mut b, "level2", &x, Level::TWO, &[4.0, 0.0, 0.0]);
    let p = predict_hierarchical(&mut m, &mut b, &x).unwrap();
    assert_eq!(p.y1, Label::Sexist);
    assert_eq!(p.y2, Some(Label::Direct));
    assert!(p.p2.is_some() && p.p3.is_some());
    assert!(!p.y3.unwrap().is_empty());
}

#[test]
fn hand_computed_fixture() {
    let mut m = tiny_model();
    let mut b = bank(&m, Granularity::PerLevel);
    let x = inst("fx", "#tag @user");
    force(&mut m, &mut b, "level1", &x, Level::ONE, &[2.0, 0.0]);
    force(&mut m, &mut b, "level2", &x, Level::TWO, &[0.0, 1.0, 3.0]);
    force(&mut m, &mut b, "level3", &x, Level::THREE, &[1.0, -1.0, 0.5, -2.0, 0.0]);
    let p = predict_hierarchical(&mut m, &mut b, &x).unwrap();
    assert!(close(&p.p1, &[0.88079707797788244, 0.11920292202211756]));
    assert!(close(
        p.p2.as_ref().unwrap(),
        &[0.042010066134066051, 0.11419519938459448, 0.84379473448133947]
    ));
    assert!(close(
        p.p3.as_ref().unwrap(),
        &[
            0.73105857863000488,
            0.26894142136999512,
            0.62245933120185456,
            0.11920292202211756,
            0.5
        ]
    ));
    assert_eq!(p.y1, Label::Sexist);
    assert_eq!(p.y2, Some(Label::Judgemental));
    assert_eq!(
        p.y3,
        Some(vec![Label::IdeologicalAndInequality, Label::Objectification])
    );
}

#[test]
fn empty_category_set_falls_back_to_argmax() {
    assert_eq!(
        decide(Level::THREE, &[0.2, 0.1, 0.4, 0.3, 0.0]),
        vec![Label::Objectification]
    );
    assert_eq!(decide(Level::THREE, &[0.5; 5]), vec![Label::IdeologicalAndInequality]);
    assert_eq!(decide(Level::TWO, &[0.2, 0.5, 0.3]), vec![Label::Reported]);
}

#[test]
fn per_parent_routes_level3_by_predicted_intention() {
    let mut m = tiny_model();
    let mut b = bank(&m, Granularity::PerParent);
    let x = inst("a", "text");
    force(&mut m, &mut b, "level1", &x, Level::ONE, &[3.0, 0.0]);
    force(&mut m, &mut b, "level2/SEXIST", &x, Level::TWO, &[0.0, 5.0, 0.0]);
    force(
        &mut m,
        &mut b,
        "level3/REPORTED",
        &x,
        Level::THREE,
        &[-4.0, -4.0, -4.0, 4.0, -4.0],
    );
    force(
        &mut m,
        &mut b,
        "level3/DIRECT",
        &x,
        Level::THREE,
        &[4.0, -4.0, -4.0, -4.0, -4.0],
    );
    let p = predict_hierarchical(&mut m, &mut b, &x).unwrap();
    assert_eq!(p.y2, Some(Label::Reported));
    assert_eq!(p.y3, Some(vec![Label::SexualViolence]));
}

#[test]
fn raw_mode_scores_children_of_not_sexist_roots() {
    let mut m = tiny_model();
    let mut b = bank(&m, Granularity::PerLevel);
    let x = inst("a", "text");
    force(&mut m, &mut b, "level1", &x, Level::ONE, &[-3.0, 3.0]);
    force(&mut m, &mut b, "level2", &x, Level::TWO, &[0.0, 0.0, 4.0]);
    let p = predict_dataset(&mut m, &mut b, std::slice::from_ref(&x), true)
        .unwrap()
        .pop()
        .unwrap();
    assert_eq!((p.y1, p.y2, p.y3.clone()), (Label::NotSexist, None, None));
    assert!(p.p2.is_some() && p.p3.is_some());
    assert!(p.is_invalid_transition());
    assert_eq!(invalid_transition_rate(std::slice::from_ref(&p)), Some(1.0));
    let expected_penalty = 0.1 * (p.p2.as_ref().unwrap()[2] + 0.5);
    assert!((hierarchy_loss(&[p], 0.1).unwrap() - expected_penalty).abs() < 1e-12);
}

/// Random texts against random adapters: every output obeys the taxonomy.
#[test]
fn short_circuit_soundness_on_fuzzed_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut m = tiny_model();
    let mut seen_sexist = 0;
    let mut seen_not = 0;
    for round in 0..20 {
        let mut b = bank(
            &m,
            if round % 2 == 0 {
                Granularity::PerLevel
            } else {
                Granularity::PerParent
            },
        );
        let keys: Vec<String> = b.entries().map(|(k, _)| k.clone()).collect();
        for k in keys {
            let mut set = b.take(&k).unwrap();
            let head = &mut set.saved.as_mut().unwrap().lm_head;
            for x in head.data_mut().iter_mut() {
                *x += rng.random_range(-2.0..2.0);
            }
            b.insert(k, set);
        }
        let xs: Vec<Instance> = (0..50)
            .map(|i| {
                let len = rng.random_range(0..20);
                let text: String = (0..len).map(|_| rng.random_range(' '..='~')).collect();
                inst(&format!("{round}-{i}"), &text)
            })
            .collect();
        for raw in [false, true] {
            for p in predict_dataset(&mut m, &mut b, &xs, raw).unwrap() {
                assert!((p.p1.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                if let Some(p2) = &p.p2 {
                    assert!((p2.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
                if let Some(p3) = &p.p3 {
                    assert!(p3.iter().all(|x| (0.0..=1.0).contains(x)));
                }
                match p.y1 {
                    Label::NotSexist => {
                        seen_not += 1;
                        assert!(p.y2.is_none() && p.y3.is_none());
                        if !raw {
                            assert!(p.p2.is_none() && p.p3.is_none());
                        }
                    }
                    _ => {
                        seen_sexist += 1;
                        assert!(p.y2.is_some());
                        assert!(!p.y3.as_ref().unwrap().is_empty());
                        p.record("x").validate().unwrap();
                    }
                }
            }
        }
    }
    assert_eq!(seen_not + seen_sexist, 2000);
    assert!(seen_not > 0 && seen_sexist > 0);
}

#[test]
fn records_round_trip_and_validate() {
    let text = concat!(
        r#"{"id":"a","label_task1":"NOT_SEXIST","label_task2":"-","labels_task3":"-"}"#,
        "\n",
        r#"{"id":"b","label_task1":"SEXIST","label_task2":"REPORTED","labels_task3":["OBJECTIFICATION"]}"#,
        "\n"
    );
    let recs = parse_records(text).unwrap();
    let back: String = recs.iter().map(|r| r.to_line() + "\n").collect();
    assert_eq!(back, text);
    assert_eq!(
        recs[1].label_set(),
        vec![Label::Sexist, Label::Reported, Label::Objectification]
    );
    let bad = r#"{"id":"a","label_task1":"NOT_SEXIST","label_task2":"DIRECT","labels_task3":"-"}"#;
    assert!(parse_records(bad).unwrap_err().to_string().contains("line 1"));
}
