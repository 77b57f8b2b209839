use heatmark::config::Config;
use heatmark::data::synth_generate;
use heatmark::hpo::*;
use heatmark::rng::RngStream;
use proptest::prelude::*;
use statrs::function::erf::erf;

fn unit_space() -> SearchSpace {
    SearchSpace::new(vec![("x".into(), Dim::Uniform { lo: 0.0, hi: 1.0 })]).unwrap()
}

fn finished(study: &mut Study, params: Params, objective: f64) {
    let id = study.add_trial(params);
    study.report(id, 1, objective).unwrap();
    study.finish(id, TrialStatus::Complete).unwrap();
}

fn skewed_study() -> Study {
    let mut s = Study::new(unit_space(), 20);
    for i in 0..5 {
        finished(&mut s, vec![("x".into(), Value::Float(0.08 + 0.01 * i as f64))], 0.1 + 0.01 * i as f64);
    }
    for i in 0..15 {
        finished(&mut s, vec![("x".into(), Value::Float(0.85 + 0.007 * i as f64))], 5.0 + i as f64);
    }
    s
}

// Mixture oracle: neighbour-gap bandwidths and the truncation mass found by
// numeric quadrature instead of the closed form.
fn oracle_density(obs: &[f64], x: f64) -> f64 {
    let mut pts: Vec<(f64, bool)> = obs.iter().map(|&o| (o, false)).collect();
    pts.push((0.5, true));
    let mut sorted: Vec<f64> = pts.iter().map(|p| p.0).collect();
    sorted.sort_by(f64::total_cmp);
    let n = pts.len() as f64;
    let lo_bw = 1.0 / (100f64).min(n + 1.0);
    let gauss = |m: f64, s: f64, t: f64| (-0.5 * ((t - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let mut total = 0.0;
    for &(m, prior) in &pts {
        let s = if prior {
            1.0
        } else {
            let k = sorted.iter().position(|&v| v == m).unwrap();
            let left = if k == 0 { 0.0 } else { sorted[k - 1] };
            let right = if k + 1 == sorted.len() { 1.0 } else { sorted[k + 1] };
            (m - left).max(right - m).clamp(lo_bw, 1.0)
        };
        let steps = 20_000;
        let mass: f64 = (0..steps).map(|i| gauss(m, s, (i as f64 + 0.5) / steps as f64)).sum::<f64>() / steps as f64;
        total += gauss(m, s, x) / mass;
    }
    total / n
}

#[test]
fn startup_draws_follow_the_prior() {
    let s = Study::new(unit_space(), 20);
    let n = 10_000;
    let mean: f64 = (0..n)
        .map(|i| match &tpe_suggest(&s, &mut RngStream::new(i, 0))[0].1 {
            Value::Float(v) => *v,
            v => panic!("unexpected {v:?}"),
        })
        .sum::<f64>()
        / n as f64;
    assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    let a = tpe_suggest(&s, &mut RngStream::new(3, 0));
    assert_eq!(a, tpe_suggest(&s, &mut RngStream::new(3, 0)));
}

#[test]
fn skewed_history_suggests_near_good_region() {
    let s = skewed_study();
    let good: Vec<f64> = (0..5).map(|i| 0.08 + 0.01 * i as f64).collect();
    let bad: Vec<f64> = (0..15).map(|i| 0.85 + 0.007 * i as f64).collect();
    let mut hits = 0;
    for seed in 0..100 {
        let cands = tpe_candidates(&s, "x", &mut RngStream::new(seed, 0)).unwrap();
        assert_eq!(cands.len(), 24);
        let ratios: Vec<f64> = cands
            .iter()
            .map(|c| {
                let x = c.value.as_f64().unwrap();
                oracle_density(&good, x) / oracle_density(&bad, x)
            })
            .collect();
        for (c, r) in cands.iter().zip(&ratios) {
            assert!((c.score - r.ln()).abs() < 1e-3, "score {} vs oracle {}", c.score, r.ln());
        }
        let best = (0..24).fold(0, |b, i| if ratios[i] > ratios[b] { i } else { b });
        let pick = tpe_suggest(&s, &mut RngStream::new(seed, 0))[0].1.as_f64().unwrap();
        assert_eq!(pick, cands[best].value.as_f64().unwrap());
        if (0.0..=0.3).contains(&pick) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100 in [0, 0.3]");
}

#[test]
fn parzen_density_integrates_to_one() {
    let p = Parzen::fit(&[0.1, 0.12, 0.5, 0.95], 0.0, 1.0, 1.0);
    let steps = 20_000;
    let area: f64 = (0..steps).map(|i| p.pdf((i as f64 + 0.5) / steps as f64)).sum::<f64>() / steps as f64;
    assert!((area - 1.0).abs() < 1e-6, "{area}");
    let mut rng = RngStream::new(1, 0);
    assert!((0..1000).all(|_| (0.0..=1.0).contains(&p.sample(&mut rng))));
    let z = 0.5 * (1.0 + erf(1.0 / std::f64::consts::SQRT_2));
    assert!((z - 0.841_344_746).abs() < 1e-8);
}

#[test]
fn categorical_frequencies_favour_good_choice() {
    let space = SearchSpace::new(vec![("c".into(), Dim::Categorical(vec!["a".into(), "b".into()]))]).unwrap();
    let mut s = Study::new(space, 20);
    let ch = |v: &str| vec![("c".to_string(), Value::Choice(v.into()))];
    for i in 0..3 {
        finished(&mut s, ch("a"), i as f64);
    }
    for (i, v) in ["a", "b", "a", "b", "a", "b", "a", "b", "b"].iter().enumerate() {
        finished(&mut s, ch(v), 10.0 + i as f64);
    }
    assert_eq!(categorical_probs(&[3, 0], 1.0), vec![0.8, 0.2]);
    let n = 200;
    let a = (0..n).filter(|&i| tpe_suggest(&s, &mut RngStream::new(i, 0))[0].1 == Value::Choice("a".into())).count();
    assert!(a as f64 / n as f64 > 0.5, "{a}/{n}");
}

fn rung_study(values: &[f64]) -> Study {
    let mut s = Study::new(unit_space(), 20);
    for &v in values {
        let id = s.add_trial(vec![("x".into(), Value::Float(0.5))]);
        s.report(id, 1, 9.0).unwrap();
        s.report(id, 2, v).unwrap();
    }
    s
}

#[test]
fn asha_top_third_and_floor() {
    assert_eq!(AshaConfig::default().rungs(20), vec![2, 6, 18]);
    let s = rung_study(&[1.0, 2.0, 3.0]);
    let d: Vec<Decision> = (0..3).map(|i| asha_decide(&s, i, 2).unwrap()).collect();
    assert_eq!(d, vec![Decision::Continue, Decision::Prune, Decision::Prune]);
    let s = rung_study(&[1.0, 2.0]);
    assert!((0..2).all(|i| asha_decide(&s, i, 2).unwrap() == Decision::Prune));
    assert_eq!(asha_decide(&s, 0, 1).unwrap(), Decision::Continue);
    let s = rung_study(&[2.0, 2.0, 2.0]);
    assert_eq!(asha_decide(&s, 0, 2).unwrap(), Decision::Continue);
    assert_eq!(asha_decide(&s, 1, 2).unwrap(), Decision::Prune);
    assert!(asha_decide(&s, 0, 3).is_err());
}

// Replays an interleaving of trial reports; each rung decision is taken as
// the report arrives. Returns the decision log.
fn replay(values: &[Vec<f64>], order: &[usize]) -> Vec<(usize, usize, Decision)> {
    let mut s = Study::new(unit_space(), 20);
    for _ in values {
        s.add_trial(vec![("x".into(), Value::Float(0.5))]);
    }
    let mut log = Vec::new();
    for &t in order {
        if s.trials[t].status != TrialStatus::Running {
            continue;
        }
        let e = s.trials[t].history.len() + 1;
        if e > values[t].len() {
            continue;
        }
        s.report(t, e, values[t][e - 1]).unwrap();
        let d = asha_decide(&s, t, e).unwrap();
        if AshaConfig::default().rungs(20).contains(&e) {
            log.push((t, e, d));
        }
        if d == Decision::Prune {
            s.finish(t, TrialStatus::Pruned).unwrap();
        }
    }
    log
}

proptest! {
    #[test]
    fn asha_decisions_depend_on_the_rung_snapshot(
        values in prop::collection::vec(prop::collection::vec(0.0f64..4.0, 7), 2..7),
        order_seed in any::<u64>(),
    ) {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).flat_map(|t| std::iter::repeat_n(t, 7)).collect();
        RngStream::new(order_seed, 0).shuffle(&mut order);
        let log = replay(&values, &order);
        prop_assert_eq!(&log, &replay(&values, &order));
        // Oracle: rank among trials that reached the rung earlier in the log.
        let mut seen: Vec<(usize, Vec<(f64, usize)>)> = Vec::new();
        for &(t, e, d) in &log {
            let at = match seen.iter_mut().find(|r| r.0 == e) {
                Some(r) => r,
                None => { seen.push((e, Vec::new())); seen.last_mut().unwrap() }
            };
            at.1.push((values[t][e - 1], t));
            let mine = (values[t][e - 1], t);
            let rank = 1 + at.1.iter().filter(|o| o.0 < mine.0 || (o.0 == mine.0 && o.1 < mine.1)).count();
            let expect = if rank <= at.1.len() / 3 { Decision::Continue } else { Decision::Prune };
            prop_assert_eq!(d, expect);
        }
        // A pruned trial reports nothing afterwards.
        for &(t, e, d) in &log {
            if d == Decision::Prune {
                prop_assert!(log.iter().all(|&(t2, e2, _)| t2 != t || e2 <= e));
            }
        }
    }
}

#[test]
fn dimensions_parse_and_validate() {
    assert_eq!("int:1:4".parse::<Dim>().unwrap(), Dim::Int { lo: 1, hi: 4 });
    assert_eq!("log:0.0001:0.01".parse::<Dim>().unwrap(), Dim::LogUniform { lo: 1e-4, hi: 1e-2 });
    assert_eq!("choice:3,5".parse::<Dim>().unwrap(), Dim::Categorical(vec!["3".into(), "5".into()]));
    assert!("int:4:1".parse::<Dim>().unwrap().validate("d").is_err());
    assert!("wat:1:2".parse::<Dim>().is_err());
    assert!(SearchSpace::new(vec![("d".into(), Dim::Uniform { lo: 1.0, hi: 1.0 })]).is_err());
    let mut cfg = Config::new();
    SearchSpace::default_space().to_config(&mut cfg);
    assert_eq!(SearchSpace::from_config(&cfg).unwrap().dims.len(), SearchSpace::default_space().dims.len());
    let mut rng = RngStream::new(0, 0);
    for _ in 0..200 {
        for (_, d) in &SearchSpace::default_space().dims {
            let v = d.prior_sample(&mut rng);
            assert_eq!(d.parse_value(&v.to_string()).unwrap(), v);
        }
    }
}

#[test]
fn study_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = skewed_study();
    let id = s.add_trial(vec![("x".into(), Value::Float(0.25))]);
    s.report(id, 1, 3.0).unwrap();
    s.save(dir.path()).unwrap();
    let back = Study::load(dir.path(), unit_space(), 20).unwrap();
    assert_eq!(back.trials.len(), s.trials.len());
    assert_eq!(back.trials[id].status, TrialStatus::Failed);
    for (a, b) in back.trials.iter().zip(&s.trials).take(id) {
        assert_eq!(a, b);
    }
    let other = SearchSpace::new(vec![("y".into(), Dim::Uniform { lo: 0.0, hi: 1.0 })]).unwrap();
    assert!(Study::load(dir.path(), other, 20).is_err());
}

fn study_base() -> Config {
    Config::parse("model.id=C-4\nmodel.scale=desk\nmodel.stem_width=4\nmodel.root_channels=4,4\nmodel.model_dim=8\ntrain.batch_size=8\n")
        .unwrap()
}

fn tiny_data() -> (heatmark::data::Dataset, heatmark::data::Dataset) {
    let d = synth_generate(24, (24, 32), &mut RngStream::new(5, 0)).unwrap();
    d.split_off(0.25, &mut RngStream::new(5, 1)).unwrap()
}

#[test]
fn single_trial_study() {
    let (tr, va) = tiny_data();
    let space = SearchSpace::new(vec![("model.dropout".into(), Dim::Uniform { lo: 0.0, hi: 0.3 })]).unwrap();
    let cfg = StudyConfig { budget: 1, epochs: 2, jobs: 1, seed: 1, base: study_base() };
    let out = run_study(&space, &cfg, &tr, &va, None).unwrap();
    assert_eq!(out.study.trials.len(), 1);
    assert_eq!(out.study.trials[0].status, TrialStatus::Complete);
    assert_eq!(out.study.best().unwrap().id, 0);
    assert!(out.best_model.is_some());
    assert!(run_study(&space, &StudyConfig { budget: 0, ..cfg }, &tr, &va, None).is_err());
}

#[test]
fn invalid_region_fails_trials_not_the_study() {
    let (tr, va) = tiny_data();
    let space = SearchSpace::new(vec![("model.patch".into(), Dim::Categorical(vec!["2".into(), "5".into()]))]).unwrap();
    let cfg = StudyConfig { budget: 6, epochs: 1, jobs: 1, seed: 3, base: study_base() };
    let out = run_study(&space, &cfg, &tr, &va, None).unwrap();
    assert_eq!(out.study.trials.len(), 6);
    for t in &out.study.trials {
        let bad = t.param("model.patch") == Some(&Value::Choice("5".into()));
        assert_eq!(t.status == TrialStatus::Failed, bad, "trial {t:?}");
        if bad {
            assert_eq!(t.objective(), Some(f64::INFINITY));
        }
    }
    assert!(out.study.trials.iter().any(|t| t.status == TrialStatus::Failed));
}

#[test]
fn eight_trial_study_prunes_and_improves() {
    let (tr, va) = tiny_data();
    let space = SearchSpace::new(vec![
        ("model.stem_depth".into(), Dim::Int { lo: 1, hi: 2 }),
        ("train.learning_rate".into(), Dim::LogUniform { lo: 1e-4, hi: 1e-2 }),
    ])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = StudyConfig { budget: 8, epochs: 5, jobs: 1, seed: 11, base: study_base() };
    let out = run_study(&space, &cfg, &tr, &va, Some(dir.path())).unwrap();
    let s = &out.study;
    assert_eq!(s.trials.len(), 8);
    assert!(s.trials.iter().any(|t| t.status == TrialStatus::Pruned));
    let best = s.best().expect("a complete trial");
    let first = *s.trials[0].history.last().unwrap();
    assert!(best.objective().unwrap() <= first, "best {:?} first {first}", best.objective());
    let mut running = f64::INFINITY;
    for t in &s.trials {
        if let Some(o) = t.objective().filter(|_| t.status == TrialStatus::Complete) {
            running = running.min(o);
        }
    }
    assert_eq!(running, best.objective().unwrap());

    let again = run_study(&space, &cfg, &tr, &va, None).unwrap();
    assert_eq!(again.study, out.study);
    let resumed = run_study(&space, &StudyConfig { budget: 9, ..cfg.clone() }, &tr, &va, Some(dir.path())).unwrap();
    assert_eq!(resumed.study.trials.len(), 9);
    assert_eq!(&resumed.study.trials[..8], &out.study.trials[..]);
    let text = std::fs::read_to_string(dir.path().join(STUDY_FILE)).unwrap();
    assert!(text.starts_with("trial\tepoch\tvalue\n"));
}

#[test]
fn concurrent_study_completes() {
    let (tr, va) = tiny_data();
    let space = SearchSpace::new(vec![("model.dropout".into(), Dim::Uniform { lo: 0.0, hi: 0.3 })]).unwrap();
    let cfg = StudyConfig { budget: 4, epochs: 2, jobs: 2, seed: 2, base: study_base() };
    let out = run_study(&space, &cfg, &tr, &va, None).unwrap();
    assert_eq!(out.study.trials.len(), 4);
    assert!(out.study.trials.iter().all(|t| t.status != TrialStatus::Running));
    let ids: Vec<usize> = out.study.trials.iter().map(|t| t.id).collect();
    assert_eq!(ids, vec![0, 1, 2, 3]);
}
