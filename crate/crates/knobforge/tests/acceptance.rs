//! End-to-end acceptance suite. Each test prints one pass line so a
//! full run reads as a checklist:
//!
//! ```text
//! cargo test --test acceptance -- --nocapture
//! ```

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use knobforge::advisor::{
    llm_refine_step, llm_sample_initial_configs, parse_config_response,
    parse_config_response_onto, AdvisorError, EnvironmentInfo, MockLlm, WorkloadType,
};
use knobforge::knobspace::{CoercionAction, ConfigurationSpace, Knob, KnobDomain, KnobValue};
use knobforge::metrics::{compute_odp, compute_tes, RunHistory};
use knobforge::optimize::{
    lhs_unit, llm_tuning_run, lml_and_grad, smac_run, vbo_run, BoSettings, GpParams,
    LlmRunSettings, TunerBudget,
};
use knobforge::pruning::{
    collect_observations, pruning_report, shapley_importance, ImportanceMethod,
    ImportanceRanking,
};
use knobforge::target::{
    ImportantKnob, ObjectiveKind, ResponseShape, Simulator, SynthSurfaceSpec, TuningTarget,
};

fn real_space(n: usize) -> ConfigurationSpace {
    let knobs = (0..n)
        .map(|i| Knob {
            name: format!("x{i}"),
            domain: KnobDomain::Real {
                min: 0.0,
                max: 10.0,
                default: 1.0,
            },
            unit: None,
            description: format!("synthetic knob {i}"),
            restart_required: false,
        })
        .collect();
    ConfigurationSpace::new(knobs).unwrap()
}

fn planted_surface(base: f64) -> SynthSurfaceSpec {
    SynthSurfaceSpec {
        seed: 0,
        base_objective: base,
        noise_sd: 0.0,
        important_knobs: vec![
            ImportantKnob {
                name: "x0".into(),
                weight: 20.0,
                optimum: 0.6,
                shape: ResponseShape::Quadratic,
            },
            ImportantKnob {
                name: "x1".into(),
                weight: 15.0,
                optimum: 0.4,
                shape: ResponseShape::Quadratic,
            },
            ImportantKnob {
                name: "x2".into(),
                weight: 10.0,
                optimum: 0.8,
                shape: ResponseShape::Saturating,
            },
        ],
        interaction_pairs: vec![],
        objective_kind: ObjectiveKind::ThroughputTps,
    }
}

fn sample_env() -> EnvironmentInfo {
    EnvironmentInfo {
        engine_name: "mysql".into(),
        engine_version: "8.0".into(),
        cpu_count: 16,
        memory_bytes: 64 << 30,
        workload_type: WorkloadType::Oltp,
        read_write_ratio: 0.8,
        data_size_bytes: 20 << 30,
        extra: String::new(),
    }
}

fn hill_climb_for(sim: &Simulator) -> MockLlm {
    let optimum = sim.oracle_optimum_config();
    let optima: BTreeMap<String, f64> = sim
        .spec()
        .important_knobs
        .iter()
        .map(|ik| {
            let v = match optimum.get(&ik.name).unwrap() {
                KnobValue::Real(v) => *v,
                KnobValue::Int(v) => *v as f64,
                _ => unreachable!("numeric knobs only"),
            };
            (ik.name.clone(), v)
        })
        .collect();
    MockLlm::hill_climb(optima)
}

/// 1. Published ODP/TES columns fed through the ratio formulas
///    reproduce every derivable printed percentage within ±0.02 pp.
#[test]
fn acceptance_1_metric_formula_fidelity() {
    let start = Instant::now();

    // (base TES, initialized TES) -> printed speedup percentage
    let speedups: &[(f64, f64, f64)] = &[
        (316.0, 316.0, 0.00),
        (316.0, 279.0, 11.71),
        (316.0, 176.0, 44.30),
        (316.0, 84.0, 73.41),
        (316.0, 90.0, 71.51),
        (316.0, 2.0, 99.37),
        (316.0, 100.0, 68.35),
        (99.0, 313.0, -216.16),
    ];
    for &(orig, init, printed) in speedups {
        let got = 100.0 * knobforge::compute_speedup(orig, init).unwrap();
        assert!(
            (got - printed).abs() <= 0.02,
            "speedup({orig}, {init}) = {got:.4} vs printed {printed}"
        );
    }

    // (base ODP, initialized ODP) -> printed performance-effect percentage
    let pes: &[(f64, f64, f64)] = &[
        (154.73, 154.73, 0.00),
        (154.73, 154.37, -0.23),
        (154.73, 127.68, -17.48),
        (154.73, 154.68, -0.03),
        (154.73, 153.58, -0.74),
    ];
    for &(orig, init, printed) in pes {
        let got = 100.0 * knobforge::compute_pe(orig, init).unwrap();
        assert!(
            (got - printed).abs() <= 0.02,
            "pe({orig}, {init}) = {got:.4} vs printed {printed}"
        );
    }

    assert!(start.elapsed().as_secs() < 1);
    println!("ACCEPTANCE 1 (metric-formula fidelity): pass");
}

/// 2. Both surrogate optimizers find the planted optimum of a 10-knob
///    noise-free simulator (3 important knobs) within 5% in >= 9 of 10
///    seeds.
#[test]
fn acceptance_2_optimizer_oracle_convergence() {
    let start = Instant::now();
    let space = real_space(10);
    let settings = BoSettings::default();

    let mut vbo_hits = 0;
    let mut smac_hits = 0;
    for seed in 0..10u64 {
        let mut sim = Simulator::new(planted_surface(100.0), space.clone()).unwrap();
        let oracle = sim.oracle_optimum_value();
        let budget = TunerBudget {
            max_iterations: 60,
            init_points: 15,
            rng_seed: seed,
        };
        let h = vbo_run(&mut sim, &space, &budget, None, &settings, "a2", "vbo").unwrap();
        if compute_odp(&h).unwrap() >= 0.95 * oracle {
            vbo_hits += 1;
        }

        let mut sim = Simulator::new(planted_surface(100.0), space.clone()).unwrap();
        let budget = TunerBudget {
            max_iterations: 80,
            init_points: 20,
            rng_seed: seed,
        };
        let h = smac_run(&mut sim, &space, &budget, None, &settings, "a2", "smac").unwrap();
        if compute_odp(&h).unwrap() >= 0.95 * oracle {
            smac_hits += 1;
        }
    }
    assert!(vbo_hits >= 9, "vbo within 5% in only {vbo_hits}/10 seeds");
    assert!(smac_hits >= 9, "smac within 5% in only {smac_hits}/10 seeds");

    assert!(start.elapsed().as_secs() < 120);
    println!("ACCEPTANCE 2 (optimizer oracle convergence): pass");
}

/// 3. Seeding the GP optimizer with 10 mock-sampled configurations
///    accelerates tuning (mean speedup >= 0.5) without hurting the
///    final result (|mean pe| <= 0.05), over 5 seeds.
#[test]
fn acceptance_3_initialization_speedup() {
    let start = Instant::now();
    let space = real_space(3);
    let settings = BoSettings::default();
    let env = sample_env();

    // ten distinct starting configurations from the hill-climb mock
    let mut sim = Simulator::new(planted_surface(400.0), space.clone()).unwrap();
    let default_feedback = sim.evaluate(&space.default_configuration()).unwrap();
    let mut mock = hill_climb_for(&sim);
    let samples =
        llm_sample_initial_configs(&mut mock, &space, &env, &default_feedback, 10, 50, "mock")
            .unwrap();
    assert_eq!(samples.configs.len(), 10);
    assert!(!samples.exhausted);

    let mut speedups = Vec::new();
    let mut pes = Vec::new();
    for seed in 0..5u64 {
        let budget = TunerBudget {
            max_iterations: 50,
            init_points: 10,
            rng_seed: seed,
        };
        let mut sim = Simulator::new(planted_surface(400.0), space.clone()).unwrap();
        let plain = vbo_run(&mut sim, &space, &budget, None, &settings, "a3", "vbo").unwrap();
        let mut sim = Simulator::new(planted_surface(400.0), space.clone()).unwrap();
        let seeded = vbo_run(
            &mut sim,
            &space,
            &budget,
            Some(&samples.configs),
            &settings,
            "a3",
            "vbo+init",
        )
        .unwrap();

        let tes_orig = compute_tes(&plain).unwrap() as f64;
        let tes_init = compute_tes(&seeded).unwrap() as f64;
        speedups.push(knobforge::compute_speedup(tes_orig, tes_init).unwrap());
        let odp_orig = compute_odp(&plain).unwrap();
        let odp_init = compute_odp(&seeded).unwrap();
        pes.push(knobforge::compute_pe(odp_orig, odp_init).unwrap());
    }
    let mean_speedup = speedups.iter().sum::<f64>() / speedups.len() as f64;
    let mean_pe = pes.iter().sum::<f64>() / pes.len() as f64;
    assert!(
        mean_speedup >= 0.5,
        "mean speedup {mean_speedup:.3} ({speedups:?})"
    );
    assert!(mean_pe.abs() <= 0.05, "mean pe {mean_pe:.3} ({pes:?})");

    assert!(start.elapsed().as_secs() < 180);
    println!("ACCEPTANCE 3 (initialization speedup): pass");
}

/// 4. The LLM refinement loop with the hill-climb mock converges near
///    the oracle in far fewer iterations than surrogate search, with a
///    monotone best-so-far curve.
#[test]
fn acceptance_4_llm_loop_efficiency() {
    let start = Instant::now();
    let space = real_space(3);
    let mut sim = Simulator::new(planted_surface(400.0), space.clone()).unwrap();
    let oracle = sim.oracle_optimum_value();
    let mut mock = hill_climb_for(&sim);
    let history = llm_tuning_run(
        &mut sim,
        &space,
        &sample_env(),
        &mut mock,
        &LlmRunSettings::default(),
        "a4",
        "llm",
    )
    .unwrap();

    let odp = compute_odp(&history).unwrap();
    assert!(odp >= 0.98 * oracle, "odp {odp} vs oracle {oracle}");
    let tes = compute_tes(&history).unwrap();
    assert!(tes <= 15, "tes {tes}");
    let best = history.best_so_far();
    assert!(best.windows(2).all(|w| w[1] >= w[0]));

    assert!(start.elapsed().as_secs() < 30);
    println!("ACCEPTANCE 4 (llm-loop efficiency): pass");
}

/// 5. Importance estimation recovers a planted 3-knob subset of a
///    20-knob space in >= 9 of 10 seeds, and the selection-comparison
///    report reproduces the expert-vs-LLM overlap fixture exactly.
#[test]
fn acceptance_5_pruning_recovery() {
    let start = Instant::now();
    let space = real_space(20);
    let spec = SynthSurfaceSpec {
        seed: 0,
        base_objective: 100.0,
        noise_sd: 0.0,
        important_knobs: vec![
            ImportantKnob {
                name: "x0".into(),
                weight: 30.0,
                optimum: 0.5,
                shape: ResponseShape::Quadratic,
            },
            ImportantKnob {
                name: "x1".into(),
                weight: 25.0,
                optimum: 0.5,
                shape: ResponseShape::Quadratic,
            },
            ImportantKnob {
                name: "x2".into(),
                weight: 20.0,
                optimum: 0.5,
                shape: ResponseShape::Quadratic,
            },
        ],
        interaction_pairs: vec![],
        objective_kind: ObjectiveKind::ThroughputTps,
    };

    let mut hits = 0;
    for seed in 0..10u64 {
        let mut sim = Simulator::new(spec.clone(), space.clone()).unwrap();
        let collected = collect_observations(&mut sim, &space, 200, seed).unwrap();
        let ranking = shapley_importance(&collected.observations, &space, 256, seed).unwrap();
        let top3: std::collections::BTreeSet<&str> =
            ranking.entries[..3].iter().map(|(n, _)| n.as_str()).collect();
        if top3 == std::collections::BTreeSet::from(["x0", "x1", "x2"]) {
            hits += 1;
        }
    }
    assert!(hits >= 9, "planted knobs recovered in only {hits}/10 seeds");

    // ten-knob expert vs LLM selection fixture: 7 shared, 3 apart
    let fixture = |names: &[&str]| ImportanceRanking {
        entries: names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), (names.len() - i) as f64))
            .collect(),
        method: ImportanceMethod::Llm,
    };
    let expert = fixture(&[
        "innodb_buffer_pool_size",
        "tmp_table_size",
        "max_heap_table_size",
        "innodb_log_file_size",
        "innodb_flush_log_at_trx_commit",
        "query_cache_size",
        "table_open_cache",
        "sort_buffer_size",
        "max_connections",
        "key_buffer_size",
    ]);
    let llm = fixture(&[
        "innodb_buffer_pool_size",
        "tmp_table_size",
        "max_heap_table_size",
        "innodb_log_file_size",
        "innodb_flush_log_at_trx_commit",
        "query_cache_size",
        "table_open_cache",
        "innodb_io_capacity",
        "join_buffer_size",
        "thread_cache_size",
    ]);
    let report = pruning_report(&[("llm", &llm)], &expert, 10).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.overlap, 7);
    let set = |v: &[String]| v.iter().cloned().collect::<std::collections::BTreeSet<_>>();
    assert_eq!(
        set(&row.only_in_ranking),
        set(&[
            "innodb_io_capacity".into(),
            "join_buffer_size".into(),
            "thread_cache_size".into()
        ])
    );
    assert_eq!(
        set(&row.only_in_reference),
        set(&[
            "sort_buffer_size".into(),
            "max_connections".into(),
            "key_buffer_size".into()
        ])
    );

    assert!(start.elapsed().as_secs() < 60);
    println!("ACCEPTANCE 5 (pruning recovery): pass");
}

/// 6. Reply-parsing failure modes: fractional values round, negatives
///    clamp, JSON-free replies fail-and-retry, and a malformed client
///    ends the loop cleanly after 5 consecutive failures.
#[test]
fn acceptance_6_parser_robustness() {
    let start = Instant::now();
    let space = ConfigurationSpace::new(vec![Knob {
        name: "k000".into(),
        domain: KnobDomain::Integer {
            min: 0,
            max: 100,
            default: 50,
        },
        unit: None,
        description: "integer knob".into(),
        restart_required: false,
    }])
    .unwrap();
    let default = space.default_configuration();

    // 7.5 on an integer [0,100] knob rounds to 8, with a log entry
    let (config, log) =
        parse_config_response_onto(&space, &default, r#"{"k000": 7.5}"#).unwrap();
    assert_eq!(config.get("k000"), Some(&KnobValue::Int(8)));
    assert!(log
        .iter()
        .any(|c| c.knob == "k000" && matches!(c.action, CoercionAction::Rounded { to: 8, .. })));

    // a negative value on a non-negative knob clamps to 0, logged
    let (config, log) = parse_config_response_onto(&space, &default, r#"{"k000": -3}"#).unwrap();
    assert_eq!(config.get("k000"), Some(&KnobValue::Int(0)));
    assert!(log.iter().any(|c| c.knob == "k000"
        && matches!(&c.action, CoercionAction::Clamped { to, .. } if *to == KnobValue::Int(0))));

    // no JSON at all is a parse failure...
    let err = parse_config_response(&space, "raise the buffer pool a bit").unwrap_err();
    assert!(matches!(err, AdvisorError::ParseFailure { .. }));

    // ...which triggers a retry that can succeed
    let env = sample_env();
    let feedback = knobforge::target::Feedback {
        objective_kind: ObjectiveKind::ThroughputTps,
        objective: 100.0,
        internal_metrics: BTreeMap::new(),
        eval_duration_seconds: 0.0,
    };
    let mut mock = MockLlm::scripted(vec![
        "no structured output here".into(),
        r#"{"k000": 60}"#.into(),
    ]);
    let (config, _) =
        llm_refine_step(&mut mock, &space, &env, &default, &feedback, 1, "mock").unwrap();
    assert_eq!(config.get("k000"), Some(&KnobValue::Int(60)));
    assert_eq!(mock.calls(), 2);

    // 5 consecutive refinement failures end the tuning loop cleanly
    let sim_space = real_space(2);
    let spec = SynthSurfaceSpec {
        important_knobs: vec![],
        ..planted_surface(100.0)
    };
    let mut sim = Simulator::new(spec, sim_space.clone()).unwrap();
    let mut mock = MockLlm::malformed();
    let settings = LlmRunSettings {
        retries: 0,
        ..Default::default()
    };
    let history =
        llm_tuning_run(&mut sim, &sim_space, &env, &mut mock, &settings, "a6", "llm").unwrap();
    assert_eq!(history.observations.len(), 1);
    assert_eq!(mock.calls(), 5);

    assert!(start.elapsed().as_secs() < 1);
    println!("ACCEPTANCE 6 (parser robustness): pass");
}

/// 7. Two identical CLI tuning invocations produce byte-identical JSONL
///    histories, and those files round-trip through the report command.
#[test]
fn acceptance_7_determinism_and_persistence() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let space = real_space(3);
    space.save_catalog(dir.path().join("catalog.json")).unwrap();
    std::fs::write(
        dir.path().join("surface.json"),
        serde_json::to_string(&planted_surface(400.0)).unwrap(),
    )
    .unwrap();
    let session = serde_json::json!({
        "catalog_path": "catalog.json",
        "target": {"simulator": {"surface_path": "surface.json"}},
        "objective_kind": "throughput_tps",
        "llm": {"mock": {"policy": "hill_climb_oracle"}},
        "environment": {
            "engine_name": "mysql",
            "engine_version": "8.0",
            "cpu_count": 8,
            "memory_bytes": 1073741824u64,
            "workload_type": "OLTP",
            "read_write_ratio": 0.8,
            "data_size_bytes": 1073741824u64
        },
        "seed": 42
    });
    let session_path = dir.path().join("session.json");
    std::fs::write(&session_path, session.to_string()).unwrap();

    let bin = env!("CARGO_BIN_EXE_knobforge");
    let tune = |out: &str| {
        let status = Command::new(bin)
            .arg("--session")
            .arg(&session_path)
            .arg("--output-dir")
            .arg(dir.path().join(out))
            .arg("--quiet")
            .args(["tune", "--method", "llm", "--budget", "12"])
            .status()
            .unwrap();
        assert!(status.success(), "tune into {out} failed");
        dir.path().join(out).join("history-llm.jsonl")
    };
    let first = tune("out1");
    let second = tune("out2");

    let bytes_a = std::fs::read(&first).unwrap();
    let bytes_b = std::fs::read(&second).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "histories differ between identical runs");

    // the persisted history parses back into an equal in-memory value
    let loaded = RunHistory::load_jsonl(&first).unwrap();
    let roundtrip = dir.path().join("roundtrip.jsonl");
    loaded.save_jsonl(&roundtrip).unwrap();
    assert_eq!(std::fs::read(&roundtrip).unwrap(), bytes_a);

    // and feeds the report command
    let output = Command::new(bin)
        .arg("report")
        .arg(&first)
        .arg("--base")
        .arg(&second)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("llm"), "report output:\n{text}");

    assert!(start.elapsed().as_secs() < 30);
    println!("ACCEPTANCE 7 (determinism & persistence): pass");
}

fn is_stratified(samples: &[Vec<f64>], dim: usize) -> bool {
    let n = samples.len();
    (0..dim).all(|d| {
        let mut hit = vec![false; n];
        for s in samples {
            let stratum = ((s[d] * n as f64).floor() as usize).min(n - 1);
            if hit[stratum] {
                return false;
            }
            hit[stratum] = true;
        }
        hit.iter().all(|&h| h)
    })
}

/// 8. Numerical soundness of the optimizer internals: analytic GP
///    gradients match finite differences, the acquisition hits its
///    closed-form landmarks, and LHS stays stratified per dimension.
#[test]
fn acceptance_8_numerical_soundness() {
    let start = Instant::now();

    // GP log-marginal-likelihood gradient vs central finite differences
    // on randomized 3-point datasets
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let dim = 2;
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let outputs: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let params = GpParams {
            log_lengthscales: (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect(),
            log_signal_variance: rng.gen::<f64>() - 0.5,
            log_noise_variance: -2.0 + rng.gen::<f64>(),
        };
        let (_, grad) = lml_and_grad(&inputs, &outputs, &params).unwrap();

        let h = 1e-5;
        let mut flat = params.log_lengthscales.clone();
        flat.push(params.log_signal_variance);
        flat.push(params.log_noise_variance);
        for (i, g) in grad.iter().enumerate() {
            let eval = |delta: f64| {
                let mut v = flat.clone();
                v[i] += delta;
                let p = GpParams {
                    log_lengthscales: v[..dim].to_vec(),
                    log_signal_variance: v[dim],
                    log_noise_variance: v[dim + 1],
                };
                lml_and_grad(&inputs, &outputs, &p).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = g.abs().max(fd.abs()).max(1e-8);
            assert!(
                (g - fd).abs() / scale <= 1e-4,
                "param {i}: analytic {g} vs fd {fd}"
            );
        }
    }

    // acquisition landmarks
    assert_eq!(knobforge::expected_improvement(5.0, 0.0, 5.0, true), 0.0);
    let ei = knobforge::expected_improvement(5.0, 1.0, 5.0, true);
    let expect = 1.0 / std::f64::consts::TAU.sqrt();
    assert!((ei - expect).abs() <= 1e-9, "ei {ei} vs 1/sqrt(2pi) {expect}");

    // LHS stratification for n in {4, 100, 6000}
    for &n in &[4usize, 100, 6000] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let samples = lhs_unit(n, 5, &mut rng);
        assert!(is_stratified(&samples, 5), "n = {n} not stratified");
    }

    assert!(start.elapsed().as_secs() < 60);
    println!("ACCEPTANCE 8 (numerical soundness): pass");
}
