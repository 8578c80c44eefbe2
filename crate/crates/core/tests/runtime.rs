mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use agency::consensus::make_tally;
use agency::problem::{Attachment, ProblemError};
use agency::runtime::compare::{concatenate_realizations, REALIZATION_HEADER};
use agency::runtime::testing::{FaultInjectingBackend, FaultPlan, InstrumentedBackend};
use agency::runtime::{
    preprocess, Agency, AgencyError, AgencyOptions, AgentInstructions, AgentRole, BackendConfig,
    BackendError, SimulatedBackend, Stage,
};
use agency::sim::{sample_realization, CompareMode};
use serde_json::json;

use common::{profile, statement};

fn config(max_parallel: usize) -> BackendConfig {
    BackendConfig {
        max_parallel,
        ..BackendConfig::simulated()
    }
}

fn agency(backend: impl agency::runtime::ModelBackend + 'static, max_parallel: usize) -> Agency {
    Agency::new(Arc::new(backend), config(max_parallel)).unwrap()
}

#[tokio::test]
async fn realizations_come_back_in_index_order_under_random_latency() {
    let p = profile("plate-convection");
    let backend = SimulatedBackend::new(p.clone()).with_latency(Duration::from_millis(25));
    let t = agency(backend, 8)
        .run(&statement("plate-convection"), 12)
        .await
        .unwrap();
    let indices: Vec<usize> = t.realizations.iter().map(|r| r.index).collect();
    assert_eq!(indices, (1..=12).collect::<Vec<_>>());
    for r in &t.realizations {
        assert_eq!(
            r.class_label,
            sample_realization(&p, r.index).class_label,
            "realization {}",
            r.index
        );
        assert!(!r.part2_model.is_empty(), "four-part layout not recognized");
    }
}

#[tokio::test]
async fn in_flight_solves_never_exceed_max_parallel() {
    for max_parallel in [1, 3, 5] {
        let inner = SimulatedBackend::new(profile("pinned-assembly"))
            .with_latency(Duration::from_millis(5));
        let backend = Arc::new(InstrumentedBackend::new(inner));
        let a = Agency::new(backend.clone(), config(max_parallel)).unwrap();
        a.run(&statement("pinned-assembly"), 10).await.unwrap();
        let peak = backend.peak_in_flight();
        assert!(peak <= max_parallel, "peak {peak} > {max_parallel}");
        assert!(
            peak >= max_parallel.min(2),
            "solves did not overlap (peak {peak})"
        );
    }
}

#[tokio::test]
async fn every_solve_runs_in_its_own_session_with_the_same_prompt() {
    let backend = Arc::new(InstrumentedBackend::new(SimulatedBackend::new(profile(
        "pinned-assembly",
    ))));
    let a = Agency::new(backend.clone(), config(4)).unwrap();
    a.run(&statement("pinned-assembly"), 6).await.unwrap();
    a.run(&statement("pinned-assembly"), 6).await.unwrap();
    let calls = backend.calls();
    let solves: Vec<_> = calls
        .iter()
        .filter(|c| c.role == AgentRole::Solve)
        .collect();
    assert_eq!(solves.len(), 12);
    let sessions: BTreeSet<_> = calls.iter().map(|c| c.session_id.as_str()).collect();
    assert_eq!(sessions.len(), calls.len(), "a session id was reused");
    let prompt = &solves[0].user_parts;
    assert_eq!(prompt.len(), 1);
    for s in &solves {
        assert_eq!(
            &s.user_parts, prompt,
            "solve {:?} saw other context",
            s.index
        );
        assert!(!s.user_parts[0].contains(REALIZATION_HEADER));
    }
}

#[tokio::test]
async fn compare_receives_the_realizations_byte_for_byte() {
    let backend = Arc::new(InstrumentedBackend::new(SimulatedBackend::new(profile(
        "plate-convection",
    ))));
    let a = Agency::new(backend.clone(), config(4)).unwrap();
    let stmt = statement("plate-convection");
    let t = a.run(&stmt, 5).await.unwrap();
    let compares: Vec<_> = backend
        .calls()
        .into_iter()
        .filter(|c| c.role == AgentRole::Compare)
        .collect();
    assert_eq!(compares.len(), 1);
    let prep = preprocess(&stmt).unwrap();
    assert_eq!(
        compares[0].user_parts,
        vec![prep.prompt_text, concatenate_realizations(&t.realizations)]
    );
}

#[tokio::test]
async fn transient_failures_below_the_attempt_budget_are_retried() {
    let max_attempts = config(1).retry.max_attempts;
    let plan = FaultPlan::default().transient_solve(2, max_attempts - 1);
    let backend = Arc::new(FaultInjectingBackend::new(
        SimulatedBackend::new(profile("pinned-assembly")),
        plan,
    ));
    let a = Agency::new(backend.clone(), config(4)).unwrap();
    let t = a.run(&statement("pinned-assembly"), 3).await.unwrap();
    assert_eq!(t.n, 3);
    assert_eq!(backend.attempts(2), max_attempts);
    assert_eq!(
        t.realizations[1].backend_metadata["attempts"],
        json!(max_attempts)
    );
    assert_eq!(t.realizations[0].backend_metadata["attempts"], json!(1));
}

#[tokio::test]
async fn exhausting_the_attempt_budget_fails_the_realization() {
    let max_attempts = config(1).retry.max_attempts;
    let plan = FaultPlan::default().transient_solve(2, max_attempts);
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("pinned-assembly")), plan);
    let err = agency(backend, 4)
        .run(&statement("pinned-assembly"), 3)
        .await
        .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Solve));
    match err.root() {
        AgencyError::PartialDisallowed {
            requested: 3,
            failures,
        } => {
            assert_eq!(failures.len(), 1);
            assert_eq!((failures[0].index, failures[0].attempts), (2, max_attempts));
        }
        other => panic!("unexpected {other}"),
    }
}

#[tokio::test]
async fn partial_runs_keep_survivors_and_record_failures() {
    let plan = FaultPlan::default().fail_solve(2).fail_solve(4);
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("pinned-assembly")), plan);
    let a = agency(backend, 4).with_options(AgencyOptions {
        allow_partial: true,
        ..Default::default()
    });
    let t = a.run(&statement("pinned-assembly"), 5).await.unwrap();
    assert_eq!(t.n, 3);
    let requested: Vec<_> = t
        .realizations
        .iter()
        .map(|r| {
            r.backend_metadata
                .get("requested_index")
                .cloned()
                .unwrap_or(json!(r.index))
        })
        .collect();
    assert_eq!(requested, vec![json!(1), json!(3), json!(5)]);
    let failed = &t.agency_config_snapshot["failed_realizations"];
    assert_eq!(failed.as_array().unwrap().len(), 2);
    assert_eq!(failed[0]["index"], json!(2));
    assert!(t.recommendation.is_some());
}

#[tokio::test]
async fn all_failing_solves_abort_even_when_partial_is_allowed() {
    let plan = (1..=3).fold(FaultPlan::default(), |p, i| p.fail_solve(i));
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("pinned-assembly")), plan);
    let a = agency(backend, 4).with_options(AgencyOptions {
        allow_partial: true,
        ..Default::default()
    });
    let err = a.run(&statement("pinned-assembly"), 3).await.unwrap_err();
    assert!(
        matches!(err.root(), AgencyError::AllFailed(f) if f.len() == 3),
        "{err}"
    );
}

#[tokio::test]
async fn empty_responses_are_errors_not_blank_realizations() {
    let plan = FaultPlan::default().empty_solve(1);
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("pinned-assembly")), plan);
    let err = agency(backend, 1)
        .run(&statement("pinned-assembly"), 1)
        .await
        .unwrap_err();
    match err.root() {
        AgencyError::PartialDisallowed { failures, .. } | AgencyError::AllFailed(failures) => {
            assert!(failures[0]
                .error
                .contains(&BackendError::EmptyResponse.to_string()));
        }
        other => panic!("unexpected {other}"),
    }
}

#[tokio::test]
async fn malformed_compare_output_degrades_to_raw_text_with_a_warning() {
    let garbage = "I could not decide between the solutions.";
    let plan = FaultPlan::default().compare_answer(garbage);
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("plate-convection")), plan);
    let t = agency(backend, 4)
        .run(&statement("plate-convection"), 4)
        .await
        .unwrap();
    let rec = t.recommendation.as_ref().unwrap();
    assert_eq!(rec.recommended_solution, garbage);
    assert!(rec.per_realization_assessments.is_empty());
    let warnings = t.agency_config_snapshot["compare_warnings"]
        .as_array()
        .unwrap();
    assert!(!warnings.is_empty());
    assert_eq!(t.n, 4, "realizations were lost");
}

#[tokio::test]
async fn compare_failure_is_reported_at_the_compare_stage() {
    let plan = FaultPlan::default().fail_compare();
    let backend =
        FaultInjectingBackend::new(SimulatedBackend::new(profile("plate-convection")), plan);
    let err = agency(backend, 4)
        .run(&statement("plate-convection"), 3)
        .await
        .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Compare));
    assert!(matches!(err.root(), AgencyError::CompareFailed { .. }));
}

#[tokio::test]
async fn oversized_attachments_are_rejected_before_any_call() {
    let backend = Arc::new(InstrumentedBackend::new(SimulatedBackend::new(profile(
        "plate-convection",
    ))));
    let a = Agency::new(backend.clone(), config(2))
        .unwrap()
        .with_options(AgencyOptions {
            attachment_cap: Some(1024),
            ..Default::default()
        });
    let mut stmt = statement("plate-convection");
    stmt.attachments.push(Attachment {
        filename: "plate.png".into(),
        media_type: "image/png".into(),
        data: vec![0; 2048],
    });
    let err = a.run(&stmt, 3).await.unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Preprocess));
    assert!(matches!(
        err.root(),
        AgencyError::AttachmentTooLarge {
            size: 2048,
            cap: 1024,
            ..
        }
    ));
    assert!(err.is_validation());
    assert!(backend.calls().is_empty());
}

#[tokio::test]
async fn invalid_inputs_are_validation_errors() {
    let a = agency(SimulatedBackend::new(profile("plate-convection")), 2);
    let err = a.run(&statement("plate-convection"), 0).await.unwrap_err();
    assert!(matches!(err.root(), AgencyError::ZeroRealizations));
    let mut stmt = statement("plate-convection");
    stmt.qoi.clear();
    let err = a.run(&stmt, 2).await.unwrap_err();
    assert!(matches!(err.root(), AgencyError::InvalidStatement(_)) && err.is_validation());
    let wrong = AgentInstructions::default_compare();
    let prep = preprocess(&statement("plate-convection")).unwrap();
    assert!(matches!(
        a.solve_once(&prep, &wrong, 1).await,
        Err(AgencyError::InvalidInstructions(_))
    ));
    assert!(matches!(
        a.compare(&prep, &[], &AgentInstructions::default_compare())
            .await,
        Err(AgencyError::Problem(ProblemError::NoRealizations))
    ));
    assert!(Agency::new(
        Arc::new(SimulatedBackend::new(profile("plate-convection"))),
        config(0)
    )
    .is_err());
}

#[tokio::test]
async fn single_realization_skips_compare_unless_forced() {
    let t = agency(SimulatedBackend::new(profile("plate-convection")), 1)
        .run(&statement("plate-convection"), 1)
        .await
        .unwrap();
    assert!(t.recommendation.is_none());
    let t = agency(SimulatedBackend::new(profile("plate-convection")), 1)
        .with_options(AgencyOptions {
            force_compare: true,
            ..Default::default()
        })
        .run(&statement("plate-convection"), 1)
        .await
        .unwrap();
    assert!(t.recommendation.is_some());
}

#[tokio::test]
async fn dominant_class_scenario_recommends_the_prevalent_class() {
    // one correct class at 0.9: the run should look like {b:9, e:1} or better
    let p = profile("plate-convection");
    let t = agency(SimulatedBackend::new(p.clone()), 4)
        .run(&statement("plate-convection"), 10)
        .await
        .unwrap();
    let tally = make_tally(&t.class_labels().unwrap()).unwrap();
    let rec = t.recommendation.unwrap();
    let prevalent_text = &p.class(tally.prevalent()).unwrap().canonical_answer_text;
    assert!(rec.recommended_solution.contains(prevalent_text.as_str()));
}

#[tokio::test]
async fn recognizable_minority_class_is_recommended_in_recognition_mode() {
    let p = profile("apple-cooling");
    let right = &p.class("with_radiation").unwrap().canonical_answer_text;
    let mut checked = 0;
    for seed in 0..200 {
        let seeded = p.with_seed(seed);
        let labels: Vec<_> = (1..=10)
            .map(|i| sample_realization(&seeded, i).class_label.unwrap())
            .collect();
        let tally = make_tally(&labels).unwrap();
        if tally.count("with_radiation") == 0 || tally.prevalent() == "with_radiation" {
            continue;
        }
        checked += 1;
        let backend =
            SimulatedBackend::new(seeded.clone()).with_compare_mode(CompareMode::Recognition);
        let t = agency(backend, 4)
            .run(&statement("apple-cooling"), 10)
            .await
            .unwrap();
        let rec = t.recommendation.unwrap();
        assert!(
            rec.recommended_solution.contains(right.as_str()),
            "seed {seed}: {tally}"
        );

        let backend = SimulatedBackend::new(seeded);
        let t = agency(backend, 4)
            .run(&statement("apple-cooling"), 10)
            .await
            .unwrap();
        assert!(!t
            .recommendation
            .unwrap()
            .recommended_solution
            .contains(right.as_str()));
        if checked == 5 {
            break;
        }
    }
    assert_eq!(checked, 5, "too few seeds with a minority correct class");
}
