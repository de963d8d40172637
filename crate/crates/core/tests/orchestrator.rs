use std::sync::OnceLock;

use labrun_core::checker::FindingKind;
use labrun_core::detector::Detector;
use labrun_core::env::EnvConfig;
use labrun_core::fixtures;
use labrun_core::ir::{render_program, ProtocolProgram};
use labrun_core::orchestrator::{
    execute_pipeline, AlertOutcome, AlertState, FixtureProvider, OrchestratorError, PipelineError,
    Resolution, RunInput, RunSession,
};
use labrun_core::sim::{mass_balance, new_world, AlertCause, EventKind, FaultInjection, RunStatus};

fn detector() -> Detector {
    static D: OnceLock<Detector> = OnceLock::new();
    D.get_or_init(|| Detector::standard(&EnvConfig::default_lab()).unwrap())
        .clone()
}

const HEPG2: &str = "How to change the medium for HepG2 cells in detail?";

fn query(q: &str, faults: Vec<FaultInjection>) -> Result<RunSession, PipelineError> {
    execute_pipeline(
        &RunInput::Query(q.into()),
        &EnvConfig::default_lab(),
        &FixtureProvider::builtin(),
        detector(),
        faults,
    )
}

fn suspended(scenario: u8, index: usize) -> RunSession {
    let s = query(HEPG2, vec![FaultInjection::new(scenario, index).unwrap()]).unwrap();
    assert_eq!(s.status(), RunStatus::AwaitingReplan);
    s
}

fn remaining(s: &RunSession) -> String {
    let p = s.executor().program();
    render_program(&ProtocolProgram::new(
        p.instructions[s.executor().pc()..].to_vec(),
    ))
}

#[test]
fn hepg2_query_runs_to_completion_and_conserves_liquid() {
    let s = query(HEPG2, vec![]).unwrap();
    assert_eq!(s.status(), RunStatus::Completed);
    assert_eq!(s.transcript(), Some(fixtures::MEDIUM_CHANGE));
    assert!(s.alerts().is_empty());
    let env = EnvConfig::default_lab();
    let before = mass_balance(&new_world(&env));
    let after = mass_balance(s.executor().world());
    for (k, v) in &before {
        assert!(
            (after.get(k).copied().unwrap_or(0.0) - v).abs() < 1e-9,
            "{k}"
        );
    }
    let total = |m: &std::collections::BTreeMap<String, f64>| m.values().sum::<f64>();
    assert!((total(&before) - total(&after)).abs() < 1e-9);
    assert!(after.keys().all(|k| before.contains_key(k)));
}

#[test]
fn scenario5_suspends_with_matching_alert() {
    let s = suspended(5, 2);
    let alert = s.open_alert().unwrap();
    assert_eq!(alert.index, Some(2));
    assert_eq!(
        alert.cause,
        AlertCause::Anomaly {
            scenario_id: Some(5)
        }
    );
    let report = alert.report.as_ref().unwrap();
    assert!(report.confirmed);
    assert_eq!(report.scenario_id, Some(5));
}

#[test]
fn empty_protocol_is_a_completed_noop() {
    let s = execute_pipeline(
        &RunInput::Program(String::new()),
        &EnvConfig::default_lab(),
        &FixtureProvider::builtin(),
        detector(),
        vec![],
    )
    .unwrap();
    assert_eq!(s.status(), RunStatus::Completed);
    assert!(!s
        .events()
        .iter()
        .any(|e| matches!(e.kind, EventKind::ActionStarted { .. })));
}

#[test]
fn intake_failures_are_classified() {
    assert!(matches!(
        query("How to resuscitate CHO cells in detail?", vec![]),
        Err(PipelineError::ProviderFailure(_))
    ));
    let parse = execute_pipeline(
        &RunInput::Program("shake(".into()),
        &EnvConfig::default_lab(),
        &FixtureProvider::builtin(),
        detector(),
        vec![],
    );
    assert!(matches!(parse, Err(PipelineError::ParseFailure(_))));
    let err = query("How to freeze and store HUVEC cells in detail?", vec![])
        .err()
        .unwrap();
    let f = err
        .findings()
        .iter()
        .find(|f| f.kind == FindingKind::PreconditionViolation)
        .unwrap();
    assert_eq!(f.index, 7);
}

#[test]
fn abort_resolution_finalizes() {
    let mut s = suspended(2, 1);
    let id = s.open_alert().unwrap().id;
    s.resolve_alert(id, &Resolution::Abort).unwrap();
    assert_eq!(s.status(), RunStatus::Aborted);
    assert_eq!(
        s.alerts()[0].state,
        AlertState::Resolved(AlertOutcome::Aborted)
    );
    assert!(!s.executor().world().pipette.tip_attached);
    assert_eq!(
        s.resolve_alert(id, &Resolution::Resume),
        Err(OrchestratorError::AlertNotOpen(id))
    );
    assert_eq!(
        s.resolve_alert(9, &Resolution::Resume),
        Err(OrchestratorError::UnknownAlert(9))
    );
}

#[test]
fn resume_after_operator_fix_completes() {
    let mut s = suspended(2, 1);
    let id = s.open_alert().unwrap().id;
    s.resolve_alert(id, &Resolution::Resume).unwrap();
    assert_eq!(s.run(), RunStatus::Completed);
    assert_eq!(
        s.alerts()[0].state,
        AlertState::Resolved(AlertOutcome::Resumed)
    );
}

#[test]
fn replan_continues_from_current_world() {
    let mut s = suspended(2, 1);
    let id = s.open_alert().unwrap().id;
    let clock = s.executor().world().clock;
    let text = remaining(&s);
    s.resolve_alert(id, &Resolution::ReplaceProgram { program: text })
        .unwrap();
    assert_eq!(s.status(), RunStatus::Running);
    assert_eq!(s.executor().revision(), 1);
    assert_eq!(s.executor().world().clock, clock);
    assert_eq!(s.run(), RunStatus::Completed);
    let checks = s
        .events()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::CheckCompleted { .. }))
        .count();
    assert_eq!(checks, 2);
}

#[test]
fn rejected_replan_keeps_alert_open() {
    let mut s = suspended(2, 1);
    let id = s.open_alert().unwrap().id;
    let bad = Resolution::ReplaceProgram {
        program: "centrifuge(300, 5, \"NoSuchTube\")".into(),
    };
    assert!(matches!(
        s.resolve_alert(id, &bad),
        Err(OrchestratorError::Pipeline(
            PipelineError::UnrepairableProgram(_)
        ))
    ));
    assert_eq!(s.open_alert().map(|a| a.id), Some(id));
    assert_eq!(s.status(), RunStatus::AwaitingReplan);
}

#[test]
fn open_alert_blocks_progress() {
    let mut s = suspended(2, 1);
    let n = s.events().len();
    for _ in 0..5 {
        assert_eq!(s.step(), 0);
    }
    assert_eq!(s.events().len(), n);
}

#[test]
fn identical_replans_reproduce_the_same_suffix() {
    let base = suspended(2, 1);
    let id = base.open_alert().unwrap().id;
    let text = remaining(&base);
    let run = || {
        let mut s = base.clone();
        s.resolve_alert(
            id,
            &Resolution::ReplaceProgram {
                program: text.clone(),
            },
        )
        .unwrap();
        s.run();
        s.events()[base.events().len()..].to_vec()
    };
    let a = run();
    assert_eq!(a, run());
    let started: Vec<_> = a
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ActionStarted { function } => Some(function.clone()),
            _ => None,
        })
        .collect();
    let want: Vec<_> = base.executor().program().instructions[base.executor().pc()..]
        .iter()
        .map(|i| i.function.clone())
        .collect();
    assert_eq!(started, want);
}

#[test]
fn checks_precede_actions_and_alerts_follow_confirmed_reports() {
    for scenario in [2u8, 5, 7] {
        let index = if scenario == 2 { 1 } else { 2 };
        let s = suspended(scenario, index);
        let first_check = s
            .events()
            .iter()
            .position(|e| matches!(e.kind, EventKind::CheckCompleted { .. }));
        let first_action = s
            .events()
            .iter()
            .position(|e| matches!(e.kind, EventKind::ActionStarted { .. }));
        assert!(first_check.unwrap() < first_action.unwrap());
        for e in s.events() {
            if let EventKind::AlertRaised {
                cause: AlertCause::Anomaly { .. },
                report,
                ..
            } = &e.kind
            {
                assert!(report.as_ref().is_some_and(|r| r.confirmed));
            }
        }
    }
}

#[test]
fn emergency_stop_closes_open_alerts() {
    let mut s = suspended(2, 1);
    s.emergency_stop().unwrap();
    assert_eq!(s.status(), RunStatus::Aborted);
    assert!(s.open_alert().is_none());
    assert_eq!(s.alerts().len(), 2);
    assert!(matches!(
        s.emergency_stop(),
        Err(OrchestratorError::AlreadyTerminal(RunStatus::Aborted))
    ));
    let last = s.events().last().unwrap();
    assert!(matches!(
        last.kind,
        EventKind::RunFinished {
            status: RunStatus::Aborted
        }
    ));
}
