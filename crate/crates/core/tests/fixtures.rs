mod common;

use std::collections::BTreeSet;

use common::{Fixture, SENTINEL};
use ila_core::bench::{self, TaskKind};
use ila_core::sandbox::TestBody;

#[test]
fn corpus_meets_minimum_shape() {
    let fx = Fixture::load();
    assert!(fx.problems.len() >= 10);
    let kinds: BTreeSet<TaskKind> = fx.problems.iter().map(|p| p.task_kind).collect();
    assert_eq!(kinds.len(), 3);
    assert!(fx.store.chunks().len() >= 50, "only {} chunks", fx.store.chunks().len());
    assert_eq!(fx.index.len(), fx.store.chunks().len());
    assert!(fx.types.len() >= 5);
}

#[test]
fn every_private_test_carries_the_sentinel() {
    for p in common::problems() {
        for t in &p.private_tests {
            assert!(t.test_id.contains(SENTINEL), "{}: {}", p.id, t.test_id);
            if let TestBody::Harness { program } = &t.body {
                assert!(program.contains(SENTINEL));
            }
        }
        for t in &p.public_tests {
            assert!(!t.test_id.contains(SENTINEL));
            assert!(!serde_json::to_string(t).unwrap().contains(SENTINEL));
        }
        assert!(!p.query().contains(SENTINEL));
    }
}

#[test]
fn repair_sources_parse() {
    let sb = common::sandbox();
    assert!(bench::uncompilable_repair_sources(&common::problems(), &sb).is_empty());
}

#[test]
fn reference_solutions_grade_as_expected() {
    let sb = common::sandbox();
    let sols = common::solutions();
    let problems = common::problems();
    assert_eq!(sols.len(), problems.len());
    for p in &problems {
        let s = &sols[&p.id];
        let public = sb.submit(&s.correct, &p.public_tests).unwrap();
        assert!(public.all_passed, "{}: {}", p.id, public.render());
        let private = sb.grade(&s.correct, &p.private_tests).unwrap();
        assert!(private.accepted && private.compiled, "{}: {:?}", p.id, private.outcomes);
        let wrong = sb.grade(&s.wrong, &p.private_tests).unwrap();
        assert!(!wrong.accepted, "{} wrong solution accepted", p.id);
        assert!(wrong.compiled, "{} wrong solution should still parse", p.id);
        if let Some(overfit) = &s.overfit {
            assert!(sb.submit(overfit, &p.public_tests).unwrap().all_passed);
            assert!(!sb.grade(overfit, &p.private_tests).unwrap().accepted);
        }
    }
}

#[test]
fn unparsable_solution_is_not_compiled() {
    let sb = common::sandbox();
    let p = &common::problems()[0];
    let g = sb.grade("let x = (1 +\n", &p.private_tests).unwrap();
    assert!(!g.compiled && !g.accepted);
    assert!(g.infra_error.is_none());
    assert!(!sb.compiles("fn f( {").unwrap());
    assert!(sb.compiles("print(1)").unwrap());
}

#[test]
fn corpus_stats_cover_all_kinds() {
    let stats = bench::corpus_stats(&common::problems());
    assert_eq!(stats.problems, 12);
    assert_eq!(stats.per_kind.len(), 3);
    assert!(stats.render().contains("translate"));
}
