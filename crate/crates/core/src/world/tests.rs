use super::*;
use crate::strategies::{household, rollout};
use alloc::vec;
use proptest::prelude::*;

fn run(world: &WorldState, steps: &[(Verb, &str)]) -> (WorldState, Vec<ActionOutcome>) {
    let mut s = world.clone();
    let mut outcomes = Vec::new();
    for (verb, target) in steps {
        let (next, out) = apply_action(&s, &SimAction::new(*verb, *target)).unwrap();
        s = next;
        outcomes.push(out);
    }
    (s, outcomes)
}

fn pred(rel: Relation, subject: &str) -> Predicate {
    Predicate::new(rel, subject)
}

/// The state just before `sit('sofa')` in the failing bread-and-sofa episode.
fn near_bread() -> WorldState {
    let (s, outs) = run(
        &household(),
        &[
            (Verb::Walk, "livingroom"),
            (Verb::Find, "sofa"),
            (Verb::Find, "bread"),
            (Verb::Grab, "bread"),
        ],
    );
    assert!(outs.iter().all(|o| o.ok), "{outs:?}");
    s
}

#[test]
fn grab_when_close() {
    let (s, _) = run(&household(), &[(Verb::Find, "bread")]);
    let (s, out) = apply_action(&s, &SimAction::new(Verb::Grab, "bread")).unwrap();
    assert!(out.ok);
    assert!(out.feedback_message.is_empty());
    assert_eq!(s.held(), ["bread".to_string()]);
    assert!(s.has_flag("bread", Flag::Grabbed));
    assert_eq!(eval_predicate(&s, &pred(Relation::Holding, "bread")), Ok(true));
}

#[test]
fn sit_while_near_bread_fails_with_template() {
    let s = near_bread();
    let (after, out) = apply_action(&s, &SimAction::new(Verb::Sit, "sofa")).unwrap();
    assert!(!out.ok);
    assert_eq!(out.feedback_message, "not close to <sofa> when [SIT]");
    assert!(out.observations.contains(&"sofa is visible but not near".to_string()));
    assert!(out.observations.contains(&"agent is holding bread".to_string()));
    assert_eq!(after, s);
    assert_eq!(eval_predicate(&s, &pred(Relation::Close, "sofa")), Ok(false));

    let (s, outs) = run(&s, &[(Verb::Find, "sofa"), (Verb::Sit, "sofa"), (Verb::Eat, "bread")]);
    assert!(outs.iter().all(|o| o.ok));
    assert!(s.has_flag("sofa", Flag::SatOn));
    assert!(s.has_flag("bread", Flag::Eaten));
}

#[test]
fn other_templates() {
    let s = household();
    let (_, out) = apply_action(&s, &SimAction::new(Verb::Find, "apple")).unwrap();
    assert_eq!(out.feedback_message, "<apple> not found in <livingroom>");

    let (s, outs) = run(
        &s,
        &[
            (Verb::Find, "bread"),
            (Verb::Grab, "bread"),
            (Verb::Find, "tv"),
            (Verb::Grab, "tv"),
            (Verb::Find, "sofa"),
        ],
    );
    assert!(outs.iter().all(|o| o.ok));
    let (_, out) = apply_action(&s, &SimAction::new(Verb::Grab, "sofa")).unwrap();
    assert_eq!(out.feedback_message, "hands full when [GRAB]");
}

#[test]
fn unknown_object_is_an_error() {
    let s = household();
    assert_eq!(
        apply_action(&s, &SimAction::new(Verb::Grab, "piano")).unwrap_err(),
        SimError::UnknownObject("piano".into())
    );
    assert_eq!(
        eval_predicate(&s, &pred(Relation::Visible, "piano")),
        Err(SimError::UnknownObject("piano".into()))
    );
}

#[test]
fn builder_rejects_bad_worlds() {
    assert_eq!(
        WorldBuilder::new().room("a").object("x", "b", &[]).build().unwrap_err(),
        SimError::UnknownRoom("b".into())
    );
    assert_eq!(
        WorldBuilder::new()
            .room("a")
            .object("x", "a", &["shiny"])
            .build()
            .unwrap_err(),
        SimError::UnknownProperty("shiny".into())
    );
    assert_eq!(
        WorldBuilder::new().room("a").object("a", "a", &[]).build().unwrap_err(),
        SimError::Duplicate("a".into())
    );
}

#[test]
fn goal_scoring() {
    let world = household();
    let goals = GoalSpec::new(
        vec![pred(Relation::SatOn, "sofa"), pred(Relation::Eaten, "bread")],
        &world,
    )
    .unwrap();
    let (done, _) = run(
        &near_bread(),
        &[(Verb::Find, "sofa"), (Verb::Sit, "sofa"), (Verb::Eat, "bread")],
    );
    assert_eq!(score_goals(&done, true, &goals), GoalScore { sr: 1, psr: 1.0 });
    assert_eq!(score_goals(&done, false, &goals).sr, 0);

    let (half, _) = run(&near_bread(), &[(Verb::Eat, "bread")]);
    assert_eq!(score_goals(&half, true, &goals), GoalScore { sr: 0, psr: 0.5 });

    assert_eq!(GoalSpec::new(vec![], &world).unwrap_err(), SimError::EmptyGoals);
    assert!(GoalSpec::new(vec![pred(Relation::Eaten, "cake")], &world).is_err());
}

/// Recomputes a predicate from the public fields without `eval_predicate`.
fn brute_force(s: &WorldState, p: &Predicate) -> bool {
    let x = p.subject.as_str();
    let raw = match p.relation {
        Relation::Close => s.proximity().iter().any(|o| o == x),
        Relation::Holding => s.held().iter().any(|o| o == x),
        Relation::Visible => s.visible().iter().any(|o| o == x),
        other => {
            let flag = match other {
                Relation::Eaten => Flag::Eaten,
                Relation::SatOn => Flag::SatOn,
                Relation::Open => Flag::Open,
                Relation::On => Flag::On,
                _ => Flag::Grabbed,
            };
            s.flags_of(x).contains(&flag)
        }
    };
    raw ^ p.negated
}

fn is_templated(msg: &str) -> bool {
    fn bracketed(s: &str) -> Option<&str> {
        let inner = s.strip_prefix('<')?.strip_suffix('>')?;
        (!inner.is_empty() && !inner.contains(['<', '>', ' '])).then_some(inner)
    }
    if let Some(rest) = msg.strip_prefix("not ") {
        let Some((rel, rest)) = rest.split_once(" to ") else {
            return false;
        };
        let Some((obj, label)) = rest.split_once(" when [") else {
            return false;
        };
        let label_ok = label
            .strip_suffix(']')
            .is_some_and(|l| !l.is_empty() && l.chars().all(|c| c.is_ascii_uppercase()));
        return !rel.is_empty() && !rel.contains(' ') && bracketed(obj).is_some() && label_ok;
    }
    if msg == "hands full when [GRAB]" {
        return true;
    }
    match msg.split_once(" not found in ") {
        Some((obj, room)) => bracketed(obj).is_some() && bracketed(room).is_some(),
        None => false,
    }
}

#[test]
fn template_checker_self_test() {
    assert!(is_templated("not close to <sofa> when [SIT]"));
    assert!(is_templated("<apple> not found in <livingroom>"));
    assert!(!is_templated("sofa is far"));
    assert!(!is_templated("not close to sofa when [SIT]"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rollouts_preserve_invariants(actions in rollout(50)) {
        let mut s = household();
        let mut eaten: Vec<String> = Vec::new();
        for a in &actions {
            let (next, out) = apply_action(&s, a).unwrap();
            prop_assert!(next.check_invariants().is_ok(), "{:?} after {:?}", next.check_invariants(), a);
            if out.ok {
                prop_assert!(out.feedback_message.is_empty());
            } else {
                prop_assert_eq!(&next, &s);
                prop_assert!(is_templated(&out.feedback_message), "{}", out.feedback_message);
            }
            prop_assert_eq!(out.observations.len(), 2);
            for e in &eaten {
                prop_assert!(next.has_flag(e, Flag::Eaten));
            }
            let (again, out2) = apply_action(&s, a).unwrap();
            prop_assert_eq!(&again, &next);
            prop_assert_eq!(&out2, &out);
            s = next;
            eaten = s.object_ids().filter(|o| s.has_flag(o, Flag::Eaten)).cloned().collect();
        }
    }

    #[test]
    fn predicates_match_brute_force(actions in rollout(30), neg in any::<bool>()) {
        let mut s = household();
        for a in &actions {
            s = apply_action(&s, a).unwrap().0;
        }
        let objects: Vec<String> = s.object_ids().cloned().collect();
        for rel in Relation::ALL {
            if rel == Relation::Contains {
                continue;
            }
            for o in &objects {
                let mut p = pred(rel, o);
                p.negated = neg;
                prop_assert_eq!(eval_predicate(&s, &p).unwrap(), brute_force(&s, &p));
            }
        }
    }

    #[test]
    fn scores_match_counting(actions in rollout(30), picks in proptest::collection::vec((0usize..8, 0usize..7, any::<bool>()), 1..6), ok in any::<bool>()) {
        let mut s = household();
        for a in &actions {
            s = apply_action(&s, a).unwrap().0;
        }
        let objects: Vec<String> = s.object_ids().cloned().collect();
        let rels: Vec<Relation> = Relation::ALL.iter().copied().filter(|r| *r != Relation::Contains).collect();
        let preds: Vec<Predicate> = picks
            .iter()
            .map(|(r, o, n)| Predicate { relation: rels[r % rels.len()], subject: objects[o % objects.len()].clone(), negated: *n })
            .collect();
        let goals = GoalSpec::new(preds.clone(), &household()).unwrap();
        let hits = preds.iter().filter(|p| brute_force(&s, p)).count();
        let score = score_goals(&s, ok, &goals);
        prop_assert_eq!(score.psr, hits as f64 / preds.len() as f64);
        prop_assert_eq!(score.sr, u8::from(ok && hits == preds.len()));
        prop_assert!((0.0..=1.0).contains(&score.psr));
    }
}
