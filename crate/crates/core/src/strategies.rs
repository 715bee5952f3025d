//! Proptest strategies for plans, worlds and actions. Enabled by the
//! `strategies` feature; used by the property and acceptance suites.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use proptest::collection::vec;
use proptest::prelude::*;

use crate::plan::*;
use crate::world::{SimAction, Verb, WorldBuilder, WorldState};

const RESERVED: &[&str] = &[
    "def",
    "assert",
    "else",
    "while",
    "if",
    "break",
    "not",
    "to",
    "final_answer",
];

pub fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,7}".prop_filter("reserved word", |s| !RESERVED.contains(&s.as_str()))
}

fn call_name() -> impl Strategy<Value = String> {
    prop_oneof![ident(), "[A-Z][A-Za-z]{0,8}Tool".prop_map(|s| s),]
}

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _'\"\\\\.,:#()\\[\\]-]{0,14}"
}

fn comment_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.:()'\"#-]{0,24}".prop_map(|s| s.trim().to_string())
}

pub fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        text().prop_map(Value::Str),
        any::<i64>().prop_map(Value::Int),
        ident().prop_map(Value::Var),
    ]
}

pub fn call() -> impl Strategy<Value = Call> {
    let arg = (proptest::option::of(ident()), value()).prop_map(|(keyword, value)| Arg { keyword, value });
    (call_name(), vec(arg, 0..4)).prop_map(|(name, args)| Call { name, args })
}

fn expr() -> impl Strategy<Value = Expr> {
    let base = prop_oneof![value().prop_map(ExprBase::Value), call().prop_map(ExprBase::Call)];
    let accessor = prop_oneof![any::<i64>().prop_map(Accessor::Index), text().prop_map(Accessor::Key)];
    (base, vec(accessor, 0..3)).prop_map(|(base, path)| Expr { base, path })
}

pub fn predicate() -> impl Strategy<Value = Predicate> {
    (proptest::sample::select(Relation::ALL.to_vec()), text(), any::<bool>()).prop_map(
        |(relation, subject, negated)| Predicate {
            relation,
            subject,
            negated,
        },
    )
}

fn condition() -> impl Strategy<Value = Condition> {
    prop_oneof![
        predicate().prop_map(Condition::Predicate),
        (ident(), any::<bool>()).prop_map(|(name, negated)| Condition::Flag { name, negated }),
    ]
}

fn leaf() -> BoxedStrategy<StmtKind> {
    prop_oneof![
        comment_text().prop_map(StmtKind::Comment),
        call().prop_map(StmtKind::Action),
        (ident(), expr()).prop_map(|(target, value)| StmtKind::Binding { target, value }),
        expr().prop_map(StmtKind::Return),
        predicate().prop_map(|predicate| StmtKind::AssertRecover {
            predicate,
            recovery: Vec::new()
        }),
    ]
    .boxed()
}

/// A statement whose nested blocks stay within `remaining` further levels.
pub fn statement(remaining: usize) -> BoxedStrategy<Statement> {
    let kind = if remaining == 0 {
        leaf()
    } else {
        let block = move |min: usize| vec(statement(remaining - 1), min..4);
        prop_oneof![
            4 => leaf(),
            1 => (predicate(), block(0)).prop_map(|(predicate, recovery)| StmtKind::AssertRecover { predicate, recovery }),
            1 => (predicate(), block(1), proptest::option::of(condition()))
                .prop_map(|(guard, body, break_if)| StmtKind::Loop { guard, body, break_if }),
            1 => (condition(), block(1), block(0))
                .prop_map(|(condition, then_body, else_body)| StmtKind::Conditional { condition, then_body, else_body }),
        ]
        .boxed()
    };
    kind.prop_map(|kind| Statement { line: 0, kind }).boxed()
}

/// Well-formed plans up to the maximum nesting depth.
pub fn plan() -> impl Strategy<Value = PlanAst> {
    ("[a-z][a-z0-9_]{0,12}", vec(statement(MAX_DEPTH - 1), 1..8)).prop_map(|(name, body)| PlanAst { name, body })
}

/// A small household with two rooms, sittable/edible/container objects.
pub fn household() -> WorldState {
    WorldBuilder::new()
        .room("livingroom")
        .room("kitchen")
        .object("sofa", "livingroom", &["sittable"])
        .object("bread", "livingroom", &["edible"])
        .object("tv", "livingroom", &[])
        .object("apple", "kitchen", &["edible"])
        .object("fridge", "kitchen", &["container"])
        .object("chair", "kitchen", &["sittable"])
        .object("cup", "kitchen", &[])
        .agent_in("livingroom")
        .build()
        .expect("valid household")
}

pub fn sim_action(world: &WorldState) -> impl Strategy<Value = SimAction> {
    let mut targets: Vec<String> = world.rooms().iter().cloned().collect();
    targets.extend(world.object_ids().cloned());
    (
        proptest::sample::select(Verb::ALL.to_vec()),
        proptest::sample::select(targets),
    )
        .prop_map(|(verb, target)| SimAction { verb, target })
}

/// Sequences of random actions over [`household`].
pub fn rollout(len: usize) -> impl Strategy<Value = Vec<SimAction>> {
    let world = household();
    vec(sim_action(&world), 1..len)
}
