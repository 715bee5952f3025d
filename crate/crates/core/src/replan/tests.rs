use super::*;
use crate::gateway::{count_tokens, Completion, ModelError, ScriptedBackend};
use crate::plan::{parse_plan, ArgKind, Predicate, Relation, Statement};
use crate::world::WorldBuilder;
use alloc::vec;
use proptest::prelude::*;

const INITIAL: &str = include_str!("../../../../fixtures/embodied/completions/initial_plan_for_eat_bread_on_sofa.py");
const UPDATED: &str = include_str!("../../../../fixtures/embodied/completions/updated_plan_for_eat_bread_on_sofa.py");
const FEEDBACK: &str = include_str!("../../../../fixtures/embodied/completions/feedback_eat_bread_on_sofa.txt");
const EXAMPLES: [&str; 3] = [
    include_str!("../../../../fixtures/embodied/examples/throw_away_apple.py"),
    include_str!("../../../../fixtures/embodied/examples/watch_tv.py"),
    include_str!("../../../../fixtures/embodied/examples/eat_bread_on_sofa.py"),
];
const OBJECTS: [&str; 10] = [
    "livingroom",
    "kitchen",
    "sofa",
    "bread",
    "tv",
    "apple",
    "fridge",
    "chair",
    "cup",
    "garbagecan",
];
const VERBS: [&str; 9] = [
    "walk",
    "find",
    "grab",
    "sit",
    "eat",
    "open",
    "close_obj",
    "switch_on",
    "put_back",
];

fn vocab() -> Vocabulary {
    let mut v = Vocabulary::new();
    for name in VERBS {
        v = v.with_action(name, &[ArgKind::Object]);
    }
    v.with_objects(OBJECTS)
}

fn house() -> WorldState {
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
        .object("garbagecan", "kitchen", &["container"])
        .agent_in("livingroom")
        .build()
        .unwrap()
}

fn task() -> EmbodiedTask {
    let world = house();
    let goals = GoalSpec::new(
        vec![
            Predicate::new(Relation::SatOn, "sofa"),
            Predicate::new(Relation::Eaten, "bread"),
        ],
        &world,
    )
    .unwrap();
    EmbodiedTask {
        name: "eat_bread_on_sofa".into(),
        world,
        vocab: vocab(),
        goals,
        examples: EXAMPLES[..2].iter().map(|e| parse_plan(e).unwrap()).collect(),
    }
}

fn objects() -> Vec<String> {
    OBJECTS.iter().map(|o| o.to_string()).collect()
}

fn translations() -> BTreeMap<String, String> {
    [
        ("Step 1: Pick up the apple", "步骤1：拿起苹果"),
        ("Step 2: Open the garbage can", "步骤2：打开垃圾桶"),
        ("Step 3: Drop the apple", "步骤3：丢掉苹果"),
        ("Step 1: Turn on the tv", "步骤1：打开电视"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

fn normalize(s: &str) -> String {
    s.lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn settings(options: PromptOptions, budget: usize) -> EpisodeSettings {
    EpisodeSettings {
        options,
        budget,
        translations: translations(),
        ..EpisodeSettings::default()
    }
}

#[test]
fn code_prompt_layout() {
    let t = task();
    let p = build_task_prompt(
        &t.vocab,
        &objects(),
        &t.examples,
        &t.name,
        PromptOptions::default(),
        &BTreeMap::new(),
    );
    let text = p.render();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(*lines.last().unwrap(), "def initial_plan_for_eat_bread_on_sofa():");
    assert!(lines[0].starts_with("from actions import walk<obj>, find<obj>, grab<obj>"));
    assert!(lines[1].starts_with("objects = [\"livingroom\", \"kitchen\", \"sofa\""));
    assert!(lines.contains(&"# Example tasks"));
    assert!(lines.contains(&"# Next Task"));
    assert_eq!(p.few_shot.len(), 2);
    for ex in &p.few_shot {
        parse_plan(ex).unwrap();
    }
    assert_eq!(text, p.render());

    let empty = build_task_prompt(
        &t.vocab,
        &objects(),
        &[],
        &t.name,
        PromptOptions::default(),
        &BTreeMap::new(),
    );
    assert!(empty.few_shot.is_empty());
    assert!(empty
        .render()
        .contains("# Example tasks\n\n# Next Task\ndef initial_plan_for_eat_bread_on_sofa():\n"));
}

#[test]
fn comment_modes_and_token_order() {
    let t = task();
    let build = |comments| {
        let opts = PromptOptions {
            comments,
            ..PromptOptions::default()
        };
        build_task_prompt(&t.vocab, &objects(), &t.examples, &t.name, opts, &translations())
    };
    let keep = build(CommentMode::En);
    let strip = build(CommentMode::None);
    let cn = build(CommentMode::Cn);
    assert!(count_tokens(&strip.render()) < count_tokens(&keep.render()));
    assert!(!strip.few_shot.iter().any(|e| e.contains('#')));
    assert!(cn.few_shot[0].contains("# 步骤1：拿起苹果"));
    assert!(cn.few_shot[1].contains("# Step 2: Sit on the sofa"));
    assert_eq!(cn.untranslated, ["Step 2: Sit on the sofa"]);
    assert!(keep.untranslated.is_empty());
}

#[test]
fn nl_prompt_shape() {
    let t = task();
    let code = build_task_prompt(
        &t.vocab,
        &objects(),
        &t.examples,
        &t.name,
        PromptOptions::default(),
        &BTreeMap::new(),
    );
    let opts = PromptOptions {
        format: PlanFormat::Nl,
        ..PromptOptions::default()
    };
    let nl = build_task_prompt(&t.vocab, &objects(), &t.examples, &t.name, opts, &BTreeMap::new());
    let text = nl.render();
    assert!(!text.lines().any(|l| l.trim_start().starts_with("def ")));
    assert!(text.ends_with("Next task:\nPlan for eat bread on sofa:\n"));
    assert!(text.contains("Step 4: make sure the agent is close to the garbagecan; otherwise find the garbagecan.\n"));
    assert!(count_tokens(&code.render()) < count_tokens(&text));
    for (ex, shown) in t.examples.iter().zip(&nl.few_shot) {
        let back = nl::read_nl(&ex.name, shown).unwrap();
        assert!(back.structurally_eq(ex));
    }
}

#[test]
fn nl_reader_errors() {
    assert!(matches!(
        nl::read_nl("p", "Plan for p:\nStep 1: walk livingroom.\n"),
        Err(nl::NlError::Unreadable { line: 2, .. })
    ));
    assert!(matches!(
        nl::read_nl("p", "Step one: walk the sofa.\n"),
        Err(nl::NlError::Unreadable { .. })
    ));
    assert_eq!(
        nl::read_nl("p", "Plan for p:\nNote: nothing\n"),
        Err(nl::NlError::EmptyBody)
    );
    let loop_plan =
        parse_plan("def p():\n    while not TextInspectorTool.contains('x'):\n        PageDownTool()\n").unwrap();
    assert_eq!(
        nl::render_nl(&loop_plan, "Plan:", CommentStyle::Keep),
        Err(nl::NlError::Unsupported { line: 2 })
    );
}

fn completion(text: &str) -> Completion {
    Completion {
        text: text.to_string(),
        usage: crate::gateway::TokenUsage::new(count_tokens(text) as u64 * 3, count_tokens(text) as u64),
        usage_source: Default::default(),
    }
}

/// Replays a fixed list of completions, whatever the prompt.
struct Canned(Vec<&'static str>, usize);

impl ModelBackend for Canned {
    fn complete(&mut self, _prompt: &str) -> Result<Completion, ModelError> {
        let text = self.0.get(self.1).copied().ok_or(ModelError::ScriptExhausted(self.1))?;
        self.1 += 1;
        Ok(completion(text))
    }
}

#[test]
fn golden_episode() {
    let t = task();
    let mut backend = ScriptedBackend::from_completions([INITIAL, UPDATED]);
    let r = run_episode(&t, &mut backend, &EpisodeSettings::default());
    assert_eq!(r.outcome, EpisodeOutcome::Completed);
    assert_eq!(r.replans_used, 1);
    assert_eq!(r.score.sr, 1);
    assert_eq!(r.score.psr, 1.0);
    assert_eq!(r.attempts.len(), r.replans_used + 1);
    let first = r.traces().next().unwrap();
    let fb = first.failure.as_ref().unwrap();
    assert_eq!(fb.feedback_message, "not close to <sofa> when [SIT]");
    let replan_prompt = &r.transcript[1].prompt;
    assert!(normalize(replan_prompt).ends_with(&normalize(FEEDBACK)));
    let preamble = build_task_prompt(
        &t.vocab,
        t.vocab.objects(),
        &t.examples,
        &t.name,
        PromptOptions::default(),
        &BTreeMap::new(),
    )
    .preamble();
    assert!(replan_prompt.starts_with(&preamble));
    assert_eq!(crate::executor::exec_fraction(first), 0.8);
    assert_eq!(r.step_counts(), (8, 7));
    assert_eq!(r.usage(), r.transcript.iter().map(|x| x.usage).sum());
}

#[test]
fn zero_budget_keeps_failure() {
    let t = task();
    let mut backend = Canned(vec![INITIAL, UPDATED], 0);
    let r = run_episode(&t, &mut backend, &settings(PromptOptions::default(), 0));
    assert_eq!(r.replans_used, 0);
    assert_eq!(r.transcript.len(), 1);
    assert_eq!(r.outcome, EpisodeOutcome::BudgetExhausted);
    assert!(r.last_trace().unwrap().failure.is_some());
    assert_eq!(r.score.sr, 0);
    assert_eq!(r.score.psr, 0.0);
}

#[test]
fn garbage_consumes_budget() {
    let t = task();
    for budget in 0..=5 {
        let mut backend = crate::gateway::ConstantBackend::new("this is not a plan");
        let r = run_episode(&t, &mut backend, &settings(PromptOptions::default(), budget));
        assert_eq!(r.transcript.len(), budget + 1);
        assert_eq!(r.replans_used, budget);
        assert!(r.attempts.iter().all(|a| matches!(a, Attempt::Rejected { .. })));
        for x in &r.transcript[1..] {
            assert_eq!(x.prompt.matches("# previous completion rejected").count(), 1);
            assert!(x.prompt.ends_with("def initial_plan_for_eat_bread_on_sofa():\n"));
        }
    }
}

#[test]
fn model_error_aborts_with_partial_transcript() {
    let t = task();
    let mut backend = ScriptedBackend::from_completions([INITIAL]);
    let r = run_episode(&t, &mut backend, &EpisodeSettings::default());
    assert_eq!(r.outcome, EpisodeOutcome::ModelError);
    assert_eq!(r.transcript.len(), 1);
    assert!(r.error.is_some());
}

#[test]
fn assert_off_gating() {
    let t = task();
    let opts = PromptOptions {
        assert_enabled: false,
        ..PromptOptions::default()
    };
    let mut backend = Canned(vec![INITIAL, UPDATED, UPDATED, UPDATED], 0);
    let r = run_episode(&t, &mut backend, &settings(opts, 3));
    for x in &r.transcript {
        assert!(!x.prompt.contains("assert"), "{}", x.prompt);
    }
    // Without its assertion the initial plan fails one step earlier.
    let first = r.traces().next().unwrap();
    assert_eq!(
        first.failure.as_ref().unwrap().feedback_message,
        "not close to <bread> when [GRAB]"
    );
}

#[test]
fn replan_off_is_single_call() {
    let t = task();
    let opts = PromptOptions {
        replan_enabled: false,
        ..PromptOptions::default()
    };
    let mut backend = Canned(vec![INITIAL, UPDATED], 0);
    let r = run_episode(&t, &mut backend, &settings(opts, 3));
    assert_eq!(r.transcript.len(), 1);
    assert_eq!(r.score.sr, 0);
}

#[test]
fn nl_golden_episode() {
    let t = task();
    let opts = PromptOptions {
        format: PlanFormat::Nl,
        ..PromptOptions::default()
    };
    let initial = nl::render_nl(
        &parse_plan(INITIAL).unwrap(),
        "Plan for eat bread on sofa:",
        CommentStyle::Keep,
    )
    .unwrap();
    let updated = nl::render_nl(
        &parse_plan(UPDATED).unwrap(),
        "Updated plan for eat bread on sofa:",
        CommentStyle::Keep,
    )
    .unwrap();
    let initial: &'static str = alloc::boxed::Box::leak(initial.into_boxed_str());
    let updated: &'static str = alloc::boxed::Box::leak(updated.into_boxed_str());
    let mut backend = Canned(vec![initial, updated], 0);
    let r = run_episode(&t, &mut backend, &settings(opts, 3));
    assert_eq!(r.replans_used, 1);
    assert_eq!(r.score.sr, 1);
    let replan = &r.transcript[1].prompt;
    assert!(replan.contains("Failed step: sit the sofa.\nFeedback: not close to <sofa> when [SIT].\n"));
    assert!(
        replan.contains("Environment: sofa is visible but not near; agent is holding bread.\nItems in hand: bread.\n")
    );
    assert!(replan.ends_with("\nUpdated plan for eat bread on sofa:\n"));
    for x in &r.transcript {
        assert!(!x.prompt.lines().any(|l| l.starts_with("def ")));
    }
}

#[test]
fn idempotent() {
    let t = task();
    let run = || {
        run_episode(
            &t,
            &mut ScriptedBackend::from_completions([INITIAL, UPDATED]),
            &EpisodeSettings::default(),
        )
    };
    let (a, b) = (run(), run());
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a, b);
}

fn embodied_statement() -> impl Strategy<Value = StmtKind> {
    let obj = prop::sample::select(OBJECTS.to_vec());
    let verb = prop::sample::select(VERBS.to_vec());
    let call = (verb, obj.clone()).prop_map(|(v, o)| crate::plan::Call {
        name: v.to_string(),
        args: vec![crate::plan::Arg {
            keyword: None,
            value: crate::plan::Value::Str(o.to_string()),
        }],
    });
    let rel = prop::sample::select(vec![
        Relation::Close,
        Relation::Holding,
        Relation::Visible,
        Relation::Eaten,
        Relation::SatOn,
        Relation::On,
    ]);
    prop_oneof![
        3 => call.clone().prop_map(StmtKind::Action),
        1 => "[A-Za-z][A-Za-z0-9 ,]{0,20}[A-Za-z0-9]".prop_map(StmtKind::Comment),
        1 => (rel, obj, any::<bool>(), prop::collection::vec(call, 0..3)).prop_map(|(r, o, neg, rec)| StmtKind::AssertRecover {
            predicate: Predicate { relation: r, subject: o.to_string(), negated: neg },
            recovery: rec.into_iter().map(|c| Statement::new(0, StmtKind::Action(c))).collect(),
        }),
    ]
}

fn embodied_plan() -> impl Strategy<Value = PlanAst> {
    (
        prop::collection::vec(embodied_statement(), 0..8),
        prop::sample::select(VERBS.to_vec()),
    )
        .prop_map(|(mut body, v)| {
            body.push(StmtKind::Action(crate::plan::Call {
                name: v.to_string(),
                args: vec![],
            }));
            PlanAst {
                name: "p".into(),
                body: body.into_iter().map(|k| Statement::new(0, k)).collect(),
            }
        })
}

proptest! {
    #[test]
    fn nl_round_trip(plan in embodied_plan()) {
        let text = nl::render_nl(&plan, "Plan for p:", CommentStyle::Keep).unwrap();
        let back = nl::read_nl("p", &text).unwrap();
        prop_assert!(back.structurally_eq(&plan), "{}", text);
    }

    #[test]
    fn calls_within_budget(
        picks in prop::collection::vec(0usize..4, 1..10),
        budget in 0usize..6,
        replan in any::<bool>(),
        assert_enabled in any::<bool>(),
        nl_format in any::<bool>(),
    ) {
        let pool = [INITIAL, UPDATED, "garbage", "def initial_plan_for_eat_bread_on_sofa():\n    fly('sofa')\n"];
        let t = task();
        let opts = PromptOptions {
            format: if nl_format { PlanFormat::Nl } else { PlanFormat::Code },
            comments: CommentMode::En,
            assert_enabled,
            replan_enabled: replan,
        };
        let mut script: Vec<&'static str> = picks.iter().map(|i| pool[*i]).collect();
        script.resize(12, "garbage");
        let mut backend = Canned(script, 0);
        let r = run_episode(&t, &mut backend, &settings(opts, budget));
        let cap = if replan { budget } else { 0 };
        prop_assert!(r.transcript.len() <= cap + 1);
        prop_assert_eq!(r.replans_used + 1, r.attempts.len());
        prop_assert!(r.replans_used <= cap);
        let last_ok = matches!(r.attempts.last(), Some(Attempt::Executed { trace }) if trace.completed);
        prop_assert_eq!(r.score, score_goals(&r.final_state, last_ok, &t.goals));
        if !assert_enabled {
            for x in &r.transcript {
                prop_assert!(!x.prompt.contains("assert"));
            }
        }
        // A replan prompt carries the latest failure and no other.
        for (i, x) in r.transcript.iter().enumerate().skip(1) {
            let marker = if nl_format { "failed.\n" } else { "error_step = " };
            let failed_before = r.attempts[..i].iter().any(|a| matches!(a, Attempt::Executed { trace } if trace.failure.is_some()));
            let expected = usize::from(failed_before);
            prop_assert_eq!(x.prompt.matches(marker).count(), expected);
        }
    }
}
