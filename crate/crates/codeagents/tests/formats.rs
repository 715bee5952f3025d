use std::fs;
use std::path::{Path, PathBuf};

use codeagents::config::{load_config, AblationConfig};
use codeagents::core::gateway::{Matcher, TokenUsage};
use codeagents::core::plan::{ArgKind, Predicate, Relation};
use codeagents::core::replan::{CommentMode, PlanFormat};
use codeagents::core::tools::ToolRegistry;
use codeagents::formats::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn line_of(e: FormatError) -> usize {
    match e {
        FormatError::Syntax { line, .. } => line,
        other => panic!("expected a syntax error, got {other}"),
    }
}

#[test]
fn vocab_fixture() {
    let p = fixtures().join("embodied/vocab.txt");
    let v = parse_vocab(&p, &read_text(&p).unwrap()).unwrap();
    assert_eq!(v.actions().len(), 9);
    assert!(v.actions().iter().all(|a| a.kinds == [ArgKind::Object]));
    assert_eq!(v.objects().len(), 10);
    assert!(v.has_object("garbagecan"));
}

#[test]
fn vocab_forms_and_errors() {
    let p = Path::new("v.txt");
    let v = parse_vocab(p, "action say text int\naction put_in/2\nobject cup\n").unwrap();
    assert_eq!(v.action("say").unwrap().kinds, [ArgKind::Text, ArgKind::Int]);
    assert_eq!(v.action("put_in").unwrap().arity(), 2);
    assert_eq!(line_of(parse_vocab(p, "\naction walk/x\n").unwrap_err()), 2);
    assert_eq!(line_of(parse_vocab(p, "action say blob\n").unwrap_err()), 1);
    assert_eq!(line_of(parse_vocab(p, "# c\nobject a\nobject a\n").unwrap_err()), 3);
    assert_eq!(line_of(parse_vocab(p, "verb walk\n").unwrap_err()), 1);
}

#[test]
fn world_lines() {
    let p = Path::new("w.world");
    let w = parse_world(p, "room a\nroom b\nobject cup in b\nagent b\n")
        .unwrap()
        .build()
        .unwrap();
    assert_eq!(w.agent_room(), "b");
    assert_eq!(w.location("cup"), Some("b"));
    assert_eq!(line_of(parse_world(p, "room a\nobject cup at a\n").unwrap_err()), 2);
    assert!(parse_world(p, "room a\nobject cup in a shiny\n")
        .unwrap()
        .build()
        .is_err());
}

#[test]
fn task_file() {
    let p = fixtures().join("embodied/tasks/throw_away_apple.task");
    let tf = parse_task(&p, &read_text(&p).unwrap()).unwrap();
    assert_eq!(tf.name, "throw_away_apple");
    assert_eq!(tf.agent.as_deref(), Some("livingroom"));
    assert_eq!(
        tf.goals,
        [
            Predicate::new(Relation::Open, "garbagecan"),
            Predicate::new(Relation::Holding, "apple").negate(),
            Predicate::new(Relation::Eaten, "apple").negate(),
        ]
    );
    assert_eq!(tf.examples, ["watch_tv", "eat_bread_on_sofa"]);
    assert!(parse_task(Path::new("t"), "task x\nvocab v\n").is_err());
    assert_eq!(
        line_of(parse_task(Path::new("t"), "task x\ngoal near sofa\n").unwrap_err()),
        2
    );
}

#[test]
fn embodied_task_loads() {
    let t = load_embodied_task(&fixtures().join("embodied/tasks/watch_tv.task")).unwrap();
    assert_eq!(t.name, "watch_tv");
    assert_eq!(t.world.agent_room(), "kitchen");
    assert_eq!(t.goals.predicates().len(), 2);
    let names: Vec<&str> = t.examples.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["throw_away_apple", "eat_bread_on_sofa"]);
}

#[test]
fn goal_on_unknown_object_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("embodied/tasks/watch_tv.task");
    let text = read_text(&src).unwrap().replace("goal on tv", "goal on radio");
    let p = dir.path().join("x.task");
    let fx = fixtures().join("embodied");
    let text = text
        .replace("../house.world", fx.join("house.world").to_str().unwrap())
        .replace("../vocab.txt", fx.join("vocab.txt").to_str().unwrap())
        + &format!("examples {}\n", fx.join("examples").display());
    fs::write(&p, text).unwrap();
    let err = load_embodied_task(&p).unwrap_err().to_string();
    assert!(err.contains("radio"), "{err}");
}

#[test]
fn corpus_and_registry() {
    let c = load_corpus(&fixtures().join("corpus")).unwrap();
    assert_eq!(c.documents().count(), 4);
    assert!(
        c.document("https://techcrunch.com/example-ai-chip")
            .unwrap()
            .unavailable
    );
    let reg = load_registry(&fixtures().join("agent/registry.json")).unwrap();
    assert_eq!(reg, ToolRegistry::browsing());

    let dir = tempfile::tempdir().unwrap();
    let one = serde_json::to_value(&ToolRegistry::browsing().tools()[0]).unwrap();
    let dup = dir.path().join("dup.json");
    fs::write(&dup, serde_json::json!({ "tools": [one.clone(), one] }).to_string()).unwrap();
    assert!(load_registry(&dup).is_err());
}

#[test]
fn prices() {
    let table = load_prices(&fixtures().join("prices.toml")).unwrap();
    let c = table
        .cost("gemini-2.5-flash", TokenUsage::new(1_000_000, 1_000_000))
        .unwrap();
    assert!((c - 0.75).abs() < 1e-12);
    let p = Path::new("p.toml");
    assert!(parse_prices(p, "[m]\ninput_per_million = -1.0\noutput_per_million = 1.0\n").is_err());
    assert!(parse_prices(p, "[m]\ninput_per_million = 1.0\n").is_err());
}

#[test]
fn translations() {
    let t = load_translations(&fixtures().join("embodied/translations.tsv")).unwrap();
    assert_eq!(t.len(), 12);
    assert_eq!(t["Step 3: Drop the apple"], "步骤3：丢掉苹果");
    assert_eq!(
        line_of(parse_translations(Path::new("t"), "# h\nno tab here\n").unwrap_err()),
        2
    );
}

#[test]
fn scripts() {
    let s = load_script(&fixtures().join("embodied/scripts/eat_bread_on_sofa.toml")).unwrap();
    assert_eq!(s.entries(PlanFormat::Code).len(), 3);
    assert_eq!(s.entries(PlanFormat::Nl).len(), 3);
    let initial = read_text(&fixtures().join("embodied/completions/initial_plan_for_eat_bread_on_sofa.py")).unwrap();
    assert_eq!(s.code[0].completion, initial);
    assert_eq!(s.code[0].matcher, Matcher::Any);

    let qa = load_script(&fixtures().join("agent/script.toml")).unwrap();
    assert_eq!(qa.code[1].matcher, Matcher::EndsWith("def updated_plan():".into()));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    fs::write(
        &p,
        "[[code]]\ncompletion = \"x\"\nusage = { input_tokens = 3, output_tokens = 4 }\n",
    )
    .unwrap();
    assert_eq!(load_script(&p).unwrap().code[0].usage, Some(TokenUsage::new(3, 4)));
    fs::write(&p, "[[code]]\ncompletion = \"x\"\ncompletion_file = \"y\"\n").unwrap();
    assert!(load_script(&p).is_err());
    fs::write(&p, "[[code]]\n").unwrap();
    assert!(load_script(&p).is_err());
}

#[test]
fn qa_task() {
    let t = load_qa_task(&fixtures().join("agent/ai_chip.toml")).unwrap();
    assert_eq!(t.config.tools.len(), 6);
    assert_eq!(t.config.role, "expert_assistant");
    assert_eq!(
        t.gold,
        "Edge computing boom; National policy support; Generative AI demand"
    );
}

#[test]
fn suites() {
    let s = load_suite(&fixtures().join("suite.toml")).unwrap();
    let ids: Vec<&str> = s.tasks.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["eat_bread_on_sofa", "watch_tv", "throw_away_apple"]);
    assert!(s
        .tasks
        .iter()
        .all(|t| t.kind() == TaskKind::Embodied && t.script.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let task = fixtures().join("embodied/tasks/watch_tv.task");
    let p = dir.path().join("suite.toml");
    let entry = format!("[[task]]\nkind = \"embodied\"\npath = {:?}\n", task.to_str().unwrap());
    fs::write(&p, format!("name = \"d\"\n{entry}{entry}")).unwrap();
    assert!(load_suite(&p).unwrap_err().to_string().contains("duplicate"));
}

#[test]
fn config_file() {
    let ctx = load_config(&fixtures().join("config.toml")).unwrap();
    assert_eq!(ctx.settings.ablation, AblationConfig::preset(11).unwrap());
    assert_eq!(ctx.settings.parallelism, 2);
    assert_eq!(ctx.translations.len(), 12);

    let dir = tempfile::tempdir().unwrap();
    let prices = fixtures().join("prices.toml");
    let write = |body: &str| {
        let p = dir.path().join("c.toml");
        fs::write(
            &p,
            format!("model = \"m\"\nprices = {:?}\n{body}", prices.to_str().unwrap()),
        )
        .unwrap();
        load_config(&p)
    };
    let c = write("[ablation]\npreset = 7\nreplan_enabled = false\nseeds = [4, 5]\nrepeats = 3\n").unwrap();
    let a = c.settings.ablation;
    assert_eq!(a.comments, CommentMode::Cn);
    assert!(!a.replan_enabled && a.assert_enabled);
    assert_eq!((a.seed_for(0), a.seed_for(1), a.seed_for(2)), (4, 5, 4));
    assert!(write("[ablation]\npreset = 12\n").is_err());
    assert!(write("[ablation]\nrepeats = 0\n").is_err());
    assert!(write("colour = 1\n").is_err());
}

#[test]
fn ablation_presets() {
    let rows = AblationConfig::ablation_rows();
    assert_eq!(rows.len(), 11);
    let nl: Vec<usize> = rows
        .iter()
        .filter(|(_, _, c)| c.format == PlanFormat::Nl)
        .map(|r| r.0)
        .collect();
    assert_eq!(nl, [1, 2]);
    let (_, label, row3) = &rows[2];
    assert_eq!(*label, "Code Only");
    assert!(!row3.assert_enabled && !row3.replan_enabled && row3.comments == CommentMode::None);
    assert_eq!(rows[6].2.comments, CommentMode::Cn);
    assert!(AblationConfig::preset(0).is_none());
}
