use super::*;
use alloc::vec;
use proptest::prelude::*;

const DOCS: [&str; 4] = [
    include_str!("../../../../fixtures/corpus/techcrunch-ai-chip.txt"),
    include_str!("../../../../fixtures/corpus/ai-chip-summary.txt"),
    include_str!("../../../../fixtures/corpus/gpu-supply.txt"),
    include_str!("../../../../fixtures/corpus/solar-basics.txt"),
];

const SUMMARY: &str = "https://example.org/ai-chip-summary";
const DEAD: &str = "https://techcrunch.com/example-ai-chip";

fn corpus() -> Corpus {
    Corpus::new(DOCS.iter().map(|d| Document::parse(d).unwrap()).collect()).unwrap()
}

#[test]
fn document_format() {
    let d = Document::parse(DOCS[0]).unwrap();
    assert_eq!(d.id, DEAD);
    assert!(d.unavailable);
    assert_eq!(d.paragraphs.len(), 3);
    assert_eq!(Document::parse(""), Err(CorpusError::MissingId));
    assert_eq!(Document::parse("x\n\n"), Err(CorpusError::Empty("x".into())));
    let dup = Document::parse(DOCS[1]).unwrap();
    assert_eq!(
        Corpus::new(vec![dup.clone(), dup]),
        Err(CorpusError::DuplicateId(SUMMARY.into()))
    );
}

#[test]
fn index_entries_occur_in_their_documents() {
    let c = corpus();
    for (w, ids) in c.index() {
        for id in ids {
            let d = c.document(id).unwrap();
            assert!(d.paragraphs.iter().any(|p| words(p).any(|x| &x == w)), "{w} in {id}");
        }
    }
}

#[test]
fn search_ranking() {
    let c = corpus();
    assert_eq!(search("AI chip market 2025 site:techcrunch.com", &c)[0].url, DEAD);
    assert_eq!(search("AI chip summary", &c)[0].url, SUMMARY);
    assert_eq!(search("AI chip growth driver", &c)[0].url, SUMMARY);
    assert_eq!(search("AI chip", &c)[0].url, SUMMARY);
    assert!(search("zebra xylophone", &c).is_empty());
    assert_eq!(
        search("AI chip summary", &c)[0].title,
        "AI chip summary: market overview for 2025."
    );
}

#[test]
fn visit_and_scroll() {
    let c = corpus();
    let mut s = BrowseSession::new();
    assert_eq!(s.page_down(&c), Err(ToolError::NoDocument));
    assert_eq!(s.visit(DEAD, &c), Err(ToolError::Failed(URL_FAILED.into())));
    assert_eq!(
        s.visit("https://nowhere", &c),
        Err(ToolError::Failed(URL_FAILED.into()))
    );
    s.visit(SUMMARY, &c).unwrap();
    assert_eq!(s.viewport(&c).unwrap(), 0..5);
    assert!(!s.contains("growth driver", &c).unwrap());
    s.page_down(&c).unwrap();
    assert_eq!(s.viewport(&c).unwrap(), 5..9);
    assert!(s.contains("Growth Driver", &c).unwrap());
    s.page_down(&c).unwrap();
    assert_eq!(s.viewport(&c).unwrap(), 5..9);
    assert_eq!(s.scroll_count, 2);
    s.page_up(&c).unwrap();
    s.page_up(&c).unwrap();
    assert_eq!(s.viewport(&c).unwrap(), 0..5);
    s.visit(SUMMARY, &c).unwrap();
    assert_eq!(s.scroll_count, 0);
}

#[test]
fn finder_and_inspect_yield_the_three_drivers() {
    let c = corpus();
    let mut s = BrowseSession::new();
    s.visit(SUMMARY, &c).unwrap();
    s.page_down(&c).unwrap();
    let paragraphs = s.finder("AI chip", &c).unwrap();
    assert_eq!(paragraphs.len(), 6);
    assert!(s.finder("zebra", &c).unwrap().is_empty());
    assert_eq!(s.finder("", &c).unwrap().len(), 9);
    let drivers = inspect(&paragraphs.join("\n\n"), "growth drivers", 3);
    assert_eq!(
        drivers,
        ["Edge computing boom", "National policy support", "Generative AI demand"]
    );
    assert!(inspect(&paragraphs.join("\n\n"), "zebra", 3).is_empty());
}

#[test]
fn wire_format() {
    let call = ToolCall::new("GoogleSearchTool").arg("query", "AI chip market 2025 site:techcrunch.com");
    let text = call.encode().unwrap();
    assert_eq!(
        text,
        r#"{"tool":"GoogleSearchTool","args":{"query":"AI chip market 2025 site:techcrunch.com"}}"#
    );
    assert_eq!(ToolCall::decode(&text).unwrap(), call);
    assert!(ToolCall::decode(r#"{"tool":"X","args":{},"extra":1}"#).is_err());
    assert!(ToolCall::decode(r#"{"tool":"X"}"#).is_err());
    assert!(ToolCall::decode(r#"{"tool":"X","args":{}} trailing"#).is_err());
    assert_eq!(
        ToolCall::decode(r#"{"tool":"X","args":{"a":[1]}}"#),
        Err(WireError::NonScalar("a".into()))
    );
    assert!(ToolCall::new("X").arg("a", Json::Null).encode().is_err());
}

#[test]
fn dispatch_checks_schema_first() {
    let c = corpus();
    let reg = ToolRegistry::browsing();
    let mut sb = Sandbox::new(&c);
    let err = sb
        .dispatch(&reg, &ToolCall::new("VisitTool").arg("url", 3))
        .unwrap_err();
    assert!(matches!(err, ToolError::Schema { .. }));
    let err = sb.dispatch(&reg, &ToolCall::new("VisitTool")).unwrap_err();
    assert!(matches!(err, ToolError::Schema { .. }));
    let err = sb
        .dispatch(&reg, &ToolCall::new("VisitTool").arg("url", SUMMARY).arg("x", 1))
        .unwrap_err();
    assert!(matches!(err, ToolError::Schema { .. }));
    assert_eq!(sb.session, BrowseSession::new());
    assert_eq!(
        sb.dispatch(&reg, &ToolCall::new("Nope")),
        Err(ToolError::UnknownTool("Nope".into()))
    );
    let hits = sb
        .dispatch(&reg, &ToolCall::new("GoogleSearchTool").arg("query", "AI chip summary"))
        .unwrap();
    assert_eq!(hits[0]["url"], SUMMARY);
    assert!(ToolRegistry::new(vec![reg.tools()[0].clone(), reg.tools()[0].clone()]).is_err());
}

/// Independent scorer: phrase hit, then overlap, then id.
fn brute_search(query: &str, c: &Corpus) -> Vec<String> {
    let lower = query.to_lowercase();
    let keys: Vec<String> = {
        let mut k: Vec<String> = lower
            .split(|ch: char| !ch.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect();
        k.sort();
        k.dedup();
        k
    };
    let mut rows = Vec::new();
    for d in c.documents() {
        let mut text = d.id.to_lowercase();
        for p in &d.paragraphs {
            text.push(' ');
            text.push_str(&p.to_lowercase());
        }
        let doc_words: Vec<&str> = text.split(|ch: char| !ch.is_alphanumeric()).collect();
        let overlap = keys.iter().filter(|k| doc_words.contains(&k.as_str())).count();
        if overlap == 0 {
            continue;
        }
        let phrase = lower.trim();
        let hit = !phrase.is_empty() && d.paragraphs.iter().any(|p| p.to_lowercase().contains(phrase));
        rows.push((if hit { 0 } else { 1 }, usize::MAX - overlap, d.id.clone()));
    }
    rows.sort();
    rows.into_iter().map(|r| r.2).collect()
}

fn brute_inspect(text: &str, focus: &str, n: usize) -> Vec<String> {
    let norm = |w: &str| {
        let w = w.to_lowercase();
        if w.chars().count() > 3 && w.ends_with('s') {
            w[..w.len() - 1].to_string()
        } else {
            w
        }
    };
    let keys: BTreeSet<String> = focus
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(norm)
        .collect();
    let mut pieces: Vec<(String, char)> = Vec::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        if ".!?;:".contains(ch) {
            pieces.push((text[start..i].trim().to_string(), ch));
            start = i + ch.len_utf8();
        }
    }
    pieces.push((text[start..].trim().to_string(), ' '));
    pieces.retain(|p| !p.0.is_empty());
    let mut best: Vec<(usize, usize, String)> = Vec::new();
    for (i, (s, end)) in pieces.iter().enumerate() {
        let ws: BTreeSet<String> = s
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(norm)
            .collect();
        let score = keys.intersection(&ws).count();
        if score > 0 {
            let snippet = if *end == ':' && i + 1 < pieces.len() {
                pieces[i + 1].0.clone()
            } else {
                s.clone()
            };
            best.push((score, i, snippet));
        }
    }
    best.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<String> = Vec::new();
    for (_, _, s) in best {
        if !out.contains(&s) && out.len() < n {
            out.push(s);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn search_matches_brute_force(q in proptest::collection::vec(proptest::sample::select(vec![
        "ai", "chip", "market", "2025", "growth", "driver", "solar", "silicon", "gpu", "supply", "zebra",
        "lead", "times", "example", "summary", "AI chip", "the",
    ]), 1..5)) {
        let query = q.join(" ");
        let c = corpus();
        let got: Vec<String> = search(&query, &c).into_iter().map(|h| h.url).collect();
        prop_assert_eq!(got, brute_search(&query, &c));
    }

    #[test]
    fn page_arithmetic(n in 0usize..3) {
        let c = corpus();
        let mut s = BrowseSession::new();
        s.visit(SUMMARY, &c).unwrap();
        let initial = s.viewport(&c).unwrap();
        for _ in 0..n { s.page_down(&c).unwrap(); }
        let len = c.document(SUMMARY).unwrap().paragraphs.len();
        let pages = len.div_ceil(PAGE_SIZE);
        prop_assert_eq!(s.viewport(&c).unwrap().start, PAGE_SIZE * n.min(pages - 1));
        for _ in 0..n { s.page_up(&c).unwrap(); }
        prop_assert_eq!(s.viewport(&c).unwrap(), initial);
        prop_assert_eq!(s.scroll_count, n);
    }

    #[test]
    fn finder_matches_filter(k in "[a-zA-Z ]{0,6}", doc in 1usize..4) {
        let c = corpus();
        let id = Document::parse(DOCS[doc]).unwrap().id;
        let mut s = BrowseSession::new();
        s.visit(&id, &c).unwrap();
        let want: Vec<String> = c.document(&id).unwrap().paragraphs.iter()
            .filter(|p| p.to_lowercase().contains(&k.to_lowercase())).cloned().collect();
        prop_assert_eq!(s.finder(&k, &c).unwrap(), want);
    }

    #[test]
    fn inspect_matches_brute_force(
        parts in proptest::collection::vec((proptest::collection::vec(proptest::sample::select(vec![
            "growth", "drivers", "driver", "edge", "boom", "policy", "demand", "is", "a", "chips",
        ]), 1..5), proptest::sample::select(vec![". ", ": ", "; ", "! ", " "])), 1..10),
        focus in proptest::sample::select(vec!["growth drivers", "chips", "policy demand", "zebra"]),
        n in 1usize..5,
    ) {
        let mut text = String::new();
        for (ws, sep) in &parts {
            text.push_str(&ws.join(" "));
            text.push_str(sep);
        }
        prop_assert_eq!(inspect(&text, focus, n), brute_inspect(&text, focus, n));
    }

    #[test]
    fn wire_round_trip(
        tool in proptest::sample::select(ToolRegistry::browsing().tools().iter().map(|t| t.name.clone()).collect::<Vec<_>>()),
        args in proptest::collection::btree_map("[a-z_]{1,8}", prop_oneof![
            ".{0,20}".prop_map(Json::from),
            any::<i64>().prop_map(Json::from),
            any::<bool>().prop_map(Json::from),
        ], 0..4),
    ) {
        let call = ToolCall { tool, args };
        let text = call.encode().unwrap();
        prop_assert_eq!(ToolCall::decode(&text).unwrap(), call);
    }
}
