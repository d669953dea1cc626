mod common;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rag3d::core::metrics::CompileOutcome;
use rag3d::core::Mode;
use rag3d::evaluation::{
    load_prompts, parse_prompts, run_eval, score_alignment, AlignmentScore, AlignmentScorer,
    EvalConfig, EvalError, EvalProgress, HttpScorer, ScorerError, CSV_HEADER, ITEMS_FILE,
    REPORT_CSV, REPORT_JSON, REPORT_TXT,
};
use rag3d::gateway::AttemptError;
use rag3d::session::{Pipeline, Stage};
use serde_json::json;

use common::{
    fenced, mock_gateway, pipeline, reply, sample_corpus, FakeRunner, HttpStub, StubReply,
};

const PROMPTS: &str = "{\"prompt_id\":\"p1\",\"text\":\"a wooden chair\"}\n{\"prompt_id\":\"p2\",\"text\":\"a tall floor lamp\",\"tags\":[\"ood\"]}\n";

struct FixedScorer {
    score: f64,
    calls: AtomicUsize,
}

impl FixedScorer {
    fn new(score: f64) -> Self {
        Self {
            score,
            calls: AtomicUsize::new(0),
        }
    }
}

impl AlignmentScorer for FixedScorer {
    fn score(&self, _: &str, png: &[u8]) -> Result<AlignmentScore, ScorerError> {
        assert!(png.starts_with(b"\x89PNG"));
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(AlignmentScore {
            score: self.score,
            scorer_id: "fixed-v1".into(),
        })
    }
}

struct DownScorer;

impl AlignmentScorer for DownScorer {
    fn score(&self, _: &str, _: &[u8]) -> Result<AlignmentScore, ScorerError> {
        Err(ScorerError::Unreachable("connection refused".into()))
    }
}

/// Valid script only when the prompt carries exemplars.
fn rag_only_pipeline(dir: &Path) -> Pipeline {
    let root = sample_corpus(dir);
    let gw = mock_gateway(|messages| {
        let user = &messages.last().unwrap().content;
        if user.contains("### Example 1") {
            reply(fenced("import bpy\nbpy.ops.mesh.primitive_cube_add()\n"))
        } else {
            reply(fenced("raise RuntimeError('no context')\n"))
        }
    });
    pipeline(&root, gw, Arc::new(FakeRunner::default()))
}

fn run(
    p: &Pipeline,
    scorer: Option<&dyn AlignmentScorer>,
    out: &Path,
) -> Result<rag3d::evaluation::EvalOutput, EvalError> {
    let prompts = parse_prompts(PROMPTS).unwrap();
    run_eval(
        p,
        scorer,
        &prompts,
        &["mock".into()],
        &EvalConfig::default(),
        out,
        &EvalProgress::default(),
    )
}

#[test]
fn fixed_scorer_and_valid_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let root = sample_corpus(dir.path());
    let p = pipeline(
        &root,
        mock_gateway(|_| reply(fenced("x = 1\n"))),
        Arc::new(FakeRunner::default()),
    );
    let scorer = FixedScorer::new(0.5);
    let out = dir.path().join("out");
    let output = run(&p, Some(&scorer), &out).unwrap();
    assert_eq!(output.items.len(), 4);
    assert_eq!(scorer.calls.load(Ordering::SeqCst), 4);
    let avg = &output.report.averages;
    for mode in [Mode::Base, Mode::Rag] {
        assert_eq!(avg[&mode].compilation_rate, Some(100.0));
        assert_eq!(avg[&mode].alignment_mean, Some(0.5));
    }
    assert_eq!(output.scorer_ids, ["fixed-v1"]);
    for name in [ITEMS_FILE, REPORT_JSON, REPORT_CSV, REPORT_TXT] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let item = &output.items[0];
    for rel in [
        &item.artifacts.prompt,
        &item.artifacts.script,
        &item.artifacts.render,
    ] {
        assert!(out.join(rel.as_ref().unwrap()).is_file());
    }
}

#[test]
fn condition_symmetry_isolates_retrieval_effect() {
    let dir = tempfile::tempdir().unwrap();
    let p = rag_only_pipeline(dir.path());
    let out = dir.path().join("out");
    let output = run(&p, None, &out).unwrap();
    let row = &output.report.rows[0];
    assert_eq!(row.cells[&Mode::Base].compilation_rate, Some(0.0));
    assert_eq!(row.cells[&Mode::Rag].compilation_rate, Some(100.0));
    for item in &output.items {
        let expect = if item.condition == Mode::Rag {
            CompileOutcome::Compiled
        } else {
            CompileOutcome::Failed
        };
        assert_eq!(item.outcome, expect);
    }
    let csv = fs::read_to_string(out.join(REPORT_CSV)).unwrap();
    assert_eq!(
        csv,
        format!("{CSV_HEADER}\nmock,0.0,100.0,,\nAverage,0.0,100.0,,\n")
    );
    assert!(output
        .annotations
        .iter()
        .any(|a| a.contains("no alignment scorer")));
    // Prompts differ only in the exemplar section.
    let base = fs::read_to_string(out.join("items/mock/base/p1/prompt.txt")).unwrap();
    let rag = fs::read_to_string(out.join("items/mock/rag/p1/prompt.txt")).unwrap();
    assert!(!base.contains("### Example"));
    assert!(rag.contains("### Example 3"));
    assert!(base.trim_end().ends_with("a wooden chair"));
    assert!(rag.trim_end().ends_with("a wooden chair"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scorer = FixedScorer::new(0.731);
    let outputs: Vec<_> = (0..2)
        .map(|i| {
            let p = rag_only_pipeline(&dir.path().join(format!("c{i}")));
            let out = dir.path().join(format!("run{i}"));
            run(&p, Some(&scorer), &out).unwrap();
            out
        })
        .collect();
    for name in [
        ITEMS_FILE,
        REPORT_JSON,
        REPORT_CSV,
        REPORT_TXT,
        "items/mock/rag/p2/prompt.txt",
    ] {
        assert_eq!(
            fs::read(outputs[0].join(name)).unwrap(),
            fs::read(outputs[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = rag_only_pipeline(dir.path());
    let prompts = parse_prompts(PROMPTS).unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let cfg = EvalConfig::default();
    run_eval(
        &p,
        None,
        &prompts,
        &["mock".into()],
        &cfg,
        &one,
        &EvalProgress::default(),
    )
    .unwrap();
    let cfg4 = EvalConfig {
        workers: 4,
        ..EvalConfig::default()
    };
    let progress = EvalProgress::default();
    run_eval(
        &p,
        None,
        &prompts,
        &["mock".into()],
        &cfg4,
        &four,
        &progress,
    )
    .unwrap();
    assert_eq!(progress.completed.load(Ordering::SeqCst), 4);
    assert_eq!(progress.total.load(Ordering::SeqCst), 4);
    assert_eq!(
        fs::read(one.join(REPORT_JSON)).unwrap(),
        fs::read(four.join(REPORT_JSON)).unwrap()
    );
}

#[test]
fn unreachable_scorer_drops_alignment_with_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let p = rag_only_pipeline(dir.path());
    let output = run(&p, Some(&DownScorer), &dir.path().join("out")).unwrap();
    assert!(output.items.iter().all(|i| i.alignment.is_none()));
    assert!(output.annotations.iter().any(|a| a.contains("unreachable")));
    assert_eq!(
        output.report.averages[&Mode::Rag].compilation_rate,
        Some(100.0)
    );
    assert_eq!(output.report.averages[&Mode::Rag].alignment_mean, None);
}

#[test]
fn provider_faults_are_excluded_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    let root = sample_corpus(dir.path());
    let p = pipeline(
        &root,
        mock_gateway(|messages| {
            if messages.last().unwrap().content.contains("lamp") {
                Err(AttemptError::Fatal {
                    status: Some(401),
                    body: "denied".into(),
                })
            } else {
                reply(fenced("x = 1\n"))
            }
        }),
        Arc::new(FakeRunner::default()),
    );
    let output = run(&p, None, &dir.path().join("out")).unwrap();
    let lamp: Vec<_> = output
        .items
        .iter()
        .filter(|i| i.prompt_id == "p2")
        .collect();
    assert!(lamp.iter().all(|i| i.outcome == CompileOutcome::Excluded));
    assert!(lamp
        .iter()
        .all(|i| i.failure_stage == Some(Stage::LlmFailed)));
    let cell = &output.report.rows[0].cells[&Mode::Base];
    assert_eq!(cell.compilation_rate, Some(100.0));
    assert_eq!((cell.n, cell.excluded), (1, 1));
}

#[test]
fn invalid_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = rag_only_pipeline(dir.path());
    let out = dir.path().join("out");
    let prompts = parse_prompts(PROMPTS).unwrap();
    let progress = EvalProgress::default();
    let cfg = EvalConfig::default();
    assert!(matches!(
        run_eval(&p, None, &[], &["mock".into()], &cfg, &out, &progress),
        Err(EvalError::EmptyPromptSet)
    ));
    assert!(matches!(
        run_eval(&p, None, &prompts, &[], &cfg, &out, &progress),
        Err(EvalError::NoProviders)
    ));
    let none = EvalConfig {
        conditions: vec![],
        ..EvalConfig::default()
    };
    assert!(matches!(
        run_eval(&p, None, &prompts, &["mock".into()], &none, &out, &progress),
        Err(EvalError::NoConditions)
    ));
    assert!(matches!(
        run_eval(&p, None, &prompts, &["ghost".into()], &cfg, &out, &progress),
        Err(EvalError::Gateway(_))
    ));
    assert!(matches!(
        parse_prompts("{\"prompt_id\":\"a\",\"text\":\"x\"}\n{\"prompt_id\":\"a\",\"text\":\"y\"}"),
        Err(EvalError::DuplicatePromptId(_))
    ));
    assert!(matches!(
        parse_prompts("not json"),
        Err(EvalError::PromptLine { line: 1, .. })
    ));
    assert!(load_prompts(&dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn http_scorer_wire_and_clamping() {
    let stub = HttpStub::start(|_, req| {
        let body = req.json();
        assert_eq!(body["text"], "a cube");
        assert!(body["image_b64"].as_str().unwrap().starts_with("iVBOR"));
        StubReply::json(200, json!({"score": 1.2, "scorer_id": "clip-test"}))
    });
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("r.png");
    fs::write(&img, rag3d::corpus_io::sample::placeholder_png("x", 4)).unwrap();
    let scorer = HttpScorer::new(stub.url("/score"), std::time::Duration::from_secs(5));
    let s = score_alignment(&scorer, "a cube", &img).unwrap();
    assert_eq!(s.score, 1.0);
    assert_eq!(s.clamped_from, Some(1.2));
    assert_eq!(s.scorer_id, "clip-test");
}

#[test]
fn missing_image_never_reaches_the_scorer() {
    let stub =
        HttpStub::start(|_, _| StubReply::json(200, json!({"score": 0.5, "scorer_id": "x"})));
    let scorer = HttpScorer::new(stub.url("/score"), std::time::Duration::from_secs(5));
    let err = score_alignment(&scorer, "a", Path::new("/nonexistent/render.png")).unwrap_err();
    assert!(matches!(err, ScorerError::MissingImage(_)));
    assert!(stub.recorded().is_empty());
}

#[test]
fn scorer_server_errors_count_as_unreachable() {
    let stub = HttpStub::start(|_, _| StubReply::json(503, json!({})));
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("r.png");
    fs::write(&img, b"\x89PNG").unwrap();
    let scorer = HttpScorer::new(stub.url("/score"), std::time::Duration::from_secs(5));
    assert!(matches!(
        score_alignment(&scorer, "a", &img),
        Err(ScorerError::Unreachable(_))
    ));
}
